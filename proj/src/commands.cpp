#include "fbc/commands.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "fbc/checkpoint.hpp"
#include "fbc/datasets.hpp"
#include "fbc/evaluation.hpp"

namespace fbc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << text;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ------------------------------------------------------------- dataset access

struct Dataset {
    std::string kind;  // "tabular" | "images"
    LabeledBatch all;
    int d_x = 0;        // flat feature width (tabular)
    int resolution = 0;  // images
};

Dataset load_dataset(const std::string& data_dir) {
    Dataset ds;
    fs::path dir(data_dir);
    if (fs::exists(dir / "data.csv")) {
        TabularSchema schema = TabularSchema::from_json_file((dir / "schema.json").string());
        // raw load only; splitting happens by the model's split spec later
        TabularData td = load_tabular_csv((dir / "data.csv").string(), schema, SplitSpec{});
        ds.kind = "tabular";
        ds.all = std::move(td.all);
        ds.d_x = ds.all.X.shape[1];
        return ds;
    }
    if (fs::exists(dir / "images.fbci")) {
        ds.kind = "images";
        ds.all.X = read_image_pack((dir / "images.fbci").string());
        ds.resolution = ds.all.X.shape[2];
        // index.csv: s,y per image
        std::string text = read_text((dir / "index.csv").string());
        std::istringstream lines(text);
        std::string line;
        std::getline(lines, line);  // header
        int max_s = 0;
        while (std::getline(lines, line)) {
            if (line.empty()) continue;
            size_t comma = line.find(',');
            if (comma == std::string::npos) throw std::runtime_error("index.csv: malformed row '" + line + "'");
            int s = std::stoi(line.substr(0, comma));
            int y = std::stoi(line.substr(comma + 1));
            ds.all.S.push_back(s);
            ds.all.Y.push_back(y);
            max_s = std::max(max_s, s);
        }
        ds.all.d_s = max_s + 1;
        if (static_cast<int>(ds.all.S.size()) != ds.all.X.shape[0])
            throw std::runtime_error("index.csv row count does not match the image pack");
        return ds;
    }
    throw std::runtime_error("no dataset found under '" + data_dir +
                             "' (expected data.csv+schema.json or images.fbci+index.csv)");
}

FbcConfig resolve_train_config(const TrainArgs& args, const Dataset& ds) {
    FbcConfig cfg;
    if (!args.config_path.empty()) {
        cfg = FbcConfig::from_json_text(read_text(args.config_path));
    } else if (ds.kind == "images") {
        cfg = make_dsprites_config(ds.resolution);
        cfg.iterations = 2000;  // desk-scale default; paper scale via --steps or a config file
    } else {
        int m = args.code_bits > 0 ? args.code_bits : 10;
        cfg = make_synthetic_config(ds.d_x, ds.all.d_s, m);
    }
    cfg.method = args.method;
    cfg.beta = args.beta;
    cfg.seed = args.seed;
    if (args.steps > 0) cfg.iterations = args.steps;
    if (args.lr > 0) cfg.lr = args.lr;
    if (args.code_bits > 0 && args.config_path.empty() && ds.kind == "tabular" && cfg.dataset == "synthetic")
        cfg.code_bits = args.code_bits;
    cfg.entropy.code_bits = cfg.code_bits;
    return cfg;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "step,loss,distortion,rate\n";
    for (const auto& r : trace)
        out << r.step << "," << fmt17(r.loss) << "," << fmt17(r.distortion) << "," << fmt17(r.rate)
            << "\n";
}

struct ProbeOutcome {
    json metrics;
    double rate = 0.0, distortion = 0.0, a_s = 0.0, a_y = 0.0;
};

// Shared by cmd_probe and the sweep: loads the model, splits the data
// with the model's own split spec, trains the probe set, and assembles
// the metrics document.
ProbeOutcome run_probes(const std::string& checkpoint_path, const std::string& data_dir,
                        uint64_t probe_seed) {
    Checkpoint ck = read_checkpoint(checkpoint_path);
    Dataset ds = load_dataset(data_dir);
    ThreeWaySplit sp = split(ds.all, ck.config.split);

    Tensor reps_train, reps_eval;
    LossParts parts;
    if (ck.config.method == "fbc") {
        FbcModel model = load_fbc_model(ck);
        reps_train = model.codes(sp.probe_train.X);
        reps_eval = model.codes(sp.probe_eval.X);
        parts = model.loss(sp.probe_eval);
    } else {
        BvaeModel model = load_bvae_model(ck);
        reps_train = model.posterior_mean(sp.probe_train.X);
        reps_eval = model.posterior_mean(sp.probe_eval.X);
        parts = model.loss(sp.probe_eval);
    }

    ProbeOutcome out;
    out.rate = parts.rate;
    out.distortion = parts.distortion;

    double chance_s = chance_level(sp.probe_eval.S);
    out.a_s = auditor_accuracy(reps_train, sp.probe_train.S, reps_eval, sp.probe_eval.S,
                               default_probe_specs(probe_seed));
    out.metrics["a_s"] = out.a_s;
    out.metrics["chance_s"] = chance_s;
    out.metrics["rate"] = parts.rate;
    out.metrics["distortion"] = parts.distortion;

    if (sp.probe_train.has_y()) {
        ProbeResult best;
        double best_acc = -1.0;
        for (const auto& spec : default_probe_specs(probe_seed + 100)) {
            ProbeResult r =
                train_probe(reps_train, sp.probe_train.Y, reps_eval, sp.probe_eval.Y, spec);
            if (r.accuracy > best_acc) {
                best_acc = r.accuracy;
                best = std::move(r);
            }
        }
        out.a_y = best_acc;
        out.metrics["a_y"] = best_acc;
        out.metrics["chance_y"] = chance_level(sp.probe_eval.Y);
        bool y_binary = true;
        for (int y : ds.all.Y)
            if (y != 0 && y != 1) y_binary = false;
        if (y_binary) {
            std::vector<std::string> warnings;
            out.metrics["delta"] =
                demographic_disparity(best.eval_predictions, sp.probe_eval.S, ds.all.d_s, &warnings);
            out.metrics["delta_fpr"] =
                delta_fpr(best.eval_predictions, sp.probe_eval.Y, sp.probe_eval.S, ds.all.d_s, &warnings);
            if (!warnings.empty()) out.metrics["warnings"] = warnings;
        } else {
            out.metrics["delta"] = nullptr;
            out.metrics["delta_fpr"] = nullptr;
        }
    } else {
        out.metrics["a_y"] = nullptr;
        out.metrics["chance_y"] = nullptr;
        out.metrics["delta"] = nullptr;
        out.metrics["delta_fpr"] = nullptr;
    }

    // embedding homogeneity between the first two sensitive categories
    std::vector<int> group_a, group_b;
    for (int i = 0; i < sp.probe_eval.size(); ++i) {
        if (sp.probe_eval.S[static_cast<size_t>(i)] == 0) group_a.push_back(i);
        if (sp.probe_eval.S[static_cast<size_t>(i)] == 1) group_b.push_back(i);
    }
    out.metrics["homogeneity"] = nullptr;
    if (!group_a.empty() && static_cast<int>(group_b.size()) >= 10) {
        try {
            out.metrics["homogeneity"] = homogeneity(reps_eval, group_a, group_b, 10);
        } catch (const std::invalid_argument&) {
            // degenerate embedding (e.g. a fully collapsed code); leave null
        }
    }
    return out;
}

}  // namespace

// ------------------------------------------------------------------ gen-data

int cmd_gen_data(const GenDataArgs& args) {
    fs::create_directories(args.out_dir);
    fs::path dir(args.out_dir);
    json resolved = {{"command", "gen-data"}, {"kind", args.kind},     {"n", args.n},
                     {"seed", args.seed},     {"out", args.out_dir}};
    if (args.kind == "synthetic-tabular") {
        resolved["d_x"] = args.d_x;
        resolved["d_s"] = args.d_s;
        resolved["rho"] = args.rho;
        SyntheticTabular st = make_synthetic_unfair_tabular(args.n, args.d_x, args.d_s, args.rho, args.seed);
        write_tabular_csv((dir / "data.csv").string(), st.batch);
        TabularSchema schema;
        for (int j = 0; j < args.d_x; ++j) schema.features.push_back({"x" + std::to_string(j), false});
        schema.sensitive = {"s"};
        schema.label = "y";
        write_text((dir / "schema.json").string(), schema.to_json_text());
    } else if (args.kind == "dsprites-unfair") {
        resolved["res"] = args.resolution;
        LabeledBatch batch = sample_dsprites_unfair(args.n, args.resolution, args.seed);
        write_image_pack((dir / "images.fbci").string(), batch.X);
        std::ofstream idx(dir / "index.csv", std::ios::binary);
        idx << "s,y\n";
        for (int i = 0; i < batch.size(); ++i)
            idx << batch.S[static_cast<size_t>(i)] << "," << batch.Y[static_cast<size_t>(i)] << "\n";
    } else {
        throw std::invalid_argument("gen-data: unknown kind '" + args.kind +
                                    "' (expected synthetic-tabular or dsprites-unfair)");
    }
    write_text((dir / "resolved_config.json").string(), resolved.dump(2) + "\n");
    return 0;
}

// --------------------------------------------------------------------- train

int cmd_train(const TrainArgs& args) {
    Dataset ds = load_dataset(args.data_dir);
    FbcConfig cfg = resolve_train_config(args, ds);
    fs::create_directories(args.out_dir);
    fs::path dir(args.out_dir);
    write_text((dir / "resolved_config.json").string(), cfg.to_json_text() + "\n");

    ThreeWaySplit sp = split(ds.all, cfg.split);
    int diverged_at = -1;
    if (cfg.method == "bvae") {
        BvaeModel model = train_bvae(cfg, sp.train);
        save_model((dir / "checkpoint.fbck").string(), model);
        write_trace_csv((dir / "trace.csv").string(), model.trace);
        diverged_at = model.diverged_at;
    } else {
        FbcModel model = train_fbc(cfg, sp.train);
        save_model((dir / "checkpoint.fbck").string(), model);
        write_trace_csv((dir / "trace.csv").string(), model.trace);
        diverged_at = model.diverged_at;
    }
    if (diverged_at >= 0) {
        std::cerr << "train: loss became non-finite at step " << diverged_at
                  << "; wrote the last finite state\n";
        return 1;
    }
    return 0;
}

// --------------------------------------------------------------------- probe

int cmd_probe(const ProbeArgs& args) {
    if (!fs::exists(args.checkpoint))
        throw std::runtime_error("probe: checkpoint '" + args.checkpoint + "' does not exist");
    ProbeOutcome out = run_probes(args.checkpoint, args.data_dir, args.seed);
    fs::create_directories(args.out_dir);
    fs::path dir(args.out_dir);
    json resolved = {{"command", "probe"},
                     {"checkpoint", args.checkpoint},
                     {"data", args.data_dir},
                     {"seed", args.seed}};
    write_text((dir / "resolved_config.json").string(), resolved.dump(2) + "\n");
    write_text((dir / "metrics.json").string(), out.metrics.dump(2) + "\n");
    return 0;
}

// --------------------------------------------------------------------- sweep

namespace {

struct SweepRun {
    std::string method;
    double beta = 0.0;
    int seed_index = 0;
    uint64_t train_seed = 0;
    std::string run_dir;
};

std::string run_tag(const SweepRun& r) {
    std::ostringstream os;
    os << r.method << "_b" << r.beta << "_s" << r.seed_index;
    return os.str();
}

}  // namespace

int cmd_sweep(const SweepArgs& args) {
    Dataset probe_ds = load_dataset(args.data_dir);  // validates early
    (void)probe_ds;
    fs::create_directories(args.out_dir);
    fs::path dir(args.out_dir);

    std::vector<SweepRun> runs;
    for (const auto& method : args.methods)
        for (double beta : args.betas)
            for (int si = 0; si < args.seeds; ++si) {
                SweepRun r;
                r.method = method;
                r.beta = beta;
                r.seed_index = si;
                r.train_seed = args.seed + static_cast<uint64_t>(si);
                r.run_dir = (dir / "runs" / run_tag(r)).string();
                runs.push_back(r);
            }

    json resolved = {{"command", "sweep"},     {"methods", args.methods}, {"betas", args.betas},
                     {"seeds", args.seeds},    {"steps", args.steps},     {"jobs", args.jobs},
                     {"seed", args.seed},      {"data", args.data_dir},   {"bin_width", args.bin_width},
                     {"runs", runs.size()}};
    write_text((dir / "resolved_config.json").string(), resolved.dump(2) + "\n");

    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= runs.size()) return;
            const SweepRun& r = runs[i];
            fs::create_directories(r.run_dir);
            fs::path rdir(r.run_dir);
            if (fs::exists(rdir / "record.json")) continue;  // resume: already complete
            try {
                TrainArgs ta;
                ta.method = r.method;
                ta.data_dir = args.data_dir;
                ta.out_dir = r.run_dir;
                ta.beta = r.beta;
                ta.steps = args.steps;
                ta.seed = r.train_seed;
                if (cmd_train(ta) != 0) throw std::runtime_error("training diverged");
                ProbeOutcome po =
                    run_probes((rdir / "checkpoint.fbck").string(), args.data_dir, args.probe_seed);
                write_text((rdir / "metrics.json").string(), po.metrics.dump(2) + "\n");
                json record = {{"method", r.method},   {"beta", r.beta},
                               {"seed", r.seed_index}, {"rate", po.rate},
                               {"distortion", po.distortion}, {"a_s", po.a_s},
                               {"a_y", po.metrics["a_y"].is_null() ? 0.0 : po.a_y}};
                write_text((rdir / "record.json").string(), record.dump(2) + "\n");
            } catch (const std::exception& e) {
                write_text((rdir / "error.txt").string(), std::string(e.what()) + "\n");
            }
        }
    };
    int jobs = std::max(1, args.jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // aggregate completed runs in grid order
    std::vector<SweepRecord> records;
    int failures = 0;
    for (const auto& r : runs) {
        fs::path rec = fs::path(r.run_dir) / "record.json";
        if (!fs::exists(rec)) {
            ++failures;
            continue;
        }
        json j = json::parse(read_text(rec.string()));
        SweepRecord sr;
        sr.method = j.at("method").get<std::string>();
        sr.beta = j.at("beta").get<double>();
        sr.seed = j.at("seed").get<uint64_t>();
        sr.rate = j.at("rate").get<double>();
        sr.distortion = j.at("distortion").get<double>();
        sr.a_s = j.at("a_s").get<double>();
        sr.a_y = j.at("a_y").get<double>();
        records.push_back(sr);
    }

    std::ofstream rc(dir / "records.csv", std::ios::binary);
    rc << "method,beta,seed,rate,distortion,a_s,a_y\n";
    json records_json = json::array();
    for (const auto& r : records) {
        rc << r.method << "," << fmt17(r.beta) << "," << r.seed << "," << fmt17(r.rate) << ","
           << fmt17(r.distortion) << "," << fmt17(r.a_s) << "," << fmt17(r.a_y) << "\n";
        records_json.push_back({{"method", r.method},
                                {"beta", r.beta},
                                {"seed", r.seed},
                                {"rate", r.rate},
                                {"distortion", r.distortion},
                                {"a_s", r.a_s},
                                {"a_y", r.a_y}});
    }
    rc.close();
    write_text((dir / "records.json").string(), records_json.dump(2) + "\n");

    // derived curves, one block per method
    std::ofstream pf(dir / "pareto.csv", std::ios::binary);
    pf << "method,a_s_lo,a_s_hi,a_y_q75,count\n";
    std::ofstream rd(dir / "rd.csv", std::ios::binary);
    rd << "method,distortion,min_rate\n";
    std::ofstream rf(dir / "rf.csv", std::ios::binary);
    rf << "method,delta,max_rate\n";
    json curves;
    for (const auto& method : args.methods) {
        std::vector<SweepRecord> mine;
        for (const auto& r : records)
            if (r.method == method) mine.push_back(r);
        if (mine.empty()) continue;
        ParetoFront front = pareto_front(mine, args.bin_width);
        for (const auto& b : front.bins) {
            pf << method << "," << fmt17(b.lo) << "," << fmt17(b.hi) << "," << fmt17(b.a_y_q75) << ","
               << b.count << "\n";
            curves[method]["pareto"].push_back(
                {{"a_s_lo", b.lo}, {"a_s_hi", b.hi}, {"a_y_q75", b.a_y_q75}, {"count", b.count}});
        }
        for (const auto& [d, rate] : rd_curve(mine)) {
            rd << method << "," << fmt17(d) << "," << fmt17(rate) << "\n";
            curves[method]["rd"].push_back({{"distortion", d}, {"min_rate", rate}});
        }
        for (const auto& [delta, rate] : rf_curve(mine)) {
            rf << method << "," << fmt17(delta) << "," << fmt17(rate) << "\n";
            curves[method]["rf"].push_back({{"delta", delta}, {"max_rate", rate}});
        }
    }
    write_text((dir / "curves.json").string(), curves.dump(2) + "\n");

    if (failures > 0)
        std::cerr << "sweep: " << failures << " of " << runs.size()
                  << " runs failed; see runs/*/error.txt\n";
    return 0;
}

// --------------------------------------------------------- export-embeddings

int cmd_export_embeddings(const ExportArgs& args) {
    if (!fs::exists(args.checkpoint))
        throw std::runtime_error("export-embeddings: checkpoint '" + args.checkpoint + "' does not exist");
    Checkpoint ck = read_checkpoint(args.checkpoint);
    Dataset ds = load_dataset(args.data_dir);
    Tensor reps;
    if (ck.config.method == "fbc") {
        FbcModel model = load_fbc_model(ck);
        reps = model.codes(ds.all.X);
    } else {
        BvaeModel model = load_bvae_model(ck);
        reps = model.posterior_mean(ds.all.X);
    }
    fs::create_directories(args.out_dir);
    fs::path dir(args.out_dir);
    std::ofstream out(dir / "embeddings.csv", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write embeddings.csv");
    int m = reps.shape[1];
    out << "id";
    for (int j = 0; j < m; ++j) out << ",z" << j;
    out << ",s";
    if (ds.all.has_y()) out << ",y";
    out << "\n";
    for (int i = 0; i < reps.shape[0]; ++i) {
        out << i;
        for (int j = 0; j < m; ++j) out << "," << fmt17(reps.at2(i, j));
        out << "," << ds.all.S[static_cast<size_t>(i)];
        if (ds.all.has_y()) out << "," << ds.all.Y[static_cast<size_t>(i)];
        out << "\n";
    }
    json resolved = {{"command", "export-embeddings"},
                     {"checkpoint", args.checkpoint},
                     {"data", args.data_dir}};
    write_text((dir / "resolved_config.json").string(), resolved.dump(2) + "\n");
    return 0;
}

}  // namespace fbc
