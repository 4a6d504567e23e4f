#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "fbc/evaluation.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* kCli = FBC_CLI_PATH;

int run_cli(const std::string& args) {
    std::string cmd = std::string(kCli) + " " + args + " >/dev/null 2>&1";
    int ret = std::system(cmd.c_str());
    return WEXITSTATUS(ret);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("fbc_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

}  // namespace

TEST_CASE("gen-data is byte-deterministic per seed") {
    fs::path dir = temp_dir("gen");
    REQUIRE(run_cli("gen-data --kind synthetic-tabular --n 500 --seed 7 --out " +
                    (dir / "a").string()) == 0);
    REQUIRE(run_cli("gen-data --kind synthetic-tabular --n 500 --seed 7 --out " +
                    (dir / "b").string()) == 0);
    CHECK(slurp(dir / "a" / "data.csv") == slurp(dir / "b" / "data.csv"));
    CHECK(slurp(dir / "a" / "schema.json") == slurp(dir / "b" / "schema.json"));
    REQUIRE(run_cli("gen-data --kind synthetic-tabular --n 500 --seed 8 --out " +
                    (dir / "c").string()) == 0);
    CHECK(slurp(dir / "a" / "data.csv") != slurp(dir / "c" / "data.csv"));
}

TEST_CASE("gen-data writes dsprites image packs with an index") {
    fs::path dir = temp_dir("ds");
    REQUIRE(run_cli("gen-data --kind dsprites-unfair --n 300 --res 16 --seed 3 --out " +
                    dir.string()) == 0);
    std::string pack = slurp(dir / "images.fbci");
    CHECK(pack.size() == 12 + 300 * 16 * 16);
    CHECK(pack.substr(0, 4) == "FBCI");
    CHECK(count_lines(slurp(dir / "index.csv")) == 301);  // header + rows
    CHECK(fs::exists(dir / "resolved_config.json"));
}

TEST_CASE("usage errors exit with code 2") {
    fs::path dir = temp_dir("usage");
    CHECK(run_cli("gen-data --out " + dir.string()) == 2);       // missing --kind
    CHECK(run_cli("train --data nowhere") == 2);                 // missing --out
    CHECK(run_cli("nonsense") == 2);
    CHECK(run_cli("train --method vae --data x --out y") == 2);  // bad method value
}

TEST_CASE("train writes checkpoint, trace, and resolved config; deterministic per seed") {
    fs::path dir = temp_dir("train");
    REQUIRE(run_cli("gen-data --kind synthetic-tabular --n 1200 --seed 5 --out " +
                    (dir / "data").string()) == 0);
    std::string common = "train --method fbc --data " + (dir / "data").string() +
                         " --beta 0.5 --steps 200 --seed 11 --out ";
    REQUIRE(run_cli(common + (dir / "r1").string()) == 0);
    REQUIRE(run_cli(common + (dir / "r2").string()) == 0);

    std::string trace = slurp(dir / "r1" / "trace.csv");
    CHECK(count_lines(trace) == 201);  // header + one row per step
    CHECK(trace.substr(0, 25) == "step,loss,distortion,rate");
    CHECK(slurp(dir / "r1" / "checkpoint.fbck") == slurp(dir / "r2" / "checkpoint.fbck"));
    CHECK(slurp(dir / "r1" / "trace.csv") == slurp(dir / "r2" / "trace.csv"));
    CHECK(fs::exists(dir / "r1" / "resolved_config.json"));

    // a different seed changes the artifacts
    REQUIRE(run_cli("train --method fbc --data " + (dir / "data").string() +
                    " --beta 0.5 --steps 200 --seed 12 --out " + (dir / "r3").string()) == 0);
    CHECK(slurp(dir / "r1" / "checkpoint.fbck") != slurp(dir / "r3" / "checkpoint.fbck"));
}

TEST_CASE("bvae training emits the kl-rate column") {
    fs::path dir = temp_dir("bvae");
    REQUIRE(run_cli("gen-data --kind synthetic-tabular --n 1000 --seed 6 --out " +
                    (dir / "data").string()) == 0);
    REQUIRE(run_cli("train --method bvae --data " + (dir / "data").string() +
                    " --beta 4 --steps 150 --seed 2 --out " + (dir / "run").string()) == 0);
    std::string trace = slurp(dir / "run" / "trace.csv");
    CHECK(count_lines(trace) == 151);
    // rate column present and finite-positive early in training
    std::istringstream lines(trace);
    std::string line;
    std::getline(lines, line);
    std::getline(lines, line);
    double rate = std::stod(line.substr(line.rfind(',') + 1));
    CHECK(rate > 0.0);
    json cfg = json::parse(slurp(dir / "run" / "resolved_config.json"));
    CHECK(cfg.at("method") == "bvae");
}

TEST_CASE("probe writes the metrics document and repeats identically") {
    fs::path dir = temp_dir("probe");
    REQUIRE(run_cli("gen-data --kind synthetic-tabular --n 1500 --seed 9 --out " +
                    (dir / "data").string()) == 0);
    REQUIRE(run_cli("train --method fbc --data " + (dir / "data").string() +
                    " --beta 0 --steps 250 --seed 3 --out " + (dir / "run").string()) == 0);
    std::string probe = "probe --checkpoint " + (dir / "run" / "checkpoint.fbck").string() +
                        " --data " + (dir / "data").string() + " --seed 4 --out ";
    REQUIRE(run_cli(probe + (dir / "p1").string()) == 0);
    REQUIRE(run_cli(probe + (dir / "p2").string()) == 0);
    json m = json::parse(slurp(dir / "p1" / "metrics.json"));
    for (const char* key :
         {"a_s", "a_y", "chance_s", "chance_y", "delta", "delta_fpr", "homogeneity"})
        CHECK(m.contains(key));
    CHECK(m["a_s"].get<double>() >= 0.0);
    CHECK(m["a_s"].get<double>() <= 1.0);
    CHECK(slurp(dir / "p1" / "metrics.json") == slurp(dir / "p2" / "metrics.json"));

    // missing checkpoint: runtime failure with exit code 1
    CHECK(run_cli("probe --checkpoint " + (dir / "nope.fbck").string() + " --data " +
                  (dir / "data").string() + " --out " + (dir / "p3").string()) == 1);
}

TEST_CASE("probe on an untrained model scores near chance on uninformative data") {
    fs::path dir = temp_dir("chance");
    // features carry no signal about y or s: generate with rho 0, then train 1 step
    REQUIRE(run_cli("gen-data --kind synthetic-tabular --n 1500 --d-x 6 --d-s 3 --rho 0 --seed 13 "
                    "--out " + (dir / "data").string()) == 0);
    REQUIRE(run_cli("train --method fbc --data " + (dir / "data").string() +
                    " --beta 0 --steps 1 --seed 1 --code-bits 8 --out " + (dir / "run").string()) == 0);
    REQUIRE(run_cli("probe --checkpoint " + (dir / "run" / "checkpoint.fbck").string() + " --data " +
                    (dir / "data").string() + " --seed 2 --out " + (dir / "p").string()) == 0);
    json m = json::parse(slurp(dir / "p" / "metrics.json"));
    double a_s = m["a_s"].get<double>();
    double chance_s = m["chance_s"].get<double>();
    CHECK(std::abs(a_s - chance_s) < 0.1);
}

TEST_CASE("export-embeddings emits one row per sample with binary codes") {
    fs::path dir = temp_dir("export");
    REQUIRE(run_cli("gen-data --kind synthetic-tabular --n 400 --seed 21 --out " +
                    (dir / "data").string()) == 0);
    REQUIRE(run_cli("train --method fbc --data " + (dir / "data").string() +
                    " --beta 0.25 --steps 120 --seed 5 --out " + (dir / "run").string()) == 0);
    REQUIRE(run_cli("export-embeddings --checkpoint " + (dir / "run" / "checkpoint.fbck").string() +
                    " --data " + (dir / "data").string() + " --out " + (dir / "emb").string()) == 0);
    std::string csv = slurp(dir / "emb" / "embeddings.csv");
    CHECK(count_lines(csv) == 401);
    std::istringstream lines(csv);
    std::string header;
    std::getline(lines, header);
    CHECK(header == "id,z0,z1,z2,z3,z4,z5,z6,z7,z8,z9,s,y");
    std::string row;
    while (std::getline(lines, row)) {
        size_t first = row.find(',');
        size_t last = row.rfind(',');
        size_t second_last = row.rfind(',', last - 1);
        std::string bits = row.substr(first + 1, second_last - first - 1);
        std::istringstream cells(bits);
        std::string cell;
        while (std::getline(cells, cell, ',')) CHECK((cell == "0" || cell == "1"));
    }
}

TEST_CASE("sweep produces records and curves consistent with the library") {
    fs::path dir = temp_dir("sweep");
    REQUIRE(run_cli("gen-data --kind synthetic-tabular --n 1500 --seed 31 --out " +
                    (dir / "data").string()) == 0);
    REQUIRE(run_cli("sweep --methods fbc --betas 0,0.5,1 --seeds 2 --steps 150 --jobs 2 --data " +
                    (dir / "data").string() + " --out " + (dir / "sw").string()) == 0);
    std::string records = slurp(dir / "sw" / "records.csv");
    CHECK(count_lines(records) == 7);  // header + 3 betas x 2 seeds
    CHECK(records.substr(0, 42) == "method,beta,seed,rate,distortion,a_s,a_y\n");

    // pareto.csv consistent with recomputing from the records
    std::vector<fbc::SweepRecord> rs;
    std::istringstream lines(records);
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
        fbc::SweepRecord r;
        std::istringstream cells(line);
        std::string cell;
        std::getline(cells, r.method, ',');
        std::getline(cells, cell, ',');
        r.beta = std::stod(cell);
        std::getline(cells, cell, ',');
        r.seed = std::stoull(cell);
        std::getline(cells, cell, ',');
        r.rate = std::stod(cell);
        std::getline(cells, cell, ',');
        r.distortion = std::stod(cell);
        std::getline(cells, cell, ',');
        r.a_s = std::stod(cell);
        std::getline(cells, cell, ',');
        r.a_y = std::stod(cell);
        rs.push_back(r);
    }
    REQUIRE(rs.size() == 6);
    fbc::ParetoFront pf = fbc::pareto_front(rs, 0.02);
    std::string pareto = slurp(dir / "sw" / "pareto.csv");
    CHECK(count_lines(pareto) == 1 + static_cast<int>(pf.bins.size()));
    {
        std::istringstream plines(pareto);
        std::string pline;
        std::getline(plines, pline);  // header
        size_t bi = 0;
        while (std::getline(plines, pline)) {
            REQUIRE(bi < pf.bins.size());
            std::istringstream cells(pline);
            std::string cell;
            std::getline(cells, cell, ',');  // method
            std::getline(cells, cell, ',');
            CHECK(std::stod(cell) == doctest::Approx(pf.bins[bi].lo).epsilon(1e-12));
            std::getline(cells, cell, ',');  // hi
            std::getline(cells, cell, ',');
            CHECK(std::stod(cell) == doctest::Approx(pf.bins[bi].a_y_q75).epsilon(1e-12));
            ++bi;
        }
    }

    // resume: completed runs are skipped, missing ones are filled in
    fs::path marker = dir / "sw" / "runs" / "fbc_b0_s0" / "record.json";
    std::string kept = slurp(marker);
    fs::remove(dir / "sw" / "runs" / "fbc_b1_s1" / "record.json");
    std::string sentinel = "sentinel";
    std::ofstream(dir / "sw" / "runs" / "fbc_b0_s0" / "sentinel.txt") << sentinel;
    REQUIRE(run_cli("sweep --methods fbc --betas 0,0.5,1 --seeds 2 --steps 150 --jobs 1 --data " +
                    (dir / "data").string() + " --out " + (dir / "sw").string()) == 0);
    CHECK(fs::exists(dir / "sw" / "runs" / "fbc_b0_s0" / "sentinel.txt"));  // not retrained
    CHECK(slurp(marker) == kept);
    CHECK(fs::exists(dir / "sw" / "runs" / "fbc_b1_s1" / "record.json"));   // re-filled
}
