#include "fbc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace fbc {

std::vector<ProbeSpec> default_probe_specs(uint64_t base_seed) {
    std::vector<ProbeSpec> specs(3);
    specs[0] = ProbeSpec{64, 2, 2000, 1e-3, base_seed};
    specs[1] = ProbeSpec{128, 2, 2000, 1e-3, base_seed + 1};
    specs[2] = ProbeSpec{256, 3, 2000, 1e-3, base_seed + 2};
    return specs;
}

ProbeResult train_probe(const Tensor& reps_train, const std::vector<int>& targets_train,
                        const Tensor& reps_eval, const std::vector<int>& targets_eval,
                        const ProbeSpec& spec) {
    if (reps_train.ndim() != 2 || reps_eval.ndim() != 2)
        throw std::invalid_argument("train_probe: representations must be [N,d]");
    int n = reps_train.shape[0], d = reps_train.shape[1];
    if (n != static_cast<int>(targets_train.size()) ||
        reps_eval.shape[0] != static_cast<int>(targets_eval.size()))
        throw std::invalid_argument("train_probe: target count mismatch");
    if (reps_eval.shape[1] != d) throw std::invalid_argument("train_probe: eval width differs from train");
    if (spec.width < 64 || spec.width > 256 || spec.depth < 2 || spec.depth > 3)
        throw std::invalid_argument("train_probe: width must be in [64,256] and depth in {2,3}");

    int classes = 0;
    for (int t : targets_train) classes = std::max(classes, t + 1);
    for (int t : targets_eval) classes = std::max(classes, t + 1);
    int distinct = 0;
    {
        std::vector<int> seen(static_cast<size_t>(classes), 0);
        for (int t : targets_train) seen[static_cast<size_t>(t)] = 1;
        for (int v : seen) distinct += v;
    }
    if (distinct < 2)
        throw std::invalid_argument("train_probe: degenerate targets, training split holds a single class");

    std::vector<LayerSpec> layers;
    layers.push_back(LayerSpec::dense(d, spec.width));
    layers.push_back(LayerSpec::activation(LayerKind::relu));
    for (int h = 1; h < spec.depth; ++h) {
        layers.push_back(LayerSpec::dense(spec.width, spec.width));
        layers.push_back(LayerSpec::activation(LayerKind::relu));
    }
    layers.push_back(LayerSpec::dense(spec.width, classes));
    Network net("probe", layers);
    Rng rng(spec.seed);
    net.init_params(rng);

    int B = std::min(64, n);
    auto full_train_loss = [&]() {
        Graph g;
        BoundParams bp;
        Graph::Var out = net.forward(g, g.constant(reps_train), /*train=*/false, bp);
        Graph::Var loss = g.softmax_ce(out, targets_train);
        return g.value(loss).data[0];
    };

    // plateau detection on the full training loss
    double best = full_train_loss();
    int stalls = 0;
    int steps_run = 0;
    for (int step = 1; step <= spec.steps; ++step) {
        Tensor xb({B, d}, 0.0);
        std::vector<int> yb(static_cast<size_t>(B));
        for (int i = 0; i < B; ++i) {
            int idx = rng.below(n);
            std::copy_n(reps_train.data.begin() + static_cast<long>(idx) * d, d,
                        xb.data.begin() + static_cast<long>(i) * d);
            yb[static_cast<size_t>(i)] = targets_train[static_cast<size_t>(idx)];
        }
        Graph g;
        BoundParams bp;
        Graph::Var out = net.forward(g, g.constant(std::move(xb)), /*train=*/true, bp);
        Graph::Var loss = g.softmax_ce(out, yb);
        g.backward(loss);
        bp.pull_grads(g);
        adam_step(net.params(), spec.lr);
        steps_run = step;
        if (step >= 200 && step % 50 == 0) {
            double cur = full_train_loss();
            if (best - cur < 1e-3) {
                if (++stalls >= 4) break;
            } else {
                stalls = 0;
            }
            best = std::min(best, cur);
        }
    }

    ProbeResult res;
    res.steps_run = steps_run;
    Tensor logits = net.apply(reps_eval);
    int ne = reps_eval.shape[0];
    res.eval_predictions.resize(static_cast<size_t>(ne));
    int correct = 0;
    for (int i = 0; i < ne; ++i) {
        int arg = 0;
        for (int c = 1; c < classes; ++c)
            if (logits.at2(i, c) > logits.at2(i, arg)) arg = c;
        res.eval_predictions[static_cast<size_t>(i)] = arg;
        if (arg == targets_eval[static_cast<size_t>(i)]) ++correct;
    }
    res.accuracy = static_cast<double>(correct) / ne;
    return res;
}

double auditor_accuracy(const Tensor& reps_train, const std::vector<int>& s_train,
                        const Tensor& reps_eval, const std::vector<int>& s_eval,
                        const std::vector<ProbeSpec>& specs) {
    if (specs.empty()) throw std::invalid_argument("auditor_accuracy: empty probe set");
    int distinct = 0;
    {
        std::map<int, int> seen;
        for (int t : s_train) seen[t] = 1;
        distinct = static_cast<int>(seen.size());
    }
    if (distinct < 2) throw std::invalid_argument("auditor_accuracy: need at least two sensitive classes");
    double best = 0.0;
    for (const auto& spec : specs)
        best = std::max(best, train_probe(reps_train, s_train, reps_eval, s_eval, spec).accuracy);
    return best;
}

double chance_level(const std::vector<int>& targets) {
    if (targets.empty()) throw std::invalid_argument("chance_level: empty targets");
    std::map<int, int> counts;
    for (int t : targets) counts[t]++;
    int mx = 0;
    for (const auto& [cls, c] : counts) mx = std::max(mx, c);
    return static_cast<double>(mx) / static_cast<double>(targets.size());
}

double percentile75(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("percentile75: empty sample");
    std::sort(values.begin(), values.end());
    double h = 0.75 * static_cast<double>(values.size() - 1);
    size_t lo = static_cast<size_t>(std::floor(h));
    double frac = h - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

ParetoFront pareto_front(const std::vector<SweepRecord>& records, double bin_width) {
    if (records.empty()) throw std::invalid_argument("pareto_front: no records");
    if (bin_width <= 0.0) throw std::invalid_argument("pareto_front: bin width must be positive");
    std::map<long, std::vector<double>> by_bin;
    for (const auto& r : records) {
        long k = static_cast<long>(std::floor(r.a_s / bin_width));
        by_bin[k].push_back(r.a_y);
    }
    ParetoFront pf;
    pf.bin_width = bin_width;
    for (auto& [k, ys] : by_bin) {
        ParetoBin b;
        b.lo = static_cast<double>(k) * bin_width;
        b.hi = b.lo + bin_width;
        b.count = static_cast<int>(ys.size());
        b.a_y_q75 = percentile75(ys);
        pf.bins.push_back(b);
    }
    return pf;
}

namespace {

struct GroupRates {
    std::vector<double> positives;  // positive-prediction count per category
    std::vector<double> totals;
};

GroupRates tally(const std::vector<int>& predictions, const std::vector<int>& s, int d_s) {
    GroupRates gr;
    gr.positives.assign(static_cast<size_t>(d_s), 0.0);
    gr.totals.assign(static_cast<size_t>(d_s), 0.0);
    for (size_t i = 0; i < predictions.size(); ++i) {
        int cat = s[i];
        if (cat < 0 || cat >= d_s) throw std::invalid_argument("sensitive category out of range");
        if (predictions[i] != 0 && predictions[i] != 1)
            throw std::invalid_argument("predictions must be binary");
        gr.totals[static_cast<size_t>(cat)] += 1.0;
        gr.positives[static_cast<size_t>(cat)] += predictions[i];
    }
    return gr;
}

double summed_rate_gaps(const GroupRates& gr, int d_s, const char* what,
                        std::vector<std::string>* warnings) {
    double total_pos = 0.0, total_n = 0.0;
    int present = 0;
    for (int c = 0; c < d_s; ++c) {
        total_pos += gr.positives[static_cast<size_t>(c)];
        total_n += gr.totals[static_cast<size_t>(c)];
        if (gr.totals[static_cast<size_t>(c)] > 0) ++present;
    }
    if (present < 2) throw std::invalid_argument(std::string(what) + ": need at least two populated categories");
    double sum = 0.0;
    for (int c = 0; c < d_s; ++c) {
        double nc = gr.totals[static_cast<size_t>(c)];
        if (nc == 0.0) {
            if (warnings)
                warnings->push_back(std::string(what) + ": category " + std::to_string(c) +
                                    " has no members and was excluded");
            continue;
        }
        double rest_n = total_n - nc;
        if (rest_n == 0.0) continue;
        double p_here = gr.positives[static_cast<size_t>(c)] / nc;
        double p_rest = (total_pos - gr.positives[static_cast<size_t>(c)]) / rest_n;
        sum += std::abs(p_here - p_rest);
    }
    return sum;
}

}  // namespace

double demographic_disparity(const std::vector<int>& predictions, const std::vector<int>& s,
                             int d_s, std::vector<std::string>* warnings) {
    if (predictions.size() != s.size() || predictions.empty())
        throw std::invalid_argument("demographic_disparity: prediction/sensitive size mismatch");
    GroupRates gr = tally(predictions, s, d_s);
    return summed_rate_gaps(gr, d_s, "demographic_disparity", warnings);
}

double delta_fpr(const std::vector<int>& predictions, const std::vector<int>& y,
                 const std::vector<int>& s, int d_s, std::vector<std::string>* warnings) {
    if (predictions.size() != s.size() || predictions.size() != y.size() || predictions.empty())
        throw std::invalid_argument("delta_fpr: size mismatch");
    std::vector<int> preds0, s0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        if (y[i] != 0 && y[i] != 1) throw std::invalid_argument("delta_fpr: labels must be binary");
        if (y[i] == 0) {
            preds0.push_back(predictions[i]);
            s0.push_back(s[i]);
        }
    }
    if (preds0.empty()) throw std::invalid_argument("delta_fpr: no Y=0 stratum");
    GroupRates gr = tally(preds0, s0, d_s);
    return summed_rate_gaps(gr, d_s, "delta_fpr", warnings);
}

namespace {

std::optional<double> threshold_point(const std::vector<SweepRecord>& records, double thr,
                                      bool rate_min) {
    bool found = false;
    double best = 0.0;
    for (const auto& r : records) {
        double key = rate_min ? r.distortion : r.a_s;
        if (key > thr) continue;
        if (!found) {
            best = r.rate;
            found = true;
        } else {
            best = rate_min ? std::min(best, r.rate) : std::max(best, r.rate);
        }
    }
    if (!found) return std::nullopt;
    return best;
}

std::vector<std::pair<double, double>> threshold_curve(const std::vector<SweepRecord>& records,
                                                       int grid_points, bool rate_min) {
    if (records.empty()) throw std::invalid_argument("curve: no records");
    if (grid_points < 1) throw std::invalid_argument("curve: grid must be positive");
    auto key = [&](const SweepRecord& r) { return rate_min ? r.distortion : r.a_s; };
    double lo = key(records[0]), hi = lo;
    for (const auto& r : records) {
        lo = std::min(lo, key(r));
        hi = std::max(hi, key(r));
    }
    std::vector<std::pair<double, double>> out;
    for (int i = 0; i < grid_points; ++i) {
        double thr = grid_points == 1 ? hi : lo + (hi - lo) * i / (grid_points - 1);
        std::optional<double> v = threshold_point(records, thr, rate_min);
        if (v) out.emplace_back(thr, *v);
    }
    return out;
}

}  // namespace

std::optional<double> rd_point(const std::vector<SweepRecord>& records, double d) {
    if (records.empty()) throw std::invalid_argument("curve: no records");
    return threshold_point(records, d, /*rate_min=*/true);
}

std::optional<double> rf_point(const std::vector<SweepRecord>& records, double delta) {
    if (records.empty()) throw std::invalid_argument("curve: no records");
    return threshold_point(records, delta, /*rate_min=*/false);
}

std::vector<std::pair<double, double>> rd_curve(const std::vector<SweepRecord>& records, int grid_points) {
    return threshold_curve(records, grid_points, /*rate_min=*/true);
}

std::vector<std::pair<double, double>> rf_curve(const std::vector<SweepRecord>& records, int grid_points) {
    return threshold_curve(records, grid_points, /*rate_min=*/false);
}

double homogeneity(const Tensor& embedding, const std::vector<int>& group_a,
                   const std::vector<int>& group_b, int k) {
    if (embedding.ndim() != 2) throw std::invalid_argument("homogeneity: embedding must be [N,d]");
    int n = embedding.shape[0], d = embedding.shape[1];
    if (group_a.empty()) throw std::invalid_argument("homogeneity: group_a is empty");
    if (static_cast<int>(group_b.size()) < k)
        throw std::invalid_argument("homogeneity: group_b has " + std::to_string(group_b.size()) +
                                    " members, need at least k = " + std::to_string(k));
    auto dist = [&](int i, int j) {
        double s = 0.0;
        for (int c = 0; c < d; ++c) {
            double diff = embedding.at2(i, c) - embedding.at2(j, c);
            s += diff * diff;
        }
        return std::sqrt(s);
    };
    double num = 0.0;
    std::vector<double> ds(group_b.size());
    for (int a : group_a) {
        for (size_t j = 0; j < group_b.size(); ++j) ds[j] = dist(a, group_b[j]);
        std::nth_element(ds.begin(), ds.begin() + (k - 1), ds.end());
        double mean_k = 0.0;
        for (int j = 0; j < k; ++j) mean_k += ds[static_cast<size_t>(j)];
        // nth_element leaves the k smallest in the first k slots
        num += mean_k / k;
    }
    num /= static_cast<double>(group_a.size());
    double den = 0.0;
    long pairs = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            den += dist(i, j);
            ++pairs;
        }
    if (pairs == 0 || den == 0.0)
        throw std::invalid_argument("homogeneity: degenerate embedding, all points coincide");
    den /= static_cast<double>(pairs);
    return num / den;
}

}  // namespace fbc
