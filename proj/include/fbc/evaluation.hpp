#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fbc/layers.hpp"

namespace fbc {

/// Multi-layer-perceptron probe description; widths 64..256, depth 2-3.
struct ProbeSpec {
    int width = 64;
    int depth = 2;
    int steps = 2000;
    double lr = 1e-3;
    uint64_t seed = 1;
};

/// The default auditing set: (64,2), (128,2), (256,3).
std::vector<ProbeSpec> default_probe_specs(uint64_t base_seed = 1);

struct ProbeResult {
    double accuracy = 0.0;           // held-out accuracy on the eval split
    std::vector<int> eval_predictions;
    int steps_run = 0;
};

/// Trains a relu MLP classifier on frozen representations and reports
/// held-out accuracy. Early-stops when the training loss plateaus.
/// Raises a degenerate-target error when the training targets hold a
/// single class.
ProbeResult train_probe(const Tensor& reps_train, const std::vector<int>& targets_train,
                        const Tensor& reps_eval, const std::vector<int>& targets_eval,
                        const ProbeSpec& spec);

/// Best held-out accuracy over the probe set.
double auditor_accuracy(const Tensor& reps_train, const std::vector<int>& s_train,
                        const Tensor& reps_eval, const std::vector<int>& s_eval,
                        const std::vector<ProbeSpec>& specs);

/// Maximum empirical class frequency; the accuracy of an uninformed
/// majority predictor.
double chance_level(const std::vector<int>& targets);

struct SweepRecord {
    std::string method;
    double beta = 0.0;
    uint64_t seed = 0;
    double rate = 0.0;  // nats
    double distortion = 0.0;
    double a_s = 0.0;
    double a_y = 0.0;
};

struct ParetoBin {
    double lo = 0.0, hi = 0.0;
    double a_y_q75 = 0.0;
    int count = 0;
};

struct ParetoFront {
    double bin_width = 0.0;
    std::vector<ParetoBin> bins;  // only non-empty bins, ascending
};

/// 75th percentile with linear interpolation between order statistics.
double percentile75(std::vector<double> values);

/// Bins records by a_s (half-open bins anchored at multiples of the
/// width) and reports the per-bin 75% quantile of a_y.
ParetoFront pareto_front(const std::vector<SweepRecord>& records, double bin_width);

/// Demographic disparity: sum over categories s of
/// |P(T=1|S=s) - P(T=1|S!=s)|. Categories without members are excluded
/// (reported through `warnings` when given).
double demographic_disparity(const std::vector<int>& predictions, const std::vector<int>& s,
                             int d_s, std::vector<std::string>* warnings = nullptr);

/// Summed absolute false-positive-rate differences conditioned on Y=0.
double delta_fpr(const std::vector<int>& predictions, const std::vector<int>& y,
                 const std::vector<int>& s, int d_s, std::vector<std::string>* warnings = nullptr);

/// Minimum rate among records with distortion <= D; empty optional when
/// no record is feasible.
std::optional<double> rd_point(const std::vector<SweepRecord>& records, double d);

/// Maximum rate among records with a_s <= delta.
std::optional<double> rf_point(const std::vector<SweepRecord>& records, double delta);

/// (D, minimum rate with distortion <= D) over a threshold grid spanning
/// the observed distortions; infeasible thresholds yield no point.
std::vector<std::pair<double, double>> rd_curve(const std::vector<SweepRecord>& records,
                                                int grid_points = 20);

/// (Delta, maximum rate with a_s <= Delta), mirror of rd_curve.
std::vector<std::pair<double, double>> rf_curve(const std::vector<SweepRecord>& records,
                                                int grid_points = 20);

/// Mean distance from group_a points to their k nearest group_b points,
/// normalized by the mean pairwise distance over all rows. Raises when
/// group_b has fewer than k members or the embedding is degenerate.
double homogeneity(const Tensor& embedding, const std::vector<int>& group_a,
                   const std::vector<int>& group_b, int k = 10);

}  // namespace fbc
