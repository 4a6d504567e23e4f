#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace fbc {

/// Dense n-dimensional array of doubles, row-major.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shape_, double fill = 0.0);
    static Tensor from(std::vector<int> shape_, std::vector<double> data_);
    static Tensor scalar(double v);

    int numel() const;
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }

    // 2-D and 4-D accessors; bounds are the caller's problem.
    double& at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    double at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }
    double& at4(int b, int c, int i, int j) {
        return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + i) * shape[3] + j];
    }
    double at4(int b, int c, int i, int j) const {
        return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + i) * shape[3] + j];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
    void fill(double v);
};

std::string shape_str(const std::vector<int>& shape);
int shape_numel(const std::vector<int>& shape);

/// Deterministic random source. All draws are derived from the raw
/// mt19937_64 stream with hand-rolled conversions so that sequences are
/// identical across standard libraries and platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    uint64_t next_u64();
    /// Uniform in [lo, hi).
    double uniform(double lo = 0.0, double hi = 1.0);
    /// Standard normal via Box-Muller (cached pair).
    double normal();
    /// Uniform integer in [0, n).
    int below(int n);
    /// Index into a discrete distribution given unnormalized weights.
    int weighted(const std::vector<double>& weights);

private:
    // splitmix64 stream
    uint64_t state_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace fbc
