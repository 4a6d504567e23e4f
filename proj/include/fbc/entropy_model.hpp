#pragma once

#include <vector>

#include "fbc/layers.hpp"

namespace fbc {

/// Raster-causal 0-1 convolution mask. Kind 'A' is 1 exactly at the
/// positions strictly preceding the center in raster order; kind 'B'
/// additionally includes the center.
struct CausalMask {
    char kind = 'A';
    int size = 0;
    Tensor mask;  // [c,c]
};

CausalMask make_mask(char kind, int c);

/// Square grid that holds an m-bit code in raster order, padded with
/// zeros up to the next perfect square.
struct CodeGrid {
    int side = 0;
    int bits = 0;
    Tensor grid;                  // [g,g]
    std::vector<uint8_t> active;  // g*g raster flags, exactly `bits` set
};

int grid_side_for(int code_bits);
std::vector<uint8_t> active_mask_for(int code_bits, int side);
CodeGrid make_code_grid(const std::vector<double>& code_bits);

enum class FilterMode { paper_literal, masked_learnable };

struct EntropyModelConfig {
    int code_bits = 0;
    int channels = 8;
    int mask_size = 3;
    int stages = 4;
    FilterMode mode = FilterMode::paper_literal;
};

/// Autoregressive estimator of the per-bit conditionals Q(z_i = 1 | z_<i)
/// over a raster grid: a stack of causal masked convolutions (first mask
/// kind A, the rest kind B), each followed by batch normalization and
/// relu, then a learnable 1x1 convolution with a sigmoid head. The
/// batch mean of the summed bit cross-entropy at active positions upper
/// bounds the code entropy in nats.
class EntropyModel {
public:
    EntropyModel() = default;
    explicit EntropyModel(EntropyModelConfig cfg);

    void init_params(Rng& rng);

    int side() const { return side_; }
    const std::vector<uint8_t>& active() const { return active_; }
    const EntropyModelConfig& config() const { return cfg_; }

    /// [B,m] codes -> [B,1,g,g] grids with zero padding.
    Tensor codes_to_grids(const Tensor& codes) const;

    /// Records the estimator stack on an existing tape. In
    /// masked-learnable mode the stage weights are bound as parameters;
    /// in paper-literal mode they are the fixed 0-1 masks.
    Graph::Var predict_on(Graph& g, Graph::Var grids, bool train, BoundParams& bp);

    /// q_i for every grid position, eval-mode normalization. Each q_i
    /// depends only on bits at raster positions before i.
    Tensor predict_conditionals(const Tensor& grids);

    /// Mean over the batch of the summed bit cross-entropy (nats) at
    /// active positions, eval-mode normalization.
    double code_cross_entropy(const Tensor& grids);

    /// One adaptive-moment step on the cross-entropy objective
    /// (train-mode normalization); returns the pre-step CE value.
    double fit_step(const Tensor& grids, double lr);

    /// Zeroes stage-weight gradients outside the causal mask. Call
    /// before the optimizer step in masked-learnable mode; no-op
    /// otherwise.
    void mask_gradients();

    ParameterSet& params() { return params_; }
    std::vector<std::pair<std::string, Tensor*>> state_tensors();

private:
    EntropyModelConfig cfg_;
    int side_ = 0;
    std::vector<uint8_t> active_;
    ParameterSet params_;
    std::vector<Tensor> fixed_w_;  // per stage, paper-literal mode
    std::vector<Tensor> fixed_b_;
    std::vector<Tensor> run_mean_, run_var_;
    std::vector<Tensor> stage_mask_;  // broadcast [O,C,c,c] per stage

    Tensor expanded_mask(int stage) const;
    int stage_in(int stage) const { return stage == 0 ? 1 : cfg_.channels; }
};

}  // namespace fbc
