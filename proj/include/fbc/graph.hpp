#pragma once

#include <functional>
#include <vector>

#include "fbc/tensor.hpp"

namespace fbc {

/// Reverse-mode autodiff tape. Operations append nodes in topological
/// order, so backward() is a single reverse sweep. The tape is rebuilt
/// for every training step; parameters live outside it and are bound in
/// as leaves.
class Graph {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf that does not need a gradient (inputs, targets, constants).
    Var constant(Tensor v);
    /// Leaf that accumulates a gradient (parameters and probed inputs).
    Var leaf(Tensor v);

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;

    // ---- elementwise ----
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var relu(Var a);
    Var tanh_act(Var a);
    Var sigmoid(Var a);
    Var exp_act(Var a);
    /// (tanh(x)+1)/2, entrywise; output in (0,1).
    Var squash(Var a);
    /// Identity forward; multiplies the backward gradient by c.
    Var scale_grad(Var a, double c);

    // ---- linear algebra ----
    /// x:[B,I] w:[I,O] -> [B,O]
    Var matmul(Var x, Var w);
    /// x:[B,O] b:[O] -> x + b per row
    Var add_row_bias(Var x, Var b);
    Var concat_cols(Var a, Var b);
    /// columns [from, to) of a [B,F] tensor
    Var slice_cols(Var a, int from, int to);
    Var reshape(Var a, std::vector<int> shape);

    // ---- convolution ----
    /// x:[B,C,H,W] w:[O,C,k,k] b:[O]
    Var conv2d(Var x, Var w, Var b, int stride, int pad);
    /// x:[B,C,H,W] w:[C,O,k,k] b:[O]; output spatial (H-1)*s - 2p + k
    Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad);

    // ---- normalization ----
    /// Per-feature ([B,F]) or per-channel ([B,C,H,W]) batch normalization.
    /// Train mode normalizes by batch statistics and updates the running
    /// accumulators in place; eval mode uses the running statistics.
    Var batchnorm(Var x, Var gamma, Var beta, Tensor& run_mean, Tensor& run_var,
                  bool train, double momentum = 0.1, double eps = 1e-5);

    // ---- binarization ----
    /// Forward: round-half-up to {0,1}. Backward: gradient of the soft
    /// relaxation, d/dz = 2*sigma*zdot*(1-zdot) with
    /// zdot = logistic(sigma*(2*zbar-1)).
    Var straight_through(Var zbar, double sigma);
    /// Scatter a [B,m] code into a [B,1,g,g] raster grid, zero padding.
    Var grid_embed(Var z, int g);

    // ---- reductions and losses ----
    Var sum_all(Var a);
    Var mean_all(Var a);
    /// Mean over batch of the per-sample sum of squared errors.
    Var sse_loss(Var pred, Var target);
    /// Mean per-element binary cross-entropy; pred clamped to [1e-7, 1-1e-7].
    Var bernoulli_nll(Var pred, Var target);
    /// Mean over batch of -log softmax(logits)[label].
    Var softmax_ce(Var logits, const std::vector<int>& labels);
    /// Mean over batch of the summed bit cross-entropy at active grid
    /// positions: -[z ln q + (1-z) ln(1-q)], q clamped to [1e-7, 1-1e-7].
    /// Gradients flow into both q and z.
    Var bit_ce(Var q, Var z, const std::vector<uint8_t>& active);
    /// Mean over batch of 0.5 * sum_j (mu^2 + e^lv - lv - 1).
    Var gauss_kl(Var mu, Var logvar);

    /// Seeds d(loss)/d(loss)=1 and sweeps the tape in reverse. The loss
    /// must be a scalar recorded on this tape.
    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Graph&)> back;  // empty for leaves
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;

    Var push(Tensor value, bool needs_grad, std::function<void(Graph&)> back);
    Node& node(Var v) { return nodes_[static_cast<size_t>(v.id)]; }
    const Node& node(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }
    bool wants(Var v) const { return node(v).needs_grad; }
    void check(Var v) const;
};

}  // namespace fbc
