#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fbc/graph.hpp"
#include "fbc/tensor.hpp"

namespace fbc {

enum class LayerKind { dense, conv2d, convT2d, batchnorm, relu, tanh, sigmoid };

std::string layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);

/// One stage of a feed-forward stack. Dimensions follow the usual
/// (in, out, kernel, stride) notation; activations carry no dimensions.
struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    int in = 0;
    int out = 0;
    int kernel = 0;
    int stride = 0;
    int pad = 1;

    static LayerSpec dense(int in, int out);
    static LayerSpec conv(int in, int out, int kernel, int stride, int pad = 1);
    static LayerSpec convT(int in, int out, int kernel, int stride, int pad = 1);
    static LayerSpec bnorm(int features);
    static LayerSpec activation(LayerKind k);

    bool has_params() const;
    void validate(int index) const;
};

/// Named parameter with its gradient accumulator and optimizer state.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m1;  // first moment
    Tensor m2;  // second moment
};

struct ParameterSet {
    std::vector<Param> params;  // stable insertion order
    long step_count = 0;

    Param& add(const std::string& name, Tensor init);
    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;
    void zero_grad();
    int total_size() const;
};

/// One adaptive-moment update (decay 0.9/0.999, eps 1e-8, bias-corrected)
/// over every parameter; gradients are cleared afterwards. Throws if any
/// gradient is non-finite.
void adam_step(ParameterSet& params, double lr);

/// Tracks (param, tape leaf) bindings for one recorded step so gradients
/// can be pulled back out after backward().
struct BoundParams {
    std::vector<std::pair<Param*, Graph::Var>> bound;
    Graph::Var bind(Graph& g, Param& p);
    void pull_grads(const Graph& g);
};

/// Feed-forward stack over LayerSpecs with its own parameters and
/// batchnorm running statistics. Dense<->conv transitions reshape
/// automatically using the declared channel counts.
class Network {
public:
    Network() = default;
    Network(std::string name, std::vector<LayerSpec> layers);

    void init_params(Rng& rng);
    /// Records the stack on the tape. Shape mismatches raise an error
    /// naming the offending layer.
    Graph::Var forward(Graph& g, Graph::Var x, bool train, BoundParams& bp);
    /// Convenience for inference: fresh bindings, eval-mode batchnorm.
    Tensor apply(const Tensor& x);

    const std::vector<LayerSpec>& layers() const { return layers_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    std::vector<std::pair<std::string, Tensor*>> state_tensors();  // params + running stats
    const std::string& name() const { return name_; }

    /// Output shape for a given input shape (batch dimension excluded).
    std::vector<int> output_shape(const std::vector<int>& input_shape) const;

private:
    std::string name_;
    std::vector<LayerSpec> layers_;
    ParameterSet params_;
    std::vector<Tensor> run_mean_, run_var_;  // one slot per layer (used by batchnorm)
    std::string pname(int layer, const char* piece) const;
};

/// Uniform fan-based initialization, +-sqrt(6/(fan_in+fan_out)).
double glorot_bound(int fan_in, int fan_out);

}  // namespace fbc
