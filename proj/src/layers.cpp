#include "fbc/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace fbc {

std::string layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::convT2d: return "convT2d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::tanh: return "tanh";
        case LayerKind::sigmoid: return "sigmoid";
    }
    return "?";
}

LayerKind layer_kind_from_name(const std::string& s) {
    if (s == "dense") return LayerKind::dense;
    if (s == "conv2d") return LayerKind::conv2d;
    if (s == "convT2d") return LayerKind::convT2d;
    if (s == "batchnorm") return LayerKind::batchnorm;
    if (s == "relu") return LayerKind::relu;
    if (s == "tanh") return LayerKind::tanh;
    if (s == "sigmoid") return LayerKind::sigmoid;
    throw std::invalid_argument("unknown layer kind '" + s + "'");
}

LayerSpec LayerSpec::dense(int in, int out) {
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.in = in;
    l.out = out;
    return l;
}

LayerSpec LayerSpec::conv(int in, int out, int kernel, int stride, int pad) {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.in = in;
    l.out = out;
    l.kernel = kernel;
    l.stride = stride;
    l.pad = pad;
    return l;
}

LayerSpec LayerSpec::convT(int in, int out, int kernel, int stride, int pad) {
    LayerSpec l;
    l.kind = LayerKind::convT2d;
    l.in = in;
    l.out = out;
    l.kernel = kernel;
    l.stride = stride;
    l.pad = pad;
    return l;
}

LayerSpec LayerSpec::bnorm(int features) {
    LayerSpec l;
    l.kind = LayerKind::batchnorm;
    l.in = features;
    l.out = features;
    return l;
}

LayerSpec LayerSpec::activation(LayerKind k) {
    LayerSpec l;
    l.kind = k;
    return l;
}

bool LayerSpec::has_params() const {
    return kind == LayerKind::dense || kind == LayerKind::conv2d || kind == LayerKind::convT2d ||
           kind == LayerKind::batchnorm;
}

void LayerSpec::validate(int index) const {
    auto fail = [&](const std::string& msg) {
        throw std::invalid_argument("layer " + std::to_string(index) + " (" + layer_kind_name(kind) +
                                    "): " + msg);
    };
    switch (kind) {
        case LayerKind::dense:
            if (in <= 0 || out <= 0) fail("dimensions must be positive");
            break;
        case LayerKind::conv2d:
        case LayerKind::convT2d:
            if (in <= 0 || out <= 0 || kernel <= 0 || stride <= 0) fail("dimensions must be positive");
            if (kernel < stride) fail("kernel must be >= stride");
            if (pad < 0) fail("padding must be non-negative");
            break;
        case LayerKind::batchnorm:
            if (in <= 0) fail("feature count must be positive");
            break;
        default:
            break;
    }
}

double glorot_bound(int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

Param& ParameterSet::add(const std::string& name, Tensor init) {
    Param p;
    p.name = name;
    p.grad = Tensor(init.shape, 0.0);
    p.m1 = Tensor(init.shape, 0.0);
    p.m2 = Tensor(init.shape, 0.0);
    p.value = std::move(init);
    params.push_back(std::move(p));
    return params.back();
}

Param* ParameterSet::find(const std::string& name) {
    for (auto& p : params)
        if (p.name == name) return &p;
    return nullptr;
}

const Param* ParameterSet::find(const std::string& name) const {
    for (auto& p : params)
        if (p.name == name) return &p;
    return nullptr;
}

void ParameterSet::zero_grad() {
    for (auto& p : params) p.grad.fill(0.0);
}

int ParameterSet::total_size() const {
    int n = 0;
    for (const auto& p : params) n += p.value.numel();
    return n;
}

void adam_step(ParameterSet& ps, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (const auto& p : ps.params)
        if (!p.grad.all_finite())
            throw std::runtime_error("adam: non-finite gradient in parameter '" + p.name + "'");
    ps.step_count += 1;
    double t = static_cast<double>(ps.step_count);
    double c1 = 1.0 - std::pow(b1, t);
    double c2 = 1.0 - std::pow(b2, t);
    for (auto& p : ps.params) {
        for (size_t i = 0; i < p.value.data.size(); ++i) {
            double g = p.grad.data[i];
            p.m1.data[i] = b1 * p.m1.data[i] + (1.0 - b1) * g;
            p.m2.data[i] = b2 * p.m2.data[i] + (1.0 - b2) * g * g;
            double mhat = p.m1.data[i] / c1;
            double vhat = p.m2.data[i] / c2;
            p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        p.grad.fill(0.0);
    }
}

Graph::Var BoundParams::bind(Graph& g, Param& p) {
    Graph::Var v = g.leaf(p.value);
    bound.emplace_back(&p, v);
    return v;
}

void BoundParams::pull_grads(const Graph& g) {
    for (auto& [p, v] : bound) {
        const Tensor& gr = g.grad(v);
        for (size_t i = 0; i < gr.data.size(); ++i) p->grad.data[i] += gr.data[i];
    }
}

Network::Network(std::string name, std::vector<LayerSpec> layers)
    : name_(std::move(name)), layers_(std::move(layers)) {
    for (size_t i = 0; i < layers_.size(); ++i) layers_[i].validate(static_cast<int>(i));
    run_mean_.resize(layers_.size());
    run_var_.resize(layers_.size());
}

std::string Network::pname(int layer, const char* piece) const {
    return name_ + "." + std::to_string(layer) + "." + piece;
}

void Network::init_params(Rng& rng) {
    params_ = ParameterSet{};
    for (size_t li = 0; li < layers_.size(); ++li) {
        const LayerSpec& l = layers_[li];
        int i = static_cast<int>(li);
        switch (l.kind) {
            case LayerKind::dense: {
                double b = glorot_bound(l.in, l.out);
                Tensor w({l.in, l.out}, 0.0);
                for (double& x : w.data) x = rng.uniform(-b, b);
                params_.add(pname(i, "w"), std::move(w));
                params_.add(pname(i, "b"), Tensor({l.out}, 0.0));
                break;
            }
            case LayerKind::conv2d: {
                int fan_in = l.in * l.kernel * l.kernel;
                int fan_out = l.out * l.kernel * l.kernel;
                double b = glorot_bound(fan_in, fan_out);
                Tensor w({l.out, l.in, l.kernel, l.kernel}, 0.0);
                for (double& x : w.data) x = rng.uniform(-b, b);
                params_.add(pname(i, "w"), std::move(w));
                params_.add(pname(i, "b"), Tensor({l.out}, 0.0));
                break;
            }
            case LayerKind::convT2d: {
                int fan_in = l.in * l.kernel * l.kernel;
                int fan_out = l.out * l.kernel * l.kernel;
                double b = glorot_bound(fan_in, fan_out);
                Tensor w({l.in, l.out, l.kernel, l.kernel}, 0.0);
                for (double& x : w.data) x = rng.uniform(-b, b);
                params_.add(pname(i, "w"), std::move(w));
                params_.add(pname(i, "b"), Tensor({l.out}, 0.0));
                break;
            }
            case LayerKind::batchnorm: {
                params_.add(pname(i, "gamma"), Tensor({l.in}, 1.0));
                params_.add(pname(i, "beta"), Tensor({l.in}, 0.0));
                run_mean_[li] = Tensor({l.in}, 0.0);
                run_var_[li] = Tensor({l.in}, 1.0);
                break;
            }
            default:
                break;
        }
    }
}

std::vector<int> Network::output_shape(const std::vector<int>& input_shape) const {
    std::vector<int> s = input_shape;
    for (size_t li = 0; li < layers_.size(); ++li) {
        const LayerSpec& l = layers_[li];
        switch (l.kind) {
            case LayerKind::dense: {
                s = {l.out};
                break;
            }
            case LayerKind::conv2d: {
                if (s.size() != 3) s = {l.in, 0, 0};
                int h = (s[1] + 2 * l.pad - l.kernel) / l.stride + 1;
                int w = (s[2] + 2 * l.pad - l.kernel) / l.stride + 1;
                s = {l.out, h, w};
                break;
            }
            case LayerKind::convT2d: {
                if (s.size() == 1) {
                    int hw = static_cast<int>(std::round(std::sqrt(static_cast<double>(s[0]) / l.in)));
                    s = {l.in, hw, hw};
                }
                int h = (s[1] - 1) * l.stride - 2 * l.pad + l.kernel;
                int w = (s[2] - 1) * l.stride - 2 * l.pad + l.kernel;
                s = {l.out, h, w};
                break;
            }
            default:
                break;
        }
    }
    return s;
}

Graph::Var Network::forward(Graph& g, Graph::Var x, bool train, BoundParams& bp) {
    if (params_.params.empty() && !layers_.empty()) {
        bool any = false;
        for (const auto& l : layers_) any = any || l.has_params();
        if (any) throw std::logic_error("network '" + name_ + "': forward before init_params");
    }
    Graph::Var cur = x;
    for (size_t li = 0; li < layers_.size(); ++li) {
        const LayerSpec& l = layers_[li];
        int i = static_cast<int>(li);
        const Tensor& cv = g.value(cur);
        auto dim_error = [&](const std::string& msg) {
            throw std::invalid_argument("network '" + name_ + "' layer " + std::to_string(i) + " (" +
                                        layer_kind_name(l.kind) + "): " + msg);
        };
        switch (l.kind) {
            case LayerKind::dense: {
                if (cv.ndim() == 4) cur = g.reshape(cur, {cv.shape[0], cv.shape[1] * cv.shape[2] * cv.shape[3]});
                const Tensor& v = g.value(cur);
                if (v.ndim() != 2 || v.shape[1] != l.in)
                    dim_error("expected input dimension " + std::to_string(l.in) + ", got " +
                              shape_str(v.shape));
                Graph::Var w = bp.bind(g, *params_.find(pname(i, "w")));
                Graph::Var b = bp.bind(g, *params_.find(pname(i, "b")));
                cur = g.add_row_bias(g.matmul(cur, w), b);
                break;
            }
            case LayerKind::conv2d: {
                if (cv.ndim() != 4 || cv.shape[1] != l.in)
                    dim_error("expected " + std::to_string(l.in) + " input channels, got " +
                              shape_str(cv.shape));
                Graph::Var w = bp.bind(g, *params_.find(pname(i, "w")));
                Graph::Var b = bp.bind(g, *params_.find(pname(i, "b")));
                cur = g.conv2d(cur, w, b, l.stride, l.pad);
                break;
            }
            case LayerKind::convT2d: {
                if (cv.ndim() == 2) {
                    int hw = static_cast<int>(std::round(std::sqrt(static_cast<double>(cv.shape[1]) / l.in)));
                    if (hw * hw * l.in != cv.shape[1])
                        dim_error("cannot reshape " + std::to_string(cv.shape[1]) + " features into " +
                                  std::to_string(l.in) + " square channel maps");
                    cur = g.reshape(cur, {cv.shape[0], l.in, hw, hw});
                }
                const Tensor& v = g.value(cur);
                if (v.ndim() != 4 || v.shape[1] != l.in)
                    dim_error("expected " + std::to_string(l.in) + " input channels, got " + shape_str(v.shape));
                Graph::Var w = bp.bind(g, *params_.find(pname(i, "w")));
                Graph::Var b = bp.bind(g, *params_.find(pname(i, "b")));
                cur = g.conv_transpose2d(cur, w, b, l.stride, l.pad);
                break;
            }
            case LayerKind::batchnorm: {
                if (cv.shape[1] != l.in)
                    dim_error("expected " + std::to_string(l.in) + " features, got " + shape_str(cv.shape));
                Graph::Var gm = bp.bind(g, *params_.find(pname(i, "gamma")));
                Graph::Var bt = bp.bind(g, *params_.find(pname(i, "beta")));
                cur = g.batchnorm(cur, gm, bt, run_mean_[li], run_var_[li], train);
                break;
            }
            case LayerKind::relu:
                cur = g.relu(cur);
                break;
            case LayerKind::tanh:
                cur = g.tanh_act(cur);
                break;
            case LayerKind::sigmoid:
                cur = g.sigmoid(cur);
                break;
        }
    }
    return cur;
}

Tensor Network::apply(const Tensor& x) {
    Graph g;
    BoundParams bp;
    Graph::Var in = g.constant(x);
    Graph::Var out = forward(g, in, /*train=*/false, bp);
    return g.value(out);
}

std::vector<std::pair<std::string, Tensor*>> Network::state_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& p : params_.params) out.emplace_back(p.name, &p.value);
    for (size_t li = 0; li < layers_.size(); ++li) {
        if (layers_[li].kind != LayerKind::batchnorm) continue;
        out.emplace_back(pname(static_cast<int>(li), "run_mean"), &run_mean_[li]);
        out.emplace_back(pname(static_cast<int>(li), "run_var"), &run_var_[li]);
    }
    return out;
}

}  // namespace fbc
