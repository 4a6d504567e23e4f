#include "fbc/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fbc {

namespace {

double clamp_prob(double p) {
    if (p < 1e-7) return 1e-7;
    if (p > 1.0 - 1e-7) return 1.0 - 1e-7;
    return p;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

void Graph::check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw std::logic_error("graph: variable does not refer to a recorded node");
}

Graph::Var Graph::push(Tensor value, bool needs_grad, std::function<void(Graph&)> back) {
    Node n;
    n.grad = Tensor(value.shape, 0.0);
    n.value = std::move(value);
    n.back = std::move(back);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Graph::Var Graph::constant(Tensor v) { return push(std::move(v), false, nullptr); }
Graph::Var Graph::leaf(Tensor v) { return push(std::move(v), true, nullptr); }

const Tensor& Graph::value(Var v) const {
    check(v);
    return node(v).value;
}

const Tensor& Graph::grad(Var v) const {
    check(v);
    return node(v).grad;
}

void Graph::backward(Var loss) {
    if (nodes_.empty()) throw std::logic_error("graph: backward called before any forward computation");
    check(loss);
    if (node(loss).value.numel() != 1)
        throw std::invalid_argument("graph: backward needs a scalar loss, got shape " +
                                    shape_str(node(loss).value.shape));
    node(loss).grad.data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.back && n.needs_grad) n.back(*this);
    }
}

// ---------------------------------------------------------------- elementwise

Graph::Var Graph::add(Var a, Var b) {
    check(a);
    check(b);
    require(node(a).value.same_shape(node(b).value),
            "add: shape mismatch " + shape_str(node(a).value.shape) + " vs " + shape_str(node(b).value.shape));
    Tensor out = node(a).value;
    const Tensor& bv = node(b).value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    int aid = a.id, bid = b.id;
    Var v = push(std::move(out), wants(a) || wants(b), nullptr);
    int vid = v.id;
    node(v).back = [aid, bid, vid](Graph& g) {
        const Tensor& dy = g.nodes_[vid].grad;
        if (g.nodes_[aid].needs_grad)
            for (size_t i = 0; i < dy.data.size(); ++i) g.nodes_[aid].grad.data[i] += dy.data[i];
        if (g.nodes_[bid].needs_grad)
            for (size_t i = 0; i < dy.data.size(); ++i) g.nodes_[bid].grad.data[i] += dy.data[i];
    };
    return v;
}

Graph::Var Graph::sub(Var a, Var b) {
    check(a);
    check(b);
    require(node(a).value.same_shape(node(b).value),
            "sub: shape mismatch " + shape_str(node(a).value.shape) + " vs " + shape_str(node(b).value.shape));
    Tensor out = node(a).value;
    const Tensor& bv = node(b).value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
    int aid = a.id, bid = b.id;
    Var v = push(std::move(out), wants(a) || wants(b), nullptr);
    int vid = v.id;
    node(v).back = [aid, bid, vid](Graph& g) {
        const Tensor& dy = g.nodes_[vid].grad;
        if (g.nodes_[aid].needs_grad)
            for (size_t i = 0; i < dy.data.size(); ++i) g.nodes_[aid].grad.data[i] += dy.data[i];
        if (g.nodes_[bid].needs_grad)
            for (size_t i = 0; i < dy.data.size(); ++i) g.nodes_[bid].grad.data[i] -= dy.data[i];
    };
    return v;
}

Graph::Var Graph::mul(Var a, Var b) {
    check(a);
    check(b);
    require(node(a).value.same_shape(node(b).value),
            "mul: shape mismatch " + shape_str(node(a).value.shape) + " vs " + shape_str(node(b).value.shape));
    Tensor out = node(a).value;
    const Tensor& bv = node(b).value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
    int aid = a.id, bid = b.id;
    Var v = push(std::move(out), wants(a) || wants(b), nullptr);
    int vid = v.id;
    node(v).back = [aid, bid, vid](Graph& g) {
        const Tensor& dy = g.nodes_[vid].grad;
        const Tensor& av = g.nodes_[aid].value;
        const Tensor& bv2 = g.nodes_[bid].value;
        if (g.nodes_[aid].needs_grad)
            for (size_t i = 0; i < dy.data.size(); ++i) g.nodes_[aid].grad.data[i] += dy.data[i] * bv2.data[i];
        if (g.nodes_[bid].needs_grad)
            for (size_t i = 0; i < dy.data.size(); ++i) g.nodes_[bid].grad.data[i] += dy.data[i] * av.data[i];
    };
    return v;
}

Graph::Var Graph::scale(Var a, double c) {
    check(a);
    Tensor out = node(a).value;
    for (double& x : out.data) x *= c;
    int aid = a.id;
    Var v = push(std::move(out), wants(a), nullptr);
    int vid = v.id;
    node(v).back = [aid, vid, c](Graph& g) {
        if (!g.nodes_[aid].needs_grad) return;
        const Tensor& dy = g.nodes_[vid].grad;
        for (size_t i = 0; i < dy.data.size(); ++i) g.nodes_[aid].grad.data[i] += c * dy.data[i];
    };
    return v;
}

Graph::Var Graph::relu(Var a) {
    check(a);
    Tensor out = node(a).value;
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    int aid = a.id;
    Var v = push(std::move(out), wants(a), nullptr);
    int vid = v.id;
    node(v).back = [aid, vid](Graph& g) {
        if (!g.nodes_[aid].needs_grad) return;
        const Tensor& dy = g.nodes_[vid].grad;
        const Tensor& x = g.nodes_[aid].value;
        for (size_t i = 0; i < dy.data.size(); ++i)
            if (x.data[i] > 0.0) g.nodes_[aid].grad.data[i] += dy.data[i];
    };
    return v;
}

Graph::Var Graph::tanh_act(Var a) {
    check(a);
    Tensor out = node(a).value;
    for (double& x : out.data) x = std::tanh(x);
    int aid = a.id;
    Var v = push(std::move(out), wants(a), nullptr);
    int vid = v.id;
    node(v).back = [aid, vid](Graph& g) {
        if (!g.nodes_[aid].needs_grad) return;
        const Tensor& dy = g.nodes_[vid].grad;
        const Tensor& y = g.nodes_[vid].value;
        for (size_t i = 0; i < dy.data.size(); ++i)
            g.nodes_[aid].grad.data[i] += dy.data[i] * (1.0 - y.data[i] * y.data[i]);
    };
    return v;
}

Graph::Var Graph::sigmoid(Var a) {
    check(a);
    Tensor out = node(a).value;
    for (double& x : out.data) x = logistic(x);
    int aid = a.id;
    Var v = push(std::move(out), wants(a), nullptr);
    int vid = v.id;
    node(v).back = [aid, vid](Graph& g) {
        if (!g.nodes_[aid].needs_grad) return;
        const Tensor& dy = g.nodes_[vid].grad;
        const Tensor& y = g.nodes_[vid].value;
        for (size_t i = 0; i < dy.data.size(); ++i)
            g.nodes_[aid].grad.data[i] += dy.data[i] * y.data[i] * (1.0 - y.data[i]);
    };
    return v;
}

Graph::Var Graph::exp_act(Var a) {
    check(a);
    Tensor out = node(a).value;
    for (double& x : out.data) x = std::exp(x);
    int aid = a.id;
    Var v = push(std::move(out), wants(a), nullptr);
    int vid = v.id;
    node(v).back = [aid, vid](Graph& g) {
        if (!g.nodes_[aid].needs_grad) return;
        const Tensor& dy = g.nodes_[vid].grad;
        const Tensor& y = g.nodes_[vid].value;
        for (size_t i = 0; i < dy.data.size(); ++i) g.nodes_[aid].grad.data[i] += dy.data[i] * y.data[i];
    };
    return v;
}

Graph::Var Graph::squash(Var a) {
    check(a);
    Tensor out = node(a).value;
    for (double& x : out.data) x = (std::tanh(x) + 1.0) * 0.5;
    int aid = a.id;
    Var v = push(std::move(out), wants(a), nullptr);
    int vid = v.id;
    node(v).back = [aid, vid](Graph& g) {
        if (!g.nodes_[aid].needs_grad) return;
        const Tensor& dy = g.nodes_[vid].grad;
        const Tensor& y = g.nodes_[vid].value;
        // d/dx (tanh(x)+1)/2 = 2 y (1-y)
        for (size_t i = 0; i < dy.data.size(); ++i)
            g.nodes_[aid].grad.data[i] += dy.data[i] * 2.0 * y.data[i] * (1.0 - y.data[i]);
    };
    return v;
}

Graph::Var Graph::scale_grad(Var a, double c) {
    check(a);
    Tensor out = node(a).value;
    int aid = a.id;
    Var v = push(std::move(out), wants(a), nullptr);
    int vid = v.id;
    node(v).back = [aid, vid, c](Graph& g) {
        if (!g.nodes_[aid].needs_grad) return;
        const Tensor& dy = g.nodes_[vid].grad;
        for (size_t i = 0; i < dy.data.size(); ++i) g.nodes_[aid].grad.data[i] += c * dy.data[i];
    };
    return v;
}

// ------------------------------------------------------------- linear algebra

Graph::Var Graph::matmul(Var x, Var w) {
    check(x);
    check(w);
    const Tensor& xv = node(x).value;
    const Tensor& wv = node(w).value;
    require(xv.ndim() == 2 && wv.ndim() == 2, "matmul: expects 2-D operands");
    require(xv.shape[1] == wv.shape[0], "matmul: inner dimensions differ, " + shape_str(xv.shape) +
                                            " x " + shape_str(wv.shape));
    int B = xv.shape[0], I = xv.shape[1], O = wv.shape[1];
    Tensor out({B, O}, 0.0);
    for (int b = 0; b < B; ++b) {
        const double* xr = &xv.data[static_cast<size_t>(b) * I];
        double* yr = &out.data[static_cast<size_t>(b) * O];
        for (int i = 0; i < I; ++i) {
            double xi = xr[i];
            const double* wr = &wv.data[static_cast<size_t>(i) * O];
            for (int o = 0; o < O; ++o) yr[o] += xi * wr[o];
        }
    }
    int xid = x.id, wid = w.id;
    Var v = push(std::move(out), wants(x) || wants(w), nullptr);
    int vid = v.id;
    node(v).back = [xid, wid, vid, B, I, O](Graph& g) {
        const Tensor& dy = g.nodes_[vid].grad;
        const Tensor& xv2 = g.nodes_[xid].value;
        const Tensor& wv2 = g.nodes_[wid].value;
        if (g.nodes_[xid].needs_grad) {
            Tensor& dx = g.nodes_[xid].grad;
            for (int b = 0; b < B; ++b) {
                const double* dyr = &dy.data[static_cast<size_t>(b) * O];
                double* dxr = &dx.data[static_cast<size_t>(b) * I];
                for (int i = 0; i < I; ++i) {
                    const double* wr = &wv2.data[static_cast<size_t>(i) * O];
                    double acc = 0.0;
                    for (int o = 0; o < O; ++o) acc += dyr[o] * wr[o];
                    dxr[i] += acc;
                }
            }
        }
        if (g.nodes_[wid].needs_grad) {
            Tensor& dw = g.nodes_[wid].grad;
            for (int b = 0; b < B; ++b) {
                const double* xr = &xv2.data[static_cast<size_t>(b) * I];
                const double* dyr = &dy.data[static_cast<size_t>(b) * O];
                for (int i = 0; i < I; ++i) {
                    double xi = xr[i];
                    if (xi == 0.0) continue;
                    double* dwr = &dw.data[static_cast<size_t>(i) * O];
                    for (int o = 0; o < O; ++o) dwr[o] += xi * dyr[o];
                }
            }
        }
    };
    return v;
}

Graph::Var Graph::add_row_bias(Var x, Var b) {
    check(x);
    check(b);
    const Tensor& xv = node(x).value;
    const Tensor& bv = node(b).value;
    require(xv.ndim() == 2 && bv.ndim() == 1 && xv.shape[1] == bv.shape[0],
            "add_row_bias: bias shape " + shape_str(bv.shape) + " does not match " + shape_str(xv.shape));
    int B = xv.shape[0], O = xv.shape[1];
    Tensor out = xv;
    for (int r = 0; r < B; ++r)
        for (int o = 0; o < O; ++o) out.data[static_cast<size_t>(r) * O + o] += bv.data[o];
    int xid = x.id, bid = b.id;
    Var v = push(std::move(out), wants(x) || wants(b), nullptr);
    int vid = v.id;
    node(v).back = [xid, bid, vid, B, O](Graph& g) {
        const Tensor& dy = g.nodes_[vid].grad;
        if (g.nodes_[xid].needs_grad) {
            Tensor& dx = g.nodes_[xid].grad;
            for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
        }
        if (g.nodes_[bid].needs_grad) {
            Tensor& db = g.nodes_[bid].grad;
            for (int r = 0; r < B; ++r)
                for (int o = 0; o < O; ++o) db.data[o] += dy.data[static_cast<size_t>(r) * O + o];
        }
    };
    return v;
}

Graph::Var Graph::concat_cols(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& av = node(a).value;
    const Tensor& bv = node(b).value;
    require(av.ndim() == 2 && bv.ndim() == 2 && av.shape[0] == bv.shape[0],
            "concat_cols: row counts differ, " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    int B = av.shape[0], Fa = av.shape[1], Fb = bv.shape[1];
    Tensor out({B, Fa + Fb}, 0.0);
    for (int r = 0; r < B; ++r) {
        for (int i = 0; i < Fa; ++i) out.at2(r, i) = av.at2(r, i);
        for (int i = 0; i < Fb; ++i) out.at2(r, Fa + i) = bv.at2(r, i);
    }
    int aid = a.id, bid = b.id;
    Var v = push(std::move(out), wants(a) || wants(b), nullptr);
    int vid = v.id;
    node(v).back = [aid, bid, vid, B, Fa, Fb](Graph& g) {
        const Tensor& dy = g.nodes_[vid].grad;
        if (g.nodes_[aid].needs_grad) {
            Tensor& da = g.nodes_[aid].grad;
            for (int r = 0; r < B; ++r)
                for (int i = 0; i < Fa; ++i) da.at2(r, i) += dy.data[static_cast<size_t>(r) * (Fa + Fb) + i];
        }
        if (g.nodes_[bid].needs_grad) {
            Tensor& db = g.nodes_[bid].grad;
            for (int r = 0; r < B; ++r)
                for (int i = 0; i < Fb; ++i)
                    db.at2(r, i) += dy.data[static_cast<size_t>(r) * (Fa + Fb) + Fa + i];
        }
    };
    return v;
}

Graph::Var Graph::slice_cols(Var a, int from, int to) {
    check(a);
    const Tensor& av = node(a).value;
    require(av.ndim() == 2 && 0 <= from && from < to && to <= av.shape[1],
            "slice_cols: invalid range [" + std::to_string(from) + "," + std::to_string(to) + ") for " +
                shape_str(av.shape));
    int B = av.shape[0], F = av.shape[1], W = to - from;
    Tensor out({B, W}, 0.0);
    for (int r = 0; r < B; ++r)
        for (int i = 0; i < W; ++i) out.at2(r, i) = av.data[static_cast<size_t>(r) * F + from + i];
    int aid = a.id;
    Var v = push(std::move(out), wants(a), nullptr);
    int vid = v.id;
    node(v).back = [aid, vid, B, F, W, from](Graph& g) {
        if (!g.nodes_[aid].needs_grad) return;
        const Tensor& dy = g.nodes_[vid].grad;
        Tensor& da = g.nodes_[aid].grad;
        for (int r = 0; r < B; ++r)
            for (int i = 0; i < W; ++i)
                da.data[static_cast<size_t>(r) * F + from + i] += dy.data[static_cast<size_t>(r) * W + i];
    };
    return v;
}

Graph::Var Graph::reshape(Var a, std::vector<int> shape) {
    check(a);
    const Tensor& av = node(a).value;
    require(shape_numel(shape) == av.numel(),
            "reshape: cannot view " + shape_str(av.shape) + " as " + shape_str(shape));
    Tensor out = av;
    out.shape = shape;
    int aid = a.id;
    Var v = push(std::move(out), wants(a), nullptr);
    int vid = v.id;
    node(v).back = [aid, vid](Graph& g) {
        if (!g.nodes_[aid].needs_grad) return;
        const Tensor& dy = g.nodes_[vid].grad;
        Tensor& da = g.nodes_[aid].grad;
        for (size_t i = 0; i < dy.data.size(); ++i) da.data[i] += dy.data[i];
    };
    return v;
}

// ---------------------------------------------------------------- convolution

Graph::Var Graph::conv2d(Var x, Var w, Var b, int stride, int pad) {
    check(x);
    check(w);
    check(b);
    const Tensor& xv = node(x).value;
    const Tensor& wv = node(w).value;
    const Tensor& bv = node(b).value;
    require(xv.ndim() == 4 && wv.ndim() == 4, "conv2d: expects 4-D input and weight");
    require(xv.shape[1] == wv.shape[1], "conv2d: channel mismatch, input " + shape_str(xv.shape) +
                                            " weight " + shape_str(wv.shape));
    require(wv.shape[2] == wv.shape[3], "conv2d: kernel must be square");
    require(bv.ndim() == 1 && bv.shape[0] == wv.shape[0], "conv2d: bias size mismatch");
    int B = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    int O = wv.shape[0], K = wv.shape[2];
    require(stride >= 1 && pad >= 0, "conv2d: invalid stride/pad");
    require(H + 2 * pad >= K && W + 2 * pad >= K, "conv2d: kernel larger than padded input");
    int Ho = (H + 2 * pad - K) / stride + 1;
    int Wo = (W + 2 * pad - K) / stride + 1;
    Tensor out({B, O, Ho, Wo}, 0.0);
    for (int bb = 0; bb < B; ++bb)
        for (int o = 0; o < O; ++o)
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j) {
                    double acc = bv.data[o];
                    for (int c = 0; c < C; ++c)
                        for (int di = 0; di < K; ++di) {
                            int si = i * stride - pad + di;
                            if (si < 0 || si >= H) continue;
                            for (int dj = 0; dj < K; ++dj) {
                                int sj = j * stride - pad + dj;
                                if (sj < 0 || sj >= W) continue;
                                acc += xv.at4(bb, c, si, sj) * wv.at4(o, c, di, dj);
                            }
                        }
                    out.at4(bb, o, i, j) = acc;
                }
    int xid = x.id, wid = w.id, bid = b.id;
    Var v = push(std::move(out), wants(x) || wants(w) || wants(b), nullptr);
    int vid = v.id;
    node(v).back = [xid, wid, bid, vid, B, C, H, W, O, K, stride, pad](Graph& g) {
        const Tensor& dy = g.nodes_[vid].grad;
        const Tensor& xv2 = g.nodes_[xid].value;
        const Tensor& wv2 = g.nodes_[wid].value;
        int Ho = dy.shape[2], Wo = dy.shape[3];
        bool nx = g.nodes_[xid].needs_grad, nw = g.nodes_[wid].needs_grad, nb = g.nodes_[bid].needs_grad;
        for (int bb = 0; bb < B; ++bb)
            for (int o = 0; o < O; ++o)
                for (int i = 0; i < Ho; ++i)
                    for (int j = 0; j < Wo; ++j) {
                        double dyv = dy.at4(bb, o, i, j);
                        if (dyv == 0.0) continue;
                        if (nb) g.nodes_[bid].grad.data[o] += dyv;
                        for (int c = 0; c < C; ++c)
                            for (int di = 0; di < K; ++di) {
                                int si = i * stride - pad + di;
                                if (si < 0 || si >= H) continue;
                                for (int dj = 0; dj < K; ++dj) {
                                    int sj = j * stride - pad + dj;
                                    if (sj < 0 || sj >= W) continue;
                                    if (nx)
                                        g.nodes_[xid].grad.at4(bb, c, si, sj) += dyv * wv2.at4(o, c, di, dj);
                                    if (nw)
                                        g.nodes_[wid].grad.at4(o, c, di, dj) += dyv * xv2.at4(bb, c, si, sj);
                                }
                            }
                    }
    };
    return v;
}

Graph::Var Graph::conv_transpose2d(Var x, Var w, Var b, int stride, int pad) {
    check(x);
    check(w);
    check(b);
    const Tensor& xv = node(x).value;
    const Tensor& wv = node(w).value;
    const Tensor& bv = node(b).value;
    require(xv.ndim() == 4 && wv.ndim() == 4, "conv_transpose2d: expects 4-D input and weight");
    require(xv.shape[1] == wv.shape[0], "conv_transpose2d: channel mismatch, input " + shape_str(xv.shape) +
                                            " weight " + shape_str(wv.shape));
    require(wv.shape[2] == wv.shape[3], "conv_transpose2d: kernel must be square");
    require(bv.ndim() == 1 && bv.shape[0] == wv.shape[1], "conv_transpose2d: bias size mismatch");
    int B = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    int O = wv.shape[1], K = wv.shape[2];
    int Ho = (H - 1) * stride - 2 * pad + K;
    int Wo = (W - 1) * stride - 2 * pad + K;
    require(Ho > 0 && Wo > 0, "conv_transpose2d: output size is not positive");
    Tensor out({B, O, Ho, Wo}, 0.0);
    for (int bb = 0; bb < B; ++bb) {
        for (int o = 0; o < O; ++o)
            for (int i = 0; i < Ho; ++i)
                for (int j = 0; j < Wo; ++j) out.at4(bb, o, i, j) = bv.data[o];
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    double xvv = xv.at4(bb, c, i, j);
                    if (xvv == 0.0) continue;
                    for (int o = 0; o < O; ++o)
                        for (int di = 0; di < K; ++di) {
                            int oi = i * stride - pad + di;
                            if (oi < 0 || oi >= Ho) continue;
                            for (int dj = 0; dj < K; ++dj) {
                                int oj = j * stride - pad + dj;
                                if (oj < 0 || oj >= Wo) continue;
                                out.at4(bb, o, oi, oj) += xvv * wv.at4(c, o, di, dj);
                            }
                        }
                }
    }
    int xid = x.id, wid = w.id, bid = b.id;
    Var v = push(std::move(out), wants(x) || wants(w) || wants(b), nullptr);
    int vid = v.id;
    node(v).back = [xid, wid, bid, vid, B, C, H, W, O, K, stride, pad](Graph& g) {
        const Tensor& dy = g.nodes_[vid].grad;
        const Tensor& xv2 = g.nodes_[xid].value;
        const Tensor& wv2 = g.nodes_[wid].value;
        int Ho = dy.shape[2], Wo = dy.shape[3];
        bool nx = g.nodes_[xid].needs_grad, nw = g.nodes_[wid].needs_grad, nb = g.nodes_[bid].needs_grad;
        if (nb) {
            Tensor& db = g.nodes_[bid].grad;
            for (int bb = 0; bb < B; ++bb)
                for (int o = 0; o < O; ++o)
                    for (int i = 0; i < Ho; ++i)
                        for (int j = 0; j < Wo; ++j) db.data[o] += dy.at4(bb, o, i, j);
        }
        for (int bb = 0; bb < B; ++bb)
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j) {
                        for (int o = 0; o < O; ++o)
                            for (int di = 0; di < K; ++di) {
                                int oi = i * stride - pad + di;
                                if (oi < 0 || oi >= Ho) continue;
                                for (int dj = 0; dj < K; ++dj) {
                                    int oj = j * stride - pad + dj;
                                    if (oj < 0 || oj >= Wo) continue;
                                    double dyv = dy.at4(bb, o, oi, oj);
                                    if (dyv == 0.0) continue;
                                    if (nx) g.nodes_[xid].grad.at4(bb, c, i, j) += dyv * wv2.at4(c, o, di, dj);
                                    if (nw) g.nodes_[wid].grad.at4(c, o, di, dj) += dyv * xv2.at4(bb, c, i, j);
                                }
                            }
                    }
    };
    return v;
}

// -------------------------------------------------------------- normalization

Graph::Var Graph::batchnorm(Var x, Var gamma, Var beta, Tensor& run_mean, Tensor& run_var,
                            bool train, double momentum, double eps) {
    check(x);
    check(gamma);
    check(beta);
    const Tensor& xv = node(x).value;
    require(xv.ndim() == 2 || xv.ndim() == 4, "batchnorm: expects [B,F] or [B,C,H,W]");
    int F = xv.shape[1];
    require(node(gamma).value.numel() == F && node(beta).value.numel() == F &&
                run_mean.numel() == F && run_var.numel() == F,
            "batchnorm: parameter size mismatch for " + std::to_string(F) + " channels");
    // group count per channel: B (dense) or B*H*W (conv)
    int B = xv.shape[0];
    int HW = xv.ndim() == 4 ? xv.shape[2] * xv.shape[3] : 1;
    int N = B * HW;
    std::vector<double> mean(static_cast<size_t>(F), 0.0), var(static_cast<size_t>(F), 0.0);

    auto channel_of = [&](size_t flat) -> int {
        if (xv.ndim() == 2) return static_cast<int>(flat % static_cast<size_t>(F));
        return static_cast<int>((flat / static_cast<size_t>(HW)) % static_cast<size_t>(F));
    };

    if (train) {
        for (size_t i = 0; i < xv.data.size(); ++i) mean[static_cast<size_t>(channel_of(i))] += xv.data[i];
        for (int f = 0; f < F; ++f) mean[static_cast<size_t>(f)] /= N;
        for (size_t i = 0; i < xv.data.size(); ++i) {
            double d = xv.data[i] - mean[static_cast<size_t>(channel_of(i))];
            var[static_cast<size_t>(channel_of(i))] += d * d;
        }
        for (int f = 0; f < F; ++f) var[static_cast<size_t>(f)] /= N;
        for (int f = 0; f < F; ++f) {
            run_mean.data[static_cast<size_t>(f)] =
                (1.0 - momentum) * run_mean.data[static_cast<size_t>(f)] + momentum * mean[static_cast<size_t>(f)];
            run_var.data[static_cast<size_t>(f)] =
                (1.0 - momentum) * run_var.data[static_cast<size_t>(f)] + momentum * var[static_cast<size_t>(f)];
        }
    } else {
        for (int f = 0; f < F; ++f) {
            mean[static_cast<size_t>(f)] = run_mean.data[static_cast<size_t>(f)];
            var[static_cast<size_t>(f)] = run_var.data[static_cast<size_t>(f)];
        }
    }

    const Tensor& gv = node(gamma).value;
    const Tensor& bv = node(beta).value;
    Tensor out = xv;
    Tensor xhat = xv;  // stored for backward via closure copy
    for (size_t i = 0; i < out.data.size(); ++i) {
        int f = channel_of(i);
        double inv = 1.0 / std::sqrt(var[static_cast<size_t>(f)] + eps);
        double xh = (xv.data[i] - mean[static_cast<size_t>(f)]) * inv;
        xhat.data[i] = xh;
        out.data[i] = gv.data[static_cast<size_t>(f)] * xh + bv.data[static_cast<size_t>(f)];
    }
    int xid = x.id, gid = gamma.id, bid = beta.id;
    Var v = push(std::move(out), wants(x) || wants(gamma) || wants(beta), nullptr);
    int vid = v.id;
    std::vector<double> inv_std(static_cast<size_t>(F));
    for (int f = 0; f < F; ++f) inv_std[static_cast<size_t>(f)] = 1.0 / std::sqrt(var[static_cast<size_t>(f)] + eps);
    node(v).back = [xid, gid, bid, vid, F, HW, N, train, xhat, inv_std](Graph& g) {
        const Tensor& dy = g.nodes_[vid].grad;
        const Tensor& gv2 = g.nodes_[gid].value;
        int ndim = g.nodes_[xid].value.ndim();
        auto channel_of2 = [&](size_t flat) -> int {
            if (ndim == 2) return static_cast<int>(flat % static_cast<size_t>(F));
            return static_cast<int>((flat / static_cast<size_t>(HW)) % static_cast<size_t>(F));
        };
        std::vector<double> sum_dy(static_cast<size_t>(F), 0.0), sum_dy_xh(static_cast<size_t>(F), 0.0);
        for (size_t i = 0; i < dy.data.size(); ++i) {
            int f = channel_of2(i);
            sum_dy[static_cast<size_t>(f)] += dy.data[i];
            sum_dy_xh[static_cast<size_t>(f)] += dy.data[i] * xhat.data[i];
        }
        if (g.nodes_[gid].needs_grad)
            for (int f = 0; f < F; ++f) g.nodes_[gid].grad.data[static_cast<size_t>(f)] += sum_dy_xh[static_cast<size_t>(f)];
        if (g.nodes_[bid].needs_grad)
            for (int f = 0; f < F; ++f) g.nodes_[bid].grad.data[static_cast<size_t>(f)] += sum_dy[static_cast<size_t>(f)];
        if (g.nodes_[xid].needs_grad) {
            Tensor& dx = g.nodes_[xid].grad;
            if (train) {
                for (size_t i = 0; i < dy.data.size(); ++i) {
                    int f = channel_of2(i);
                    double go = gv2.data[static_cast<size_t>(f)] * inv_std[static_cast<size_t>(f)];
                    dx.data[i] += go * (dy.data[i] - sum_dy[static_cast<size_t>(f)] / N -
                                        xhat.data[i] * sum_dy_xh[static_cast<size_t>(f)] / N);
                }
            } else {
                for (size_t i = 0; i < dy.data.size(); ++i) {
                    int f = channel_of2(i);
                    dx.data[i] += dy.data[i] * gv2.data[static_cast<size_t>(f)] * inv_std[static_cast<size_t>(f)];
                }
            }
        }
    };
    return v;
}

// --------------------------------------------------------------- binarization

Graph::Var Graph::straight_through(Var zbar, double sigma) {
    check(zbar);
    require(sigma > 0.0, "straight_through: sigma must be positive");
    const Tensor& zv = node(zbar).value;
    Tensor out = zv;
    for (double& x : out.data) x = std::floor(x + 0.5);  // 0.5 rounds up
    int zid = zbar.id;
    Var v = push(std::move(out), wants(zbar), nullptr);
    int vid = v.id;
    node(v).back = [zid, vid, sigma](Graph& g) {
        if (!g.nodes_[zid].needs_grad) return;
        const Tensor& dy = g.nodes_[vid].grad;
        const Tensor& zv2 = g.nodes_[zid].value;
        Tensor& dz = g.nodes_[zid].grad;
        for (size_t i = 0; i < dy.data.size(); ++i) {
            double zdot = logistic(sigma * (2.0 * zv2.data[i] - 1.0));
            dz.data[i] += dy.data[i] * 2.0 * sigma * zdot * (1.0 - zdot);
        }
    };
    return v;
}

Graph::Var Graph::grid_embed(Var z, int g_) {
    check(z);
    const Tensor& zv = node(z).value;
    require(zv.ndim() == 2, "grid_embed: expects [B,m] codes");
    int B = zv.shape[0], m = zv.shape[1];
    require(g_ * g_ >= m, "grid_embed: grid " + std::to_string(g_) + "x" + std::to_string(g_) +
                              " cannot hold " + std::to_string(m) + " bits");
    Tensor out({B, 1, g_, g_}, 0.0);
    for (int b = 0; b < B; ++b)
        for (int p = 0; p < m; ++p) out.data[static_cast<size_t>(b) * g_ * g_ + p] = zv.at2(b, p);
    int zid = z.id;
    Var v = push(std::move(out), wants(z), nullptr);
    int vid = v.id;
    node(v).back = [zid, vid, B, m, g_](Graph& g) {
        if (!g.nodes_[zid].needs_grad) return;
        const Tensor& dy = g.nodes_[vid].grad;
        Tensor& dz = g.nodes_[zid].grad;
        for (int b = 0; b < B; ++b)
            for (int p = 0; p < m; ++p) dz.at2(b, p) += dy.data[static_cast<size_t>(b) * g_ * g_ + p];
    };
    return v;
}

// ------------------------------------------------------- reductions and losses

Graph::Var Graph::sum_all(Var a) {
    check(a);
    double s = 0.0;
    for (double x : node(a).value.data) s += x;
    int aid = a.id;
    Var v = push(Tensor::scalar(s), wants(a), nullptr);
    int vid = v.id;
    node(v).back = [aid, vid](Graph& g) {
        if (!g.nodes_[aid].needs_grad) return;
        double dy = g.nodes_[vid].grad.data[0];
        for (double& d : g.nodes_[aid].grad.data) d += dy;
    };
    return v;
}

Graph::Var Graph::mean_all(Var a) {
    check(a);
    const Tensor& av = node(a).value;
    double s = 0.0;
    for (double x : av.data) s += x;
    double n = static_cast<double>(av.numel());
    int aid = a.id;
    Var v = push(Tensor::scalar(s / n), wants(a), nullptr);
    int vid = v.id;
    node(v).back = [aid, vid, n](Graph& g) {
        if (!g.nodes_[aid].needs_grad) return;
        double dy = g.nodes_[vid].grad.data[0] / n;
        for (double& d : g.nodes_[aid].grad.data) d += dy;
    };
    return v;
}

Graph::Var Graph::sse_loss(Var pred, Var target) {
    check(pred);
    check(target);
    const Tensor& pv = node(pred).value;
    const Tensor& tv = node(target).value;
    require(pv.same_shape(tv), "sse_loss: shape mismatch " + shape_str(pv.shape) + " vs " + shape_str(tv.shape));
    int B = pv.shape[0];
    double s = 0.0;
    for (size_t i = 0; i < pv.data.size(); ++i) {
        double d = pv.data[i] - tv.data[i];
        s += d * d;
    }
    int pid = pred.id, tid = target.id;
    Var v = push(Tensor::scalar(s / B), wants(pred) || wants(target), nullptr);
    int vid = v.id;
    node(v).back = [pid, tid, vid, B](Graph& g) {
        double dy = g.nodes_[vid].grad.data[0];
        const Tensor& pv2 = g.nodes_[pid].value;
        const Tensor& tv2 = g.nodes_[tid].value;
        if (g.nodes_[pid].needs_grad) {
            Tensor& dp = g.nodes_[pid].grad;
            for (size_t i = 0; i < pv2.data.size(); ++i)
                dp.data[i] += dy * 2.0 * (pv2.data[i] - tv2.data[i]) / B;
        }
        if (g.nodes_[tid].needs_grad) {
            Tensor& dt = g.nodes_[tid].grad;
            for (size_t i = 0; i < pv2.data.size(); ++i)
                dt.data[i] -= dy * 2.0 * (pv2.data[i] - tv2.data[i]) / B;
        }
    };
    return v;
}

Graph::Var Graph::bernoulli_nll(Var pred, Var target) {
    check(pred);
    check(target);
    const Tensor& pv = node(pred).value;
    const Tensor& tv = node(target).value;
    require(pv.same_shape(tv), "bernoulli_nll: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < pv.data.size(); ++i) {
        double p = clamp_prob(pv.data[i]);
        double t = tv.data[i];
        s -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    double n = static_cast<double>(pv.numel());
    int pid = pred.id, tid = target.id;
    Var v = push(Tensor::scalar(s / n), wants(pred), nullptr);
    int vid = v.id;
    node(v).back = [pid, tid, vid, n](Graph& g) {
        if (!g.nodes_[pid].needs_grad) return;
        double dy = g.nodes_[vid].grad.data[0];
        const Tensor& pv2 = g.nodes_[pid].value;
        const Tensor& tv2 = g.nodes_[tid].value;
        Tensor& dp = g.nodes_[pid].grad;
        for (size_t i = 0; i < pv2.data.size(); ++i) {
            double raw = pv2.data[i];
            if (raw < 1e-7 || raw > 1.0 - 1e-7) continue;  // flat in the clamp region
            dp.data[i] += dy * (raw - tv2.data[i]) / (raw * (1.0 - raw)) / n;
        }
    };
    return v;
}

Graph::Var Graph::softmax_ce(Var logits, const std::vector<int>& labels) {
    check(logits);
    const Tensor& lv = node(logits).value;
    require(lv.ndim() == 2, "softmax_ce: expects [B,C] logits");
    int B = lv.shape[0], C = lv.shape[1];
    require(static_cast<int>(labels.size()) == B, "softmax_ce: label count mismatch");
    Tensor probs({B, C}, 0.0);
    double loss = 0.0;
    for (int b = 0; b < B; ++b) {
        require(labels[static_cast<size_t>(b)] >= 0 && labels[static_cast<size_t>(b)] < C,
                "softmax_ce: label out of range");
        double mx = lv.at2(b, 0);
        for (int c = 1; c < C; ++c) mx = std::max(mx, lv.at2(b, c));
        double z = 0.0;
        for (int c = 0; c < C; ++c) z += std::exp(lv.at2(b, c) - mx);
        double logz = std::log(z) + mx;
        for (int c = 0; c < C; ++c) probs.at2(b, c) = std::exp(lv.at2(b, c) - logz);
        loss -= lv.at2(b, labels[static_cast<size_t>(b)]) - logz;
    }
    int lid = logits.id;
    std::vector<int> lab = labels;
    Var v = push(Tensor::scalar(loss / B), wants(logits), nullptr);
    int vid = v.id;
    node(v).back = [lid, vid, B, C, probs, lab](Graph& g) {
        if (!g.nodes_[lid].needs_grad) return;
        double dy = g.nodes_[vid].grad.data[0];
        Tensor& dl = g.nodes_[lid].grad;
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                double p = probs.at2(b, c) - (c == lab[static_cast<size_t>(b)] ? 1.0 : 0.0);
                dl.at2(b, c) += dy * p / B;
            }
    };
    return v;
}

Graph::Var Graph::bit_ce(Var q, Var z, const std::vector<uint8_t>& active) {
    check(q);
    check(z);
    const Tensor& qv = node(q).value;
    const Tensor& zv = node(z).value;
    require(qv.same_shape(zv), "bit_ce: q and z shapes differ");
    require(qv.ndim() == 4 && qv.shape[1] == 1, "bit_ce: expects [B,1,g,g] grids");
    int B = qv.shape[0];
    int P = qv.shape[2] * qv.shape[3];
    require(static_cast<int>(active.size()) == P, "bit_ce: active mask size mismatch");
    double s = 0.0;
    for (int b = 0; b < B; ++b)
        for (int p = 0; p < P; ++p) {
            if (!active[static_cast<size_t>(p)]) continue;
            double qq = clamp_prob(qv.data[static_cast<size_t>(b) * P + p]);
            double zz = zv.data[static_cast<size_t>(b) * P + p];
            s -= zz * std::log(qq) + (1.0 - zz) * std::log(1.0 - qq);
        }
    int qid = q.id, zid = z.id;
    std::vector<uint8_t> act = active;
    Var v = push(Tensor::scalar(s / B), wants(q) || wants(z), nullptr);
    int vid = v.id;
    node(v).back = [qid, zid, vid, B, P, act](Graph& g) {
        double dy = g.nodes_[vid].grad.data[0];
        const Tensor& qv2 = g.nodes_[qid].value;
        const Tensor& zv2 = g.nodes_[zid].value;
        bool nq = g.nodes_[qid].needs_grad, nz = g.nodes_[zid].needs_grad;
        for (int b = 0; b < B; ++b)
            for (int p = 0; p < P; ++p) {
                if (!act[static_cast<size_t>(p)]) continue;
                size_t i = static_cast<size_t>(b) * P + p;
                double raw = qv2.data[i];
                double qq = clamp_prob(raw);
                double zz = zv2.data[i];
                if (nq && raw >= 1e-7 && raw <= 1.0 - 1e-7)
                    g.nodes_[qid].grad.data[i] += dy * (qq - zz) / (qq * (1.0 - qq)) / B;
                if (nz) {
                    // pressure on the code itself is capped at ln(19) nats
                    // per bit: a confident estimator strips worthless bits
                    // (their reconstruction pull is zero) but must not outpull
                    // a bit the decoder relies on
                    double qz = raw < 0.05 ? 0.05 : (raw > 0.95 ? 0.95 : raw);
                    g.nodes_[zid].grad.data[i] += dy * std::log((1.0 - qz) / qz) / B;
                }
            }
    };
    return v;
}

Graph::Var Graph::gauss_kl(Var mu, Var logvar) {
    check(mu);
    check(logvar);
    const Tensor& mv = node(mu).value;
    const Tensor& lv = node(logvar).value;
    require(mv.same_shape(lv), "gauss_kl: mu/logvar shapes differ");
    require(mv.ndim() == 2, "gauss_kl: expects [B,m]");
    int B = mv.shape[0];
    double s = 0.0;
    for (size_t i = 0; i < mv.data.size(); ++i)
        s += 0.5 * (mv.data[i] * mv.data[i] + std::exp(lv.data[i]) - lv.data[i] - 1.0);
    int mid = mu.id, lid = logvar.id;
    Var v = push(Tensor::scalar(s / B), wants(mu) || wants(logvar), nullptr);
    int vid = v.id;
    node(v).back = [mid, lid, vid, B](Graph& g) {
        double dy = g.nodes_[vid].grad.data[0];
        const Tensor& mv2 = g.nodes_[mid].value;
        const Tensor& lv2 = g.nodes_[lid].value;
        if (g.nodes_[mid].needs_grad) {
            Tensor& dm = g.nodes_[mid].grad;
            for (size_t i = 0; i < mv2.data.size(); ++i) dm.data[i] += dy * mv2.data[i] / B;
        }
        if (g.nodes_[lid].needs_grad) {
            Tensor& dl = g.nodes_[lid].grad;
            for (size_t i = 0; i < lv2.data.size(); ++i)
                dl.data[i] += dy * 0.5 * (std::exp(lv2.data[i]) - 1.0) / B;
        }
    };
    return v;
}

}  // namespace fbc
