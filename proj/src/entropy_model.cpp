#include "fbc/entropy_model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fbc {

CausalMask make_mask(char kind, int c) {
    if (kind != 'A' && kind != 'B') throw std::invalid_argument("make_mask: kind must be 'A' or 'B'");
    if (c < 1 || c % 2 == 0)
        throw std::invalid_argument("make_mask: mask size must be odd and positive, got " +
                                    std::to_string(c));
    CausalMask m;
    m.kind = kind;
    m.size = c;
    m.mask = Tensor({c, c}, 0.0);
    int center = (c * c) / 2;  // raster index of the center cell
    for (int r = 0; r < c; ++r)
        for (int col = 0; col < c; ++col) {
            int raster = r * c + col;
            if (raster < center || (kind == 'B' && raster == center)) m.mask.at2(r, col) = 1.0;
        }
    return m;
}

int grid_side_for(int code_bits) {
    if (code_bits < 1) throw std::invalid_argument("grid_side_for: need at least one bit");
    int g = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(code_bits))));
    while (g * g < code_bits) ++g;
    return g;
}

std::vector<uint8_t> active_mask_for(int code_bits, int side) {
    if (side * side < code_bits) throw std::invalid_argument("active_mask_for: grid too small");
    std::vector<uint8_t> a(static_cast<size_t>(side) * side, 0);
    for (int i = 0; i < code_bits; ++i) a[static_cast<size_t>(i)] = 1;
    return a;
}

CodeGrid make_code_grid(const std::vector<double>& bits) {
    CodeGrid cg;
    cg.bits = static_cast<int>(bits.size());
    cg.side = grid_side_for(cg.bits);
    cg.grid = Tensor({cg.side, cg.side}, 0.0);
    for (int i = 0; i < cg.bits; ++i) {
        if (bits[static_cast<size_t>(i)] != 0.0 && bits[static_cast<size_t>(i)] != 1.0)
            throw std::invalid_argument("make_code_grid: entries must be exactly 0 or 1");
        cg.grid.data[static_cast<size_t>(i)] = bits[static_cast<size_t>(i)];
    }
    cg.active = active_mask_for(cg.bits, cg.side);
    return cg;
}

EntropyModel::EntropyModel(EntropyModelConfig cfg) : cfg_(cfg) {
    if (cfg_.code_bits < 1) throw std::invalid_argument("entropy model: code_bits must be positive");
    if (cfg_.channels < 1) throw std::invalid_argument("entropy model: channels must be positive");
    if (cfg_.stages < 1) throw std::invalid_argument("entropy model: needs at least one stage");
    make_mask('A', cfg_.mask_size);  // validates the size
    side_ = grid_side_for(cfg_.code_bits);
    active_ = active_mask_for(cfg_.code_bits, side_);
}

Tensor EntropyModel::expanded_mask(int stage) const {
    CausalMask m = make_mask(stage == 0 ? 'A' : 'B', cfg_.mask_size);
    int in = stage_in(stage), out = cfg_.channels;
    Tensor w({out, in, cfg_.mask_size, cfg_.mask_size}, 0.0);
    for (int o = 0; o < out; ++o)
        for (int i = 0; i < in; ++i)
            for (int r = 0; r < cfg_.mask_size; ++r)
                for (int c = 0; c < cfg_.mask_size; ++c) w.at4(o, i, r, c) = m.mask.at2(r, c);
    return w;
}

void EntropyModel::init_params(Rng& rng) {
    params_ = ParameterSet{};
    fixed_w_.clear();
    fixed_b_.clear();
    stage_mask_.clear();
    run_mean_.assign(static_cast<size_t>(cfg_.stages), Tensor({cfg_.channels}, 0.0));
    run_var_.assign(static_cast<size_t>(cfg_.stages), Tensor({cfg_.channels}, 1.0));
    for (int s = 0; s < cfg_.stages; ++s) {
        Tensor mask = expanded_mask(s);
        stage_mask_.push_back(mask);
        if (cfg_.mode == FilterMode::paper_literal) {
            fixed_w_.push_back(mask);
            fixed_b_.push_back(Tensor({cfg_.channels}, 0.0));
        } else {
            int fan = stage_in(s) * cfg_.mask_size * cfg_.mask_size;
            double b = glorot_bound(fan, cfg_.channels * cfg_.mask_size * cfg_.mask_size);
            Tensor w = mask;
            for (size_t i = 0; i < w.data.size(); ++i)
                w.data[i] = mask.data[i] != 0.0 ? rng.uniform(-b, b) : 0.0;
            params_.add("ent.s" + std::to_string(s) + ".w", std::move(w));
            params_.add("ent.s" + std::to_string(s) + ".b", Tensor({cfg_.channels}, 0.0));
        }
        params_.add("ent.s" + std::to_string(s) + ".gamma", Tensor({cfg_.channels}, 1.0));
        params_.add("ent.s" + std::to_string(s) + ".beta", Tensor({cfg_.channels}, 0.0));
    }
    double b = glorot_bound(cfg_.channels, 1);
    Tensor w({1, cfg_.channels, 1, 1}, 0.0);
    for (double& x : w.data) x = rng.uniform(-b, b);
    params_.add("ent.head.w", std::move(w));
    params_.add("ent.head.b", Tensor({1}, 0.0));
}

Tensor EntropyModel::codes_to_grids(const Tensor& codes) const {
    if (codes.ndim() != 2 || codes.shape[1] != cfg_.code_bits)
        throw std::invalid_argument("entropy model: expected [N," + std::to_string(cfg_.code_bits) +
                                    "] codes, got " + shape_str(codes.shape));
    int n = codes.shape[0], gg = side_ * side_;
    Tensor grids({n, 1, side_, side_}, 0.0);
    for (int r = 0; r < n; ++r)
        for (int i = 0; i < cfg_.code_bits; ++i)
            grids.data[static_cast<size_t>(r) * gg + i] = codes.at2(r, i);
    return grids;
}

Graph::Var EntropyModel::predict_on(Graph& g, Graph::Var grids, bool train, BoundParams& bp) {
    const Tensor& gv = g.value(grids);
    if (gv.ndim() != 4 || gv.shape[1] != 1 || gv.shape[2] != side_ || gv.shape[3] != side_)
        throw std::invalid_argument("entropy model: expected [B,1," + std::to_string(side_) + "," +
                                    std::to_string(side_) + "] grids, got " + shape_str(gv.shape));
    if (run_mean_.empty()) throw std::logic_error("entropy model: predict before init_params");
    int pad = (cfg_.mask_size - 1) / 2;
    Graph::Var h = grids;
    for (int s = 0; s < cfg_.stages; ++s) {
        Graph::Var w, b;
        if (cfg_.mode == FilterMode::paper_literal) {
            w = g.constant(fixed_w_[static_cast<size_t>(s)]);
            b = g.constant(fixed_b_[static_cast<size_t>(s)]);
        } else {
            w = bp.bind(g, *params_.find("ent.s" + std::to_string(s) + ".w"));
            b = bp.bind(g, *params_.find("ent.s" + std::to_string(s) + ".b"));
        }
        h = g.conv2d(h, w, b, /*stride=*/1, pad);
        Graph::Var gamma = bp.bind(g, *params_.find("ent.s" + std::to_string(s) + ".gamma"));
        Graph::Var beta = bp.bind(g, *params_.find("ent.s" + std::to_string(s) + ".beta"));
        h = g.batchnorm(h, gamma, beta, run_mean_[static_cast<size_t>(s)], run_var_[static_cast<size_t>(s)],
                        train);
        h = g.relu(h);
    }
    Graph::Var hw = bp.bind(g, *params_.find("ent.head.w"));
    Graph::Var hb = bp.bind(g, *params_.find("ent.head.b"));
    return g.sigmoid(g.conv2d(h, hw, hb, /*stride=*/1, /*pad=*/0));
}

Tensor EntropyModel::predict_conditionals(const Tensor& grids) {
    Graph g;
    BoundParams bp;
    Graph::Var in = g.constant(grids);
    Graph::Var q = predict_on(g, in, /*train=*/false, bp);
    Tensor out = g.value(q);
    // the head sigmoid can saturate in float; conditionals are clamped to
    // the same [1e-7, 1-1e-7] band the cross-entropy uses
    for (double& v : out.data) v = v < 1e-7 ? 1e-7 : (v > 1.0 - 1e-7 ? 1.0 - 1e-7 : v);
    return out;
}

double EntropyModel::code_cross_entropy(const Tensor& grids) {
    if (grids.ndim() != 4 || grids.shape[0] < 1)
        throw std::invalid_argument("code_cross_entropy: non-empty [B,1,g,g] batch required");
    Graph g;
    BoundParams bp;
    Graph::Var in = g.constant(grids);
    Graph::Var q = predict_on(g, in, /*train=*/false, bp);
    Graph::Var ce = g.bit_ce(q, in, active_);
    return g.value(ce).data[0];
}

double EntropyModel::fit_step(const Tensor& grids, double lr) {
    Graph g;
    BoundParams bp;
    Graph::Var in = g.constant(grids);
    Graph::Var q = predict_on(g, in, /*train=*/true, bp);
    Graph::Var ce = g.bit_ce(q, in, active_);
    g.backward(ce);
    bp.pull_grads(g);
    mask_gradients();
    adam_step(params_, lr);
    return g.value(ce).data[0];
}

void EntropyModel::mask_gradients() {
    if (cfg_.mode != FilterMode::masked_learnable) return;
    for (int s = 0; s < cfg_.stages; ++s) {
        Param* w = params_.find("ent.s" + std::to_string(s) + ".w");
        const Tensor& mask = stage_mask_[static_cast<size_t>(s)];
        for (size_t i = 0; i < w->grad.data.size(); ++i)
            if (mask.data[i] == 0.0) w->grad.data[i] = 0.0;
    }
}

std::vector<std::pair<std::string, Tensor*>> EntropyModel::state_tensors() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& p : params_.params) out.emplace_back(p.name, &p.value);
    for (int s = 0; s < cfg_.stages; ++s) {
        out.emplace_back("ent.s" + std::to_string(s) + ".run_mean", &run_mean_[static_cast<size_t>(s)]);
        out.emplace_back("ent.s" + std::to_string(s) + ".run_var", &run_var_[static_cast<size_t>(s)]);
    }
    return out;
}

}  // namespace fbc
