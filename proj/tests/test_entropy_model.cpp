#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fbc/entropy_model.hpp"
#include "fbc/info_oracle.hpp"

using namespace fbc;

namespace {

Tensor random_grids(EntropyModel& em, int n, Rng& rng) {
    int m = em.config().code_bits;
    Tensor codes({n, m}, 0.0);
    for (double& v : codes.data) v = rng.below(2);
    return em.codes_to_grids(codes);
}

EntropyModel fresh_model(int bits, FilterMode mode, uint64_t seed = 3) {
    EntropyModelConfig cfg;
    cfg.code_bits = bits;
    cfg.mode = mode;
    EntropyModel em(cfg);
    Rng rng(seed);
    em.init_params(rng);
    return em;
}

}  // namespace

TEST_CASE("causal masks match the raster-order definition") {
    CausalMask a = make_mask('A', 3);
    std::vector<double> expect_a = {1, 1, 1, 1, 0, 0, 0, 0, 0};
    CHECK(a.mask.data == expect_a);
    CausalMask b = make_mask('B', 3);
    std::vector<double> expect_b = {1, 1, 1, 1, 1, 0, 0, 0, 0};
    CHECK(b.mask.data == expect_b);
    CausalMask b1 = make_mask('B', 1);
    CHECK(b1.mask.data == std::vector<double>{1});
    CausalMask a5 = make_mask('A', 5);
    CHECK(a5.mask.at2(2, 1) == 1.0);  // just before center
    CHECK(a5.mask.at2(2, 2) == 0.0);  // center excluded
    CHECK(a5.mask.at2(2, 3) == 0.0);
    CHECK_THROWS_AS(make_mask('A', 4), std::invalid_argument);
    CHECK_THROWS_AS(make_mask('C', 3), std::invalid_argument);
}

TEST_CASE("grid layout pads to the next perfect square") {
    CHECK(grid_side_for(10) == 4);
    CHECK(grid_side_for(8) == 3);
    CHECK(grid_side_for(24) == 5);
    CHECK(grid_side_for(9) == 3);
    CodeGrid cg = make_code_grid({1, 0, 1, 1, 0, 1, 0, 0, 1, 1});
    CHECK(cg.side == 4);
    int active = 0;
    for (uint8_t a : cg.active) active += a;
    CHECK(active == 10);
    // raster order of active positions reproduces the bit order; pads are 0
    CHECK(cg.grid.data[0] == 1.0);
    CHECK(cg.grid.data[9] == 1.0);
    for (int i = 10; i < 16; ++i) CHECK(cg.grid.data[static_cast<size_t>(i)] == 0.0);
}

TEST_CASE("untrained estimator with zeroed head predicts one half everywhere") {
    EntropyModel em = fresh_model(9, FilterMode::paper_literal);
    em.params().find("ent.head.w")->value.fill(0.0);
    em.params().find("ent.head.b")->value.fill(0.0);
    Rng rng(1);
    Tensor grids = random_grids(em, 4, rng);
    Tensor q = em.predict_conditionals(grids);
    for (double v : q.data) CHECK(v == 0.5);

    // q = 0.5 at all m = 4 active positions -> CE = 4 ln 2
    EntropyModel em4 = fresh_model(4, FilterMode::paper_literal);
    em4.params().find("ent.head.w")->value.fill(0.0);
    em4.params().find("ent.head.b")->value.fill(0.0);
    Rng rng2(2);
    Tensor g4 = random_grids(em4, 8, rng2);
    CHECK(em4.code_cross_entropy(g4) == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("conditionals stay strictly inside (0,1)") {
    for (FilterMode mode : {FilterMode::paper_literal, FilterMode::masked_learnable}) {
        EntropyModel em = fresh_model(25, mode);
        Rng rng(4);
        Tensor q = em.predict_conditionals(random_grids(em, 6, rng));
        for (double v : q.data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("exact causality: flipping bit j never changes q_i for i <= j") {
    for (FilterMode mode : {FilterMode::paper_literal, FilterMode::masked_learnable}) {
        CAPTURE(static_cast<int>(mode));
        EntropyModel em = fresh_model(25, mode, 11);
        // a few light training steps so learnable weights are not at their init
        Rng rng(5);
        for (int it = 0; it < 5; ++it) em.fit_step(random_grids(em, 16, rng), 1e-3);
        int violations = 0;
        for (int trial = 0; trial < 60; ++trial) {
            Tensor grids = random_grids(em, 1, rng);
            Tensor q0 = em.predict_conditionals(grids);
            for (int j = 0; j < 25; ++j) {
                Tensor flipped = grids;
                flipped.data[static_cast<size_t>(j)] = 1.0 - flipped.data[static_cast<size_t>(j)];
                Tensor q1 = em.predict_conditionals(flipped);
                for (int i = 0; i <= j; ++i)
                    if (q1.data[static_cast<size_t>(i)] != q0.data[static_cast<size_t>(i)]) ++violations;
            }
        }
        CHECK(violations == 0);
    }
}

TEST_CASE("flipping the last raster bit leaves q at position 0 unchanged") {
    EntropyModel em = fresh_model(9, FilterMode::paper_literal);
    Rng rng(6);
    Tensor grids = random_grids(em, 1, rng);
    Tensor q0 = em.predict_conditionals(grids);
    Tensor flipped = grids;
    flipped.data[8] = 1.0 - flipped.data[8];
    Tensor q1 = em.predict_conditionals(flipped);
    CHECK(q0.data[0] == q1.data[0]);
}

TEST_CASE("200 fit steps on iid Bernoulli(0.9) approach the analytic entropy") {
    // H = -(0.9 ln 0.9 + 0.1 ln 0.1) = 0.325083 nats per bit
    for (FilterMode mode : {FilterMode::paper_literal, FilterMode::masked_learnable}) {
        EntropyModel em = fresh_model(9, mode, 21);
        Rng rng(7);
        auto bern_grids = [&](int n) {
            Tensor codes({n, 9}, 0.0);
            for (double& v : codes.data) v = rng.uniform() < 0.9 ? 1.0 : 0.0;
            return em.codes_to_grids(codes);
        };
        double ce = 0.0;
        for (int it = 0; it < 200; ++it) ce = em.fit_step(bern_grids(128), 3e-2);
        double per_bit = em.code_cross_entropy(bern_grids(2000)) / 9.0;
        CHECK(per_bit == doctest::Approx(0.325083).epsilon(0.16));  // within 0.05 nats/bit
        CHECK(std::abs(per_bit - 0.325083) < 0.05);
        (void)ce;
    }
}

TEST_CASE("cross-entropy upper bounds the plug-in code entropy") {
    // correlated bits: bit0 random, later bits copy with flip noise
    EntropyModel em = fresh_model(6, FilterMode::masked_learnable, 31);
    Rng rng(8);
    auto sample_codes = [&](int n) {
        Tensor codes({n, 6}, 0.0);
        for (int r = 0; r < n; ++r) {
            double prev = rng.below(2);
            codes.at2(r, 0) = prev;
            for (int c = 1; c < 6; ++c) {
                prev = rng.uniform() < 0.85 ? prev : 1.0 - prev;
                codes.at2(r, c) = prev;
            }
        }
        return codes;
    };
    Tensor train = sample_codes(512);
    Tensor train_grids = em.codes_to_grids(train);
    for (int it = 0; it < 150; ++it) em.fit_step(train_grids, 3e-3);
    Tensor eval = sample_codes(3000);
    double ce = em.code_cross_entropy(em.codes_to_grids(eval));
    double h = empirical_code_entropy(eval);
    CHECK(h <= ce + 1e-9);
}

TEST_CASE("fit on a stationary stream trends downward") {
    EntropyModel em = fresh_model(9, FilterMode::masked_learnable, 41);
    Rng rng(9);
    auto grids = [&](int n) {
        Tensor codes({n, 9}, 0.0);
        for (int r = 0; r < n; ++r) {
            double b = rng.below(2);
            for (int c = 0; c < 9; ++c)
                codes.at2(r, c) = (c % 2 == 0) ? b : (rng.uniform() < 0.2 ? 1.0 - b : b);
        }
        return em.codes_to_grids(codes);
    };
    std::vector<double> ce;
    for (int it = 0; it < 120; ++it) ce.push_back(em.fit_step(grids(64), 3e-3));
    auto avg = [&](int from) {
        double s = 0.0;
        for (int i = from; i < from + 10; ++i) s += ce[static_cast<size_t>(i)];
        return s / 10.0;
    };
    CHECK(avg(110) < avg(0));
}

TEST_CASE("masked-learnable weights outside the causal mask stay exactly zero") {
    EntropyModel em = fresh_model(16, FilterMode::masked_learnable, 51);
    Rng rng(10);
    for (int it = 0; it < 100; ++it) em.fit_step(random_grids(em, 32, rng), 1e-2);
    for (int s = 0; s < 4; ++s) {
        const Tensor& w = em.params().find("ent.s" + std::to_string(s) + ".w")->value;
        CausalMask m = make_mask(s == 0 ? 'A' : 'B', 3);
        int in = s == 0 ? 1 : 8;
        for (int o = 0; o < 8; ++o)
            for (int i = 0; i < in; ++i)
                for (int r = 0; r < 3; ++r)
                    for (int c = 0; c < 3; ++c)
                        if (m.mask.at2(r, c) == 0.0) CHECK(w.at4(o, i, r, c) == 0.0);
    }
}

TEST_CASE("grid size mismatches raise dimension errors") {
    EntropyModel em = fresh_model(9, FilterMode::paper_literal);
    Tensor wrong({2, 1, 4, 4}, 0.0);
    CHECK_THROWS_AS(em.predict_conditionals(wrong), std::invalid_argument);
    Tensor codes({2, 8}, 0.0);
    CHECK_THROWS_AS(em.codes_to_grids(codes), std::invalid_argument);
}
