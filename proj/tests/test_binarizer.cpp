#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fbc/binarizer.hpp"
#include "fbc/graph.hpp"
#include "fbc/tensor.hpp"

using namespace fbc;

namespace {
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}

TEST_CASE("squash maps 0 to one half and evaluates (tanh(e)+1)/2") {
    CHECK(squash(0.0) == 0.5);
    CHECK(squash(1.0) == doctest::Approx(0.8807970779778823).epsilon(1e-15));
    // odd symmetry of tanh: squash(e) + squash(-e) = 1
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        double e = rng.uniform(-6.0, 6.0);
        CHECK(squash(e) + squash(-e) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("soft_binarize equals its logistic closed form") {
    CHECK(soft_binarize(0.5, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(soft_binarize(0.5, 37.0) == doctest::Approx(0.5).epsilon(1e-15));
    // both routes evaluated independently at zbar = squash(1), sigma = 1
    double zbar = 0.8807970779778823;
    CHECK(soft_binarize(zbar, 1.0) == doctest::Approx(0.6816997421945262).epsilon(1e-12));
    CHECK(soft_binarize(zbar, 1.0) == doctest::Approx(logistic(std::tanh(1.0))).epsilon(1e-12));

    // dense grid: the two-exponent route vs the logistic route agree to 1e-12
    for (int zi = 0; zi <= 100; ++zi)
        for (int si = 1; si <= 10; ++si) {
            double z = zi / 100.0;
            double s = si * 1.7;
            CHECK(std::abs(soft_binarize(z, s) - logistic(s * (2.0 * z - 1.0))) < 1e-12);
        }
}

TEST_CASE("soft_binarize approaches 1 monotonically in sigma for zbar above one half") {
    double prev = 0.5;
    for (double s : {1.0, 10.0, 100.0}) {
        double v = soft_binarize(0.9, s);
        CHECK(v > prev);
        prev = v;
    }
    CHECK(prev > 0.999);
}

TEST_CASE("soft_binarize is strictly increasing in zbar") {
    for (double sigma : {0.5, 1.0, 4.0}) {
        double prev = -1.0;
        for (int i = 0; i <= 50; ++i) {
            double v = soft_binarize(i / 50.0, sigma);
            CHECK(v > prev);
            prev = v;
        }
    }
}

TEST_CASE("hard_binarize rounds to the nearest bit, 0.5 up") {
    Tensor t = Tensor::from({2}, {0.2, 0.8});
    Tensor b = hard_binarize(t);
    CHECK(b.data[0] == 0.0);
    CHECK(b.data[1] == 1.0);
    CHECK(hard_binarize(0.5) == 1.0);
    CHECK(hard_binarize(0.4999999) == 0.0);
}

TEST_CASE("hard_binarize(squash(e)) is the sign test with e = 0 mapping to 1") {
    for (int i = -40; i <= 40; ++i) {
        double e = i * 0.25;
        double bit = hard_binarize(squash(e));
        CHECK(bit == (e >= 0.0 ? 1.0 : 0.0));
    }
}

TEST_CASE("straight-through forward is binary, backward is the soft gradient") {
    Graph g;
    Graph::Var zbar = g.leaf(Tensor::from({1, 2}, {0.3, 0.7}));
    Graph::Var z = g.straight_through(zbar, 1.0);
    CHECK(g.value(z).data[0] == 0.0);
    CHECK(g.value(z).data[1] == 1.0);

    // gradient at zbar = 0.5, sigma = 1: zdot = 0.5 -> 2*1*0.25 = 0.5
    Graph g2;
    Graph::Var h = g2.leaf(Tensor::from({1, 1}, {0.5}));
    Graph::Var z2 = g2.straight_through(h, 1.0);
    g2.backward(g2.sum_all(z2));
    CHECK(g2.grad(h).data[0] == doctest::Approx(0.5).epsilon(1e-12));

    // zbar = 1, sigma = 1: forward 1, gradient 2*zdot*(1-zdot), zdot = logistic(1)
    Graph g3;
    Graph::Var h3 = g3.leaf(Tensor::from({1, 1}, {1.0}));
    Graph::Var z3 = g3.straight_through(h3, 1.0);
    CHECK(g3.value(z3).data[0] == 1.0);
    g3.backward(g3.sum_all(z3));
    double zdot = logistic(1.0);
    CHECK(zdot == doctest::Approx(0.7310585786300049).epsilon(1e-15));
    CHECK(g3.grad(h3).data[0] == doctest::Approx(2.0 * zdot * (1.0 - zdot)).epsilon(1e-12));
}

TEST_CASE("straight-through gradient matches finite differences of the soft path") {
    Rng rng(8);
    for (double sigma : {0.7, 1.0, 3.0}) {
        for (int trial = 0; trial < 50; ++trial) {
            double zbar = rng.uniform(0.02, 0.98);
            double eps = 1e-5;
            double fd = (soft_binarize(zbar + eps, sigma) - soft_binarize(zbar - eps, sigma)) / (2 * eps);
            double an = soft_binarize_grad(zbar, sigma);
            CHECK(std::abs(an - fd) / std::max(1.0, std::abs(an)) < 1e-5);
        }
    }
}

TEST_CASE("straight-through values stay in {0,1}, gradients in (0, sigma/2]") {
    Rng rng(9);
    for (int trial = 0; trial < 300; ++trial) {
        double sigma = rng.uniform(0.2, 8.0);
        double zbar = rng.uniform(0.0, 1.0);
        Graph g;
        Graph::Var h = g.leaf(Tensor::from({1, 1}, {zbar}));
        Graph::Var z = g.straight_through(h, sigma);
        double v = g.value(z).data[0];
        CHECK((v == 0.0 || v == 1.0));
        g.backward(g.sum_all(z));
        double grad = g.grad(h).data[0];
        CHECK(grad > 0.0);
        CHECK(grad <= sigma / 2.0 + 1e-12);
    }
}
