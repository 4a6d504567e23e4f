#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fbc/info_oracle.hpp"
#include "fbc/tensor.hpp"

using namespace fbc;

namespace {

// random joint over (X,S) with strictly positive cells
DiscreteJoint random_xs_joint(Rng& rng, int nx, int ns) {
    std::vector<double> p(static_cast<size_t>(nx * ns));
    double total = 0.0;
    for (double& v : p) {
        v = rng.uniform(0.05, 1.0);
        total += v;
    }
    double acc = 0.0;
    for (size_t i = 0; i + 1 < p.size(); ++i) {
        p[i] /= total;
        acc += p[i];
    }
    p.back() = 1.0 - acc;  // exact normalization
    return DiscreteJoint({nx, ns}, p);
}

}  // namespace

TEST_CASE("entropy of basic distributions") {
    CHECK(entropy({0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(entropy({1.0, 0.0, 0.0}) == 0.0);
    CHECK(entropy({0.9, 0.1}) == doctest::Approx(0.325083).epsilon(1e-6));
    CHECK_THROWS_AS(entropy({0.5, 0.4}), std::invalid_argument);
    CHECK(nats_to_bits(std::log(2.0)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mutual information on hand-built tables") {
    // independent pair
    DiscreteJoint indep({2, 2}, {0.25, 0.25, 0.25, 0.25});
    CHECK(mutual_information(indep, {0}, {1}) == doctest::Approx(0.0).epsilon(1e-12));

    // copy: I(Z,X) = H(X)
    DiscreteJoint copy({2, 2}, {0.3, 0.0, 0.0, 0.7});
    CHECK(mutual_information(copy, {0}, {1}) == doctest::Approx(entropy({0.3, 0.7})).epsilon(1e-12));

    // the 2x2 table [[0.4,0.1],[0.1,0.4]]
    DiscreteJoint j({2, 2}, {0.4, 0.1, 0.1, 0.4});
    CHECK(mutual_information(j, {0}, {1}) == doctest::Approx(0.192745).epsilon(1e-5));

    CHECK_THROWS_AS(mutual_information(j, {0}, {0}), std::invalid_argument);
}

TEST_CASE("joint table validation") {
    CHECK_THROWS_AS(DiscreteJoint({2, 2}, {0.5, 0.5, 0.1, 0.1}), std::invalid_argument);
    CHECK_THROWS_AS(DiscreteJoint({2}, {1.2, -0.2}), std::invalid_argument);
    CHECK_THROWS_AS(DiscreteJoint({2, 3}, {1.0}), std::invalid_argument);
}

TEST_CASE("identity chain: worked example and degenerate cases") {
    // X uniform on {0..3}, S = parity(X), Z = floor(X/2)
    DiscreteJoint xs({4, 2}, {0.25, 0.0, 0.0, 0.25, 0.25, 0.0, 0.0, 0.25});
    double r = verify_chain_identity(xs, [](int x) { return x / 2; }, 2);
    CHECK(r < 1e-12);

    // constant Z reduces the identity to 0 = 0 - I(X,S) + I(X,S)
    double rc = verify_chain_identity(xs, [](int) { return 0; }, 1);
    CHECK(rc < 1e-12);
}

TEST_CASE("identity chain holds on 50 randomized joints with deterministic Z") {
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        int nx = 2 + rng.below(5);
        int ns = 2 + rng.below(3);
        int nz = 1 + rng.below(3);
        DiscreteJoint xs = random_xs_joint(rng, nx, ns);
        std::vector<int> f(static_cast<size_t>(nx));
        for (int& v : f) v = rng.below(nz);
        double r = verify_chain_identity(xs, [&](int x) { return f[static_cast<size_t>(x)]; }, nz);
        CHECK(r < 1e-10);
    }
}

TEST_CASE("chain identity rejects stochastic Z") {
    // Z not a function of X: both z values have mass at x=0
    DiscreteJoint bad({1, 2, 2}, {0.25, 0.25, 0.25, 0.25});
    CHECK_THROWS_AS(verify_chain_identity(bad), std::invalid_argument);
}

TEST_CASE("chain rule I(Z,{X,S}) = I(Z,X) + I(Z,S|X) on random joints") {
    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        int nx = 2 + rng.below(3), ns = 2, nz = 2 + rng.below(2);
        std::vector<double> p(static_cast<size_t>(nx * ns * nz));
        double total = 0.0;
        for (double& v : p) {
            v = rng.uniform(0.01, 1.0);
            total += v;
        }
        double acc = 0.0;
        for (size_t i = 0; i + 1 < p.size(); ++i) {
            p[i] /= total;
            acc += p[i];
        }
        p.back() = 1.0 - acc;
        DiscreteJoint j({nx, ns, nz}, p);
        double lhs = mutual_information(j, {2}, {0, 1});
        double rhs = mutual_information(j, {2}, {0}) + conditional_mutual_information(j, {2}, {1}, {0});
        CHECK(std::abs(lhs - rhs) < 1e-10);
    }
}

TEST_CASE("data processing: I(f(X),S) <= I(X,S) for deterministic f") {
    Rng rng(31);
    for (int trial = 0; trial < 30; ++trial) {
        int nx = 3 + rng.below(4), ns = 2 + rng.below(2);
        DiscreteJoint xs = random_xs_joint(rng, nx, ns);
        int nz = 1 + rng.below(nx);
        std::vector<int> f(static_cast<size_t>(nx));
        for (int& v : f) v = rng.below(nz);
        // build (X,S,Z) with Z = f(X)
        std::vector<double> table(static_cast<size_t>(nx * ns * nz), 0.0);
        for (int x = 0; x < nx; ++x)
            for (int s = 0; s < ns; ++s)
                table[static_cast<size_t>((x * ns + s) * nz + f[static_cast<size_t>(x)])] =
                    xs.p[static_cast<size_t>(x * ns + s)];
        DiscreteJoint j({nx, ns, nz}, table);
        double ixs = mutual_information(j, {0}, {1});
        double izs = mutual_information(j, {2}, {1});
        CHECK(izs <= ixs + 1e-10);
        CHECK(izs >= -1e-12);
    }
}

TEST_CASE("empirical code entropy by enumeration") {
    // all codes identical -> 0
    Tensor same({5, 3}, 0.0);
    CHECK(empirical_code_entropy(same) == 0.0);

    // uniform over 2^m codes -> m ln 2
    int m = 3;
    Tensor uni({8, 3}, 0.0);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 3; ++c) uni.at2(r, c) = (r >> (2 - c)) & 1;
    CHECK(empirical_code_entropy(uni) == doctest::Approx(m * std::log(2.0)).epsilon(1e-12));

    Tensor wide({2, 13}, 0.0);
    CHECK_THROWS_AS(empirical_code_entropy(wide), std::invalid_argument);
    Tensor nonbinary = Tensor::from({1, 2}, {0.5, 1.0});
    CHECK_THROWS_AS(empirical_code_entropy(nonbinary), std::invalid_argument);
}
