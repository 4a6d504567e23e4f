#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fbc/datasets.hpp"
#include "fbc/evaluation.hpp"
#include "fbc/graph.hpp"

using namespace fbc;
namespace fs = std::filesystem;

namespace {

std::string temp_dir() {
    static int counter = 0;
    fs::path p = fs::temp_directory_path() / ("fbc_ds_test_" + std::to_string(++counter));
    fs::create_directories(p);
    return p.string();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

// multinomial logistic regression on raw features, full batch
double linear_probe_accuracy(const LabeledBatch& data, int steps = 400, double lr = 0.05) {
    int n = data.size(), d = data.X.shape[1];
    int classes = data.d_s;
    ParameterSet ps;
    ps.add("w", Tensor({d, classes}, 0.0));
    ps.add("b", Tensor({classes}, 0.0));
    Param& w = ps.params[0];
    Param& b = ps.params[1];
    for (int it = 0; it < steps; ++it) {
        Graph g;
        Graph::Var wv = g.leaf(w.value);
        Graph::Var bv = g.leaf(b.value);
        Graph::Var logits = g.add_row_bias(g.matmul(g.constant(data.X), wv), bv);
        Graph::Var loss = g.softmax_ce(logits, data.S);
        g.backward(loss);
        for (size_t i = 0; i < w.grad.data.size(); ++i) w.grad.data[i] += g.grad(wv).data[i];
        for (size_t i = 0; i < b.grad.data.size(); ++i) b.grad.data[i] += g.grad(bv).data[i];
        adam_step(ps, lr);
    }
    Graph g;
    Graph::Var logits = g.add_row_bias(g.matmul(g.constant(data.X), g.constant(w.value)), g.constant(b.value));
    const Tensor& lv = g.value(logits);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        int arg = 0;
        for (int c = 1; c < classes; ++c)
            if (lv.at2(i, c) > lv.at2(i, arg)) arg = c;
        if (arg == data.S[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / n;
}

}  // namespace

TEST_CASE("dsprites_weight matches the closed form") {
    CHECK(dsprites_weight(0, 0) == 1.0);
    CHECK(dsprites_weight(20, 1) == doctest::Approx(2.62037037037037).epsilon(1e-12));
    CHECK(dsprites_weight(39, 2) == doctest::Approx(13.2315567129629629).epsilon(1e-10));
    CHECK_THROWS_AS(dsprites_weight(40, 0), std::invalid_argument);
    CHECK_THROWS_AS(dsprites_weight(0, 3), std::invalid_argument);
}

TEST_CASE("dsprites_weight is strictly increasing in each index") {
    for (int sh = 0; sh < 3; ++sh)
        for (int i = 1; i < 40; ++i) CHECK(dsprites_weight(i, sh) > dsprites_weight(i - 1, sh));
    for (int i = 0; i < 40; ++i)
        for (int sh = 1; sh < 3; ++sh) CHECK(dsprites_weight(i, sh) > dsprites_weight(i, sh - 1));
    // extremes
    CHECK(dsprites_weight(0, 0) == 1.0);
    double expect_max = 1.0 + 10.0 * (0.975 * 0.975 * 0.975 + (2.0 / 3) * (2.0 / 3) * (2.0 / 3));
    CHECK(dsprites_weight(39, 2) == doctest::Approx(expect_max).epsilon(1e-12));
}

TEST_CASE("orientation quadrants are half-open") {
    CHECK(dsprites_sensitive(0) == 0);
    CHECK(dsprites_sensitive(9) == 0);
    CHECK(dsprites_sensitive(10) == 1);  // boundary joins the upper quadrant
    CHECK(dsprites_sensitive(39) == 3);
    CHECK_THROWS_AS(dsprites_sensitive(40), std::invalid_argument);
}

TEST_CASE("shape sampling is proportional to the weights at fixed orientation") {
    // direct draw of the shape conditional 1e5 times at one orientation
    for (int i_or : {0, 17, 39}) {
        std::vector<double> w(3);
        double total = 0.0;
        for (int sh = 0; sh < 3; ++sh) {
            w[static_cast<size_t>(sh)] = dsprites_weight(i_or, sh);
            total += w[static_cast<size_t>(sh)];
        }
        Rng rng(1000 + static_cast<uint64_t>(i_or));
        std::vector<double> counts(3, 0.0);
        int n = 100000;
        for (int t = 0; t < n; ++t) counts[static_cast<size_t>(rng.weighted(w))] += 1.0;
        double tv = 0.0;
        for (int sh = 0; sh < 3; ++sh)
            tv += std::abs(counts[static_cast<size_t>(sh)] / n - w[static_cast<size_t>(sh)] / total);
        CHECK(tv / 2.0 < 0.01);
    }
}

TEST_CASE("sampled factors: non-shape marginals uniform, shapes skewed by quadrant") {
    auto factors = sample_dsprites_factors(60000, 4242);
    std::vector<int> x_counts(32, 0);
    std::vector<std::vector<double>> shape_by_quadrant(4, std::vector<double>(3, 0.0));
    std::vector<double> quadrant_n(4, 0.0);
    for (const auto& f : factors) {
        x_counts[static_cast<size_t>(f.x)]++;
        int q = dsprites_sensitive(f.orientation);
        shape_by_quadrant[static_cast<size_t>(q)][static_cast<size_t>(f.shape)] += 1.0;
        quadrant_n[static_cast<size_t>(q)] += 1.0;
    }
    // x marginal uniform within sampling error
    for (int v = 0; v < 32; ++v)
        CHECK(std::abs(x_counts[static_cast<size_t>(v)] / 60000.0 - 1.0 / 32) < 0.006);
    // P(shape=2 | quadrant) drops from quadrant 0 to 3? No: weights grow with
    // orientation for every shape, but shape 2's share shrinks as the base grows
    double share_q0 = shape_by_quadrant[0][2] / quadrant_n[0];
    double share_q3 = shape_by_quadrant[3][2] / quadrant_n[3];
    CHECK(share_q0 > share_q3 + 0.05);
}

TEST_CASE("rendered dsprites are binary and shapes are distinguishable") {
    FactorTuple f;
    f.scale = 5;
    f.orientation = 7;
    f.x = 16;
    f.y = 16;
    std::set<std::vector<double>> renders;
    for (int sh = 0; sh < 3; ++sh) {
        f.shape = sh;
        Tensor img = render_dsprite(f, 16);
        double mass = 0.0;
        for (double v : img.data) {
            CHECK((v == 0.0 || v == 1.0));
            mass += v;
        }
        CHECK(mass > 4.0);  // something was drawn
        renders.insert(img.data);
    }
    CHECK(renders.size() == 3);
}

TEST_CASE("sample_dsprites_unfair produces labeled images") {
    LabeledBatch b = sample_dsprites_unfair(50, 16, 5);
    CHECK(b.X.shape == std::vector<int>{50, 1, 16, 16});
    CHECK(b.d_s == 4);
    CHECK(b.S.size() == 50);
    CHECK(b.Y.size() == 50);
    for (double v : b.X.data) CHECK((v == 0.0 || v == 1.0));
    LabeledBatch b2 = sample_dsprites_unfair(50, 16, 5);
    CHECK(b.X.data == b2.X.data);  // seeded determinism
}

TEST_CASE("synthetic tabular: rho=0 leaves the auditor at chance") {
    SyntheticTabular st = make_synthetic_unfair_tabular(10000, 9, 4, 0.0, 11);
    ThreeWaySplit sp = split(st.batch, SplitSpec{0.6, 0.2, 0.2, 3});
    ProbeSpec spec{64, 2, 1500, 1e-3, 5};
    double acc = train_probe(sp.probe_train.X, sp.probe_train.S, sp.probe_eval.X, sp.probe_eval.S, spec)
                     .accuracy;
    double chance = chance_level(sp.probe_eval.S);
    CHECK(std::abs(acc - chance) < 0.03);
}

TEST_CASE("synthetic tabular: rho=1 without noise is linearly separable in S") {
    SyntheticTabular st = make_synthetic_unfair_tabular(4000, 9, 4, 1.0, 12);
    CHECK(st.params.leak_noise == 0.0);
    CHECK(linear_probe_accuracy(st.batch) > 0.95);
}

TEST_CASE("synthetic tabular: recorded parameters and determinism") {
    SyntheticTabular a = make_synthetic_unfair_tabular(500, 9, 4, 0.8, 77);
    SyntheticTabular b = make_synthetic_unfair_tabular(500, 9, 4, 0.8, 77);
    CHECK(a.batch.X.data == b.batch.X.data);
    CHECK(a.batch.S == b.batch.S);
    CHECK(a.batch.Y == b.batch.Y);
    CHECK(a.params.leak_levels.size() == 2);
    CHECK(a.params.roles.size() == 9);
    // Y carries u-signal independent of S: check correlation of Y with S is tiny
    double sy = 0.0;
    for (int i = 0; i < 500; ++i) sy += (a.batch.Y[static_cast<size_t>(i)] - 0.5) *
                                        (a.batch.S[static_cast<size_t>(i)] - 1.5);
    CHECK(std::abs(sy / 500.0) < 0.08);
    CHECK_THROWS_AS(make_synthetic_unfair_tabular(10, 1, 4, 0.5, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_synthetic_unfair_tabular(10, 9, 1, 0.5, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_synthetic_unfair_tabular(10, 9, 4, 1.5, 1), std::invalid_argument);
}

TEST_CASE("three-way split: sizes, disjointness, determinism") {
    SyntheticTabular st = make_synthetic_unfair_tabular(100, 4, 2, 0.5, 3);
    ThreeWaySplit sp = split(st.batch, SplitSpec{0.6, 0.2, 0.2, 9});
    CHECK(sp.train.size() == 60);
    CHECK(sp.probe_train.size() == 20);
    CHECK(sp.probe_eval.size() == 20);
    std::set<int> all;
    for (int i : sp.train_idx) all.insert(i);
    for (int i : sp.probe_train_idx) all.insert(i);
    for (int i : sp.probe_eval_idx) all.insert(i);
    CHECK(all.size() == 100);  // exhaustive and pairwise disjoint
    ThreeWaySplit sp2 = split(st.batch, SplitSpec{0.6, 0.2, 0.2, 9});
    CHECK(sp.train_idx == sp2.train_idx);
    CHECK_THROWS_AS(split(st.batch, SplitSpec{0.996, 0.002, 0.002, 1}), std::invalid_argument);
    SplitSpec bad{0.5, 0.2, 0.2, 1};
    CHECK_THROWS_AS(split(st.batch, bad), std::invalid_argument);
}

TEST_CASE("csv ingestion: sensitive cross product and feature expansion") {
    std::string dir = temp_dir();
    std::string csv = "age,grade,gender,race,outcome\n";
    const char* genders[] = {"f", "m"};
    const char* races[] = {"a", "b", "c", "d", "e"};
    int row = 0;
    for (int g = 0; g < 2; ++g)
        for (int r = 0; r < 5; ++r)
            for (int k = 0; k < 4; ++k) {
                csv += std::to_string(20 + row % 30) + "," + std::to_string((row * 7) % 100) + "," +
                       genders[g] + "," + races[r] + "," + (row % 3 == 0 ? "yes" : "no") + "\n";
                ++row;
            }
    write_file(dir + "/d.csv", csv);
    TabularSchema schema;
    schema.features = {{"age", false}, {"grade", false}};
    schema.sensitive = {"race", "gender"};  // 5 x 2 levels -> 10 categories
    schema.label = "outcome";
    TabularData td = load_tabular_csv(dir + "/d.csv", schema, SplitSpec{0.6, 0.2, 0.2, 4});
    CHECK(td.d_s == 10);
    CHECK(td.all.X.shape[1] == 2);
    CHECK(td.all.has_y());

    // normalization maps training extremes to exactly 0 and 1
    for (int sl = 0; sl < 2; ++sl) {
        double lo = 2.0, hi = -1.0;
        for (int i : td.splits.train_idx) {
            lo = std::min(lo, td.all.X.at2(i, sl));
            hi = std::max(hi, td.all.X.at2(i, sl));
        }
        CHECK(lo == 0.0);
        CHECK(hi == 1.0);
    }
}

TEST_CASE("csv ingestion: categorical features, 6-feature schema, error paths") {
    std::string dir = temp_dir();
    write_file(dir + "/d.csv",
               "f1,f2,f3,f4,f5,f6,s,y\n"
               "1,2,3,4,5,low,0,1\n"
               "2,3,4,5,6,high,1,0\n"
               "3,4,5,6,7,low,0,1\n"
               "4,5,6,7,8,mid,1,0\n"
               "5,6,7,8,9,low,0,1\n");
    TabularSchema schema;
    for (int i = 1; i <= 5; ++i) schema.features.push_back({"f" + std::to_string(i), false});
    schema.features.push_back({"f6", true});
    schema.sensitive = {"s"};
    schema.label = "y";
    TabularData td = load_tabular_csv(dir + "/d.csv", schema, SplitSpec{0.4, 0.3, 0.3, 2});
    CHECK(td.all.X.shape[1] == 5 + 3);  // f6 one-hot over {high,low,mid}
    CHECK(td.d_s == 2);

    // empty file
    write_file(dir + "/empty.csv", "");
    CHECK_THROWS_AS(load_tabular_csv(dir + "/empty.csv", schema, SplitSpec{}), std::runtime_error);

    // missing column
    write_file(dir + "/missing.csv", "f1,s,y\n1,0,1\n");
    CHECK_THROWS_WITH_AS(load_tabular_csv(dir + "/missing.csv", schema, SplitSpec{}),
                         doctest::Contains("f2"), std::runtime_error);

    // unparseable cell names row and column
    write_file(dir + "/bad.csv",
               "f1,f2,f3,f4,f5,f6,s,y\n"
               "1,2,3,4,5,low,0,1\n"
               "2,oops,4,5,6,high,1,0\n"
               "3,4,5,6,7,low,0,1\n"
               "4,5,6,7,8,mid,1,0\n"
               "1,2,3,4,5,low,0,1\n"
               "2,3,4,5,6,high,1,0\n"
               "3,4,5,6,7,low,0,1\n"
               "4,5,6,7,8,mid,1,0\n");
    try {
        load_tabular_csv(dir + "/bad.csv", schema, SplitSpec{});
        CHECK(false);
    } catch (const std::runtime_error& e) {
        std::string msg = e.what();
        CHECK(msg.find("row 2") != std::string::npos);
        CHECK(msg.find("f2") != std::string::npos);
    }
}

TEST_CASE("generated tabular data round-trips through the csv shape") {
    std::string dir = temp_dir();
    SyntheticTabular st = make_synthetic_unfair_tabular(200, 5, 3, 0.7, 21);
    write_tabular_csv(dir + "/gen.csv", st.batch);
    TabularSchema schema;
    for (int j = 0; j < 5; ++j) schema.features.push_back({"x" + std::to_string(j), false});
    schema.sensitive = {"s"};
    schema.label = "y";
    TabularData td = load_tabular_csv(dir + "/gen.csv", schema, SplitSpec{0.6, 0.2, 0.2, 1});
    CHECK(td.all.size() == 200);
    CHECK(td.d_s == 3);
    CHECK(td.all.S == st.batch.S);
    CHECK(td.all.Y == st.batch.Y);
}

TEST_CASE("image pack round trip") {
    std::string dir = temp_dir();
    LabeledBatch b = sample_dsprites_unfair(20, 16, 33);
    write_image_pack(dir + "/imgs.fbci", b.X);
    Tensor back = read_image_pack(dir + "/imgs.fbci");
    CHECK(back.shape == b.X.shape);
    CHECK(back.data == b.X.data);
    write_file(dir + "/junk.fbci", "NOPE");
    CHECK_THROWS_AS(read_image_pack(dir + "/junk.fbci"), std::runtime_error);
}
