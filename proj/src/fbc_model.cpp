#include "fbc/fbc_model.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace fbc {

using nlohmann::json;

double beta_from_gamma(double gamma) {
    if (gamma < 0.0) throw std::invalid_argument("beta_from_gamma: gamma must be non-negative");
    return gamma / (gamma + 1.0);
}

void FbcConfig::validate() const {
    if (code_bits < 1) throw std::invalid_argument("config: code_bits must be at least 1");
    if (beta < 0.0) throw std::invalid_argument("config: beta must be non-negative");
    if (sigma <= 0.0) throw std::invalid_argument("config: sigma must be positive");
    if (sensitive_categories < 1) throw std::invalid_argument("config: needs sensitive categories");
    if (iterations < 1 || batch_size < 1) throw std::invalid_argument("config: iterations and batch size must be positive");
    if (encoder.empty() || decoder.empty()) throw std::invalid_argument("config: encoder/decoder must be non-empty");
    // decoder must consume exactly (code, one-hot sensitive)
    const LayerSpec& first = decoder.front();
    int expect = code_bits + sensitive_categories;
    if (first.kind != LayerKind::dense || first.in != expect)
        throw std::invalid_argument("config: decoder input dimension must be code_bits + sensitive "
                                    "categories = " + std::to_string(expect));
    if (method != "fbc" && method != "bvae")
        throw std::invalid_argument("config: method must be 'fbc' or 'bvae'");
}

namespace {

json layer_to_json(const LayerSpec& l) {
    json j;
    j["kind"] = layer_kind_name(l.kind);
    if (l.has_params() || l.kind == LayerKind::batchnorm) {
        j["in"] = l.in;
        j["out"] = l.out;
    }
    if (l.kind == LayerKind::conv2d || l.kind == LayerKind::convT2d) {
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        j["pad"] = l.pad;
    }
    return j;
}

LayerSpec layer_from_json(const json& j) {
    LayerSpec l;
    l.kind = layer_kind_from_name(j.at("kind").get<std::string>());
    l.in = j.value("in", 0);
    l.out = j.value("out", 0);
    l.kernel = j.value("kernel", 0);
    l.stride = j.value("stride", 0);
    l.pad = j.value("pad", 1);
    return l;
}

}  // namespace

std::string FbcConfig::to_json_text() const {
    json j;
    j["dataset"] = dataset;
    j["method"] = method;
    j["code_bits"] = code_bits;
    j["sensitive_categories"] = sensitive_categories;
    j["beta"] = beta;
    j["sigma"] = sigma;
    j["iterations"] = iterations;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["seed"] = seed;
    j["likelihood"] = likelihood == Likelihood::squared_error ? "squared_error" : "bernoulli";
    j["encoder"] = json::array();
    for (const auto& l : encoder) j["encoder"].push_back(layer_to_json(l));
    j["decoder"] = json::array();
    for (const auto& l : decoder) j["decoder"].push_back(layer_to_json(l));
    j["entropy"] = {{"channels", entropy.channels},
                    {"mask_size", entropy.mask_size},
                    {"stages", entropy.stages},
                    {"mode", entropy.mode == FilterMode::paper_literal ? "paper_literal" : "masked_learnable"}};
    j["split"] = {{"train", split.train},
                  {"probe_train", split.probe_train},
                  {"probe_eval", split.probe_eval},
                  {"seed", split.seed}};
    return j.dump(2);
}

FbcConfig FbcConfig::from_json_text(const std::string& text) {
    json j = json::parse(text);
    FbcConfig c;
    c.dataset = j.value("dataset", "synthetic");
    c.method = j.value("method", "fbc");
    c.code_bits = j.at("code_bits").get<int>();
    c.sensitive_categories = j.at("sensitive_categories").get<int>();
    c.beta = j.value("beta", 0.0);
    c.sigma = j.value("sigma", 1.0);
    c.iterations = j.value("iterations", 2000);
    c.batch_size = j.value("batch_size", 64);
    c.lr = j.value("lr", 1e-3);
    c.seed = j.value("seed", static_cast<uint64_t>(1));
    c.likelihood = j.value("likelihood", std::string("squared_error")) == "bernoulli"
                       ? Likelihood::bernoulli
                       : Likelihood::squared_error;
    for (const auto& lj : j.at("encoder")) c.encoder.push_back(layer_from_json(lj));
    for (const auto& lj : j.at("decoder")) c.decoder.push_back(layer_from_json(lj));
    c.entropy.code_bits = c.code_bits;
    if (j.contains("entropy")) {
        const auto& e = j["entropy"];
        c.entropy.channels = e.value("channels", 8);
        c.entropy.mask_size = e.value("mask_size", 3);
        c.entropy.stages = e.value("stages", 4);
        c.entropy.mode = e.value("mode", std::string("paper_literal")) == "masked_learnable"
                             ? FilterMode::masked_learnable
                             : FilterMode::paper_literal;
    }
    if (j.contains("split")) {
        const auto& s = j["split"];
        c.split.train = s.value("train", 0.6);
        c.split.probe_train = s.value("probe_train", 0.2);
        c.split.probe_eval = s.value("probe_eval", 0.2);
        c.split.seed = s.value("seed", static_cast<uint64_t>(17));
    }
    return c;
}

// ----------------------------------------------------------------- presets

namespace {

FbcConfig base_config(std::string dataset, int m, int d_s) {
    FbcConfig c;
    c.dataset = std::move(dataset);
    c.code_bits = m;
    c.sensitive_categories = d_s;
    c.entropy.code_bits = m;
    return c;
}

}  // namespace

FbcConfig make_adults_config() {
    FbcConfig c = base_config("adults", 10, 10);
    c.encoder = {LayerSpec::dense(9, 64), LayerSpec::activation(LayerKind::relu), LayerSpec::dense(64, 10)};
    c.decoder = {LayerSpec::dense(20, 10), LayerSpec::activation(LayerKind::relu),
                 LayerSpec::dense(10, 64), LayerSpec::activation(LayerKind::relu), LayerSpec::dense(64, 9)};
    c.iterations = 55000;
    c.lr = 1e-3;
    return c;
}

FbcConfig make_compas_config() {
    FbcConfig c = base_config("compas", 8, 4);
    c.encoder = {LayerSpec::dense(6, 16), LayerSpec::activation(LayerKind::relu), LayerSpec::dense(16, 8)};
    c.decoder = {LayerSpec::dense(12, 8), LayerSpec::activation(LayerKind::relu),
                 LayerSpec::dense(8, 16), LayerSpec::activation(LayerKind::relu), LayerSpec::dense(16, 6)};
    c.iterations = 22000;
    c.lr = 1e-3;
    return c;
}

FbcConfig make_heritage_config() {
    FbcConfig c = base_config("heritage", 24, 18);
    c.encoder = {LayerSpec::dense(65, 128), LayerSpec::activation(LayerKind::relu), LayerSpec::dense(128, 24)};
    c.decoder = {LayerSpec::dense(42, 24), LayerSpec::activation(LayerKind::relu),
                 LayerSpec::dense(24, 128), LayerSpec::activation(LayerKind::relu), LayerSpec::dense(128, 65)};
    c.iterations = 55000;
    c.lr = 0.5e-4;
    return c;
}

FbcConfig make_dsprites_config(int resolution) {
    if (resolution % 16 != 0)
        throw std::invalid_argument("dsprites config: resolution must be a multiple of 16");
    FbcConfig c = base_config("dsprites", 24, 4);
    int side = resolution / 16;
    int flat = 64 * side * side;
    auto relu = LayerSpec::activation(LayerKind::relu);
    c.encoder = {LayerSpec::conv(1, 32, 4, 2),  relu, LayerSpec::conv(32, 32, 4, 2), relu,
                 LayerSpec::conv(32, 64, 4, 2), relu, LayerSpec::conv(64, 64, 4, 2), relu,
                 LayerSpec::dense(flat, 128),   relu, LayerSpec::dense(128, 24)};
    c.decoder = {LayerSpec::dense(28, 128),        relu, LayerSpec::dense(128, flat),     relu,
                 LayerSpec::convT(64, 64, 4, 2),   relu, LayerSpec::convT(64, 32, 4, 2),  relu,
                 LayerSpec::convT(32, 32, 4, 2),   relu, LayerSpec::convT(32, 1, 4, 2)};
    c.likelihood = Likelihood::bernoulli;
    c.iterations = 270000;
    c.lr = 1e-4;
    return c;
}

FbcConfig make_synthetic_config(int d_x, int d_s, int code_bits) {
    FbcConfig c = base_config("synthetic", code_bits, d_s);
    auto relu = LayerSpec::activation(LayerKind::relu);
    c.encoder = {LayerSpec::dense(d_x, 64), relu, LayerSpec::dense(64, code_bits)};
    c.decoder = {LayerSpec::dense(code_bits + d_s, 64), relu, LayerSpec::dense(64, d_x)};
    c.iterations = 3000;
    c.lr = 5e-4;
    c.entropy.mode = FilterMode::masked_learnable;
    return c;
}

FbcConfig make_preset(const std::string& dataset, int d_x, int d_s, int resolution) {
    if (dataset == "adults") return make_adults_config();
    if (dataset == "compas") return make_compas_config();
    if (dataset == "heritage") return make_heritage_config();
    if (dataset == "dsprites") return make_dsprites_config(resolution);
    if (dataset == "synthetic") return make_synthetic_config(d_x, d_s);
    throw std::invalid_argument("unknown dataset preset '" + dataset + "'");
}

// ------------------------------------------------------------------- model

std::pair<Tensor, Tensor> FbcModel::encode(const Tensor& x) {
    Graph g;
    BoundParams bp;
    Graph::Var e = encoder.forward(g, g.constant(x), /*train=*/false, bp);
    const Tensor& ev = g.value(e);
    if (ev.ndim() != 2 || ev.shape[1] != config.code_bits)
        throw std::invalid_argument("encode: encoder emits " + shape_str(ev.shape) + ", expected m = " +
                                    std::to_string(config.code_bits));
    Graph::Var zbar = g.squash(e);
    Graph::Var z = g.straight_through(zbar, config.sigma);
    return {g.value(zbar), g.value(z)};
}

Tensor FbcModel::codes(const Tensor& x) { return encode(x).second; }

Tensor FbcModel::decode(const Tensor& bits, const Tensor& s_onehot) {
    if (bits.ndim() != 2 || s_onehot.ndim() != 2 || bits.shape[0] != s_onehot.shape[0])
        throw std::invalid_argument("decode: bits and sensitive blocks must share the batch dimension");
    if (bits.shape[1] + s_onehot.shape[1] != config.code_bits + config.sensitive_categories)
        throw std::invalid_argument(
            "decode: expected code+sensitive width " +
            std::to_string(config.code_bits + config.sensitive_categories) + " (m = " +
            std::to_string(config.code_bits) + " + d_s = " + std::to_string(config.sensitive_categories) +
            "), got " + std::to_string(bits.shape[1] + s_onehot.shape[1]));
    Graph g;
    BoundParams bp;
    Graph::Var in = g.concat_cols(g.constant(bits), g.constant(s_onehot));
    Graph::Var out = decoder.forward(g, in, /*train=*/false, bp);
    if (config.likelihood == Likelihood::bernoulli) out = g.sigmoid(out);
    return g.value(out);
}

LossParts FbcModel::loss(const LabeledBatch& batch) {
    if (batch.size() < 1) throw std::invalid_argument("loss: empty batch");
    Tensor bits = codes(batch.X);
    Tensor xhat = decode(bits, batch.s_onehot());
    Graph g;
    Graph::Var d = config.likelihood == Likelihood::bernoulli
                       ? g.bernoulli_nll(g.constant(xhat), g.constant(batch.X))
                       : g.sse_loss(g.constant(xhat), g.constant(batch.X));
    LossParts parts;
    parts.distortion = g.value(d).data[0];
    parts.rate = entropy.code_cross_entropy(entropy.codes_to_grids(bits));
    parts.total = parts.distortion + config.beta * parts.rate;
    return parts;
}

// ---------------------------------------------------------------- training

namespace {

std::vector<Tensor> snapshot_values(const std::vector<ParameterSet*>& sets) {
    std::vector<Tensor> out;
    for (auto* ps : sets)
        for (auto& p : ps->params) out.push_back(p.value);
    return out;
}

void restore_values(const std::vector<ParameterSet*>& sets, const std::vector<Tensor>& snap) {
    size_t k = 0;
    for (auto* ps : sets)
        for (auto& p : ps->params) p.value = snap[k++];
}

}  // namespace

FbcModel train_fbc(const FbcConfig& config, const LabeledBatch& data) {
    config.validate();
    if (data.d_s != config.sensitive_categories)
        throw std::invalid_argument("train: dataset has " + std::to_string(data.d_s) +
                                    " sensitive categories, config expects " +
                                    std::to_string(config.sensitive_categories));
    FbcModel model;
    model.config = config;
    model.config.method = "fbc";
    model.encoder = Network("enc", config.encoder);
    model.decoder = Network("dec", config.decoder);
    EntropyModelConfig ecfg = config.entropy;
    ecfg.code_bits = config.code_bits;
    model.entropy = EntropyModel(ecfg);

    Rng rng(config.seed);
    model.encoder.init_params(rng);
    model.decoder.init_params(rng);
    model.entropy.init_params(rng);

    int n = data.size();
    int B = std::min(config.batch_size, n);
    Tensor s_onehot_all = data.s_onehot();
    int row = data.X.numel() / n;
    int g_side = model.entropy.side();
    const auto& active = model.entropy.active();

    std::vector<ParameterSet*> sets = {&model.encoder.params(), &model.decoder.params(),
                                       &model.entropy.params()};
    std::vector<Tensor> last_good = snapshot_values(sets);
    model.trace.reserve(static_cast<size_t>(config.iterations));

    for (int step = 1; step <= config.iterations; ++step) {
        // sample a batch with replacement
        std::vector<int> shape = data.X.shape;
        shape[0] = B;
        Tensor xb(shape, 0.0);
        Tensor sb({B, data.d_s}, 0.0);
        for (int i = 0; i < B; ++i) {
            int idx = rng.below(n);
            std::copy_n(data.X.data.begin() + static_cast<long>(idx) * row, row,
                        xb.data.begin() + static_cast<long>(i) * row);
            for (int c = 0; c < data.d_s; ++c) sb.at2(i, c) = s_onehot_all.at2(idx, c);
        }

        Graph g;
        BoundParams bp;
        Graph::Var x = g.constant(std::move(xb));
        Graph::Var s = g.constant(std::move(sb));
        Graph::Var e = model.encoder.forward(g, x, /*train=*/true, bp);
        Graph::Var zbar = g.squash(e);
        Graph::Var z = g.straight_through(zbar, config.sigma);
        Graph::Var dec_in = g.concat_cols(z, s);
        Graph::Var xhat = model.decoder.forward(g, dec_in, /*train=*/true, bp);
        if (config.likelihood == Likelihood::bernoulli) xhat = g.sigmoid(xhat);
        Graph::Var dist = config.likelihood == Likelihood::bernoulli ? g.bernoulli_nll(xhat, x)
                                                                     : g.sse_loss(xhat, x);
        // the estimator sees the full gradient; the encoder's rate pull is
        // scaled by beta through this node, ramped over the first fifth of
        // training so the decoder attaches value to the code before bits
        // start paying rent
        double warmup = std::min(1.0, static_cast<double>(step) / std::max(1, config.iterations / 5));
        Graph::Var z_rate = g.scale_grad(z, config.beta * warmup);
        Graph::Var grid = g.grid_embed(z_rate, g_side);
        Graph::Var q = model.entropy.predict_on(g, grid, /*train=*/true, bp);
        Graph::Var rate = g.bit_ce(q, grid, active);
        Graph::Var objective = g.add(dist, rate);

        double dist_v = g.value(dist).data[0];
        double rate_v = g.value(rate).data[0];
        double loss_v = dist_v + config.beta * rate_v;
        if (!std::isfinite(loss_v)) {
            restore_values(sets, last_good);
            model.diverged_at = step;
            break;
        }
        last_good = snapshot_values(sets);

        g.backward(objective);
        bp.pull_grads(g);
        model.entropy.mask_gradients();
        try {
            adam_step(model.encoder.params(), config.lr);
            adam_step(model.decoder.params(), config.lr);
            adam_step(model.entropy.params(), config.lr);
        } catch (const std::runtime_error&) {
            restore_values(sets, last_good);
            model.diverged_at = step;
            break;
        }
        model.trace.push_back({step, loss_v, dist_v, rate_v});
    }
    return model;
}

}  // namespace fbc
