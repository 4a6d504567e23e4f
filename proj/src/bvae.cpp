#include "fbc/bvae.hpp"

#include <cmath>
#include <stdexcept>

namespace fbc {

double kl_to_prior(const GaussianPosterior& post) {
    if (!post.mu.same_shape(post.log_var))
        throw std::invalid_argument("kl_to_prior: mu and log_var shapes differ");
    if (!post.log_var.all_finite()) throw std::invalid_argument("kl_to_prior: log_var must be finite");
    double s = 0.0;
    for (size_t i = 0; i < post.mu.data.size(); ++i) {
        double mu = post.mu.data[i], lv = post.log_var.data[i];
        s += 0.5 * (mu * mu + std::exp(lv) - lv - 1.0);
    }
    int batch = post.mu.ndim() == 2 ? post.mu.shape[0] : 1;
    return s / batch;
}

Tensor sample_posterior(const GaussianPosterior& post, const Tensor& noise) {
    if (!post.mu.same_shape(noise))
        throw std::invalid_argument("sample_posterior: noise shape must match mu");
    Tensor z = post.mu;
    for (size_t i = 0; i < z.data.size(); ++i)
        z.data[i] += std::exp(post.log_var.data[i] * 0.5) * noise.data[i];
    return z;
}

std::vector<LayerSpec> widen_encoder_head(const std::vector<LayerSpec>& encoder, int code_bits) {
    std::vector<LayerSpec> out = encoder;
    for (auto it = out.rbegin(); it != out.rend(); ++it) {
        if (it->kind == LayerKind::dense) {
            if (it->out != code_bits)
                throw std::invalid_argument("widen_encoder_head: final dense layer emits " +
                                            std::to_string(it->out) + ", expected " +
                                            std::to_string(code_bits));
            it->out = 2 * code_bits;
            return out;
        }
        if (it->has_params())
            throw std::invalid_argument("widen_encoder_head: encoder must end in a dense layer");
    }
    throw std::invalid_argument("widen_encoder_head: no dense layer found");
}

GaussianPosterior BvaeModel::posterior(const Tensor& x) {
    Graph g;
    BoundParams bp;
    Graph::Var h = encoder.forward(g, g.constant(x), /*train=*/false, bp);
    const Tensor& hv = g.value(h);
    int m = config.code_bits;
    if (hv.ndim() != 2 || hv.shape[1] != 2 * m)
        throw std::invalid_argument("posterior: encoder emits " + shape_str(hv.shape) + ", expected 2m = " +
                                    std::to_string(2 * m));
    GaussianPosterior post;
    post.mu = g.value(g.slice_cols(h, 0, m));
    post.log_var = g.value(g.slice_cols(h, m, 2 * m));
    return post;
}

Tensor BvaeModel::posterior_mean(const Tensor& x) { return posterior(x).mu; }

Tensor BvaeModel::decode(const Tensor& z, const Tensor& s_onehot) {
    Graph g;
    BoundParams bp;
    Graph::Var in = g.concat_cols(g.constant(z), g.constant(s_onehot));
    Graph::Var out = decoder.forward(g, in, /*train=*/false, bp);
    if (config.likelihood == Likelihood::bernoulli) out = g.sigmoid(out);
    return g.value(out);
}

LossParts BvaeModel::loss(const LabeledBatch& batch) {
    GaussianPosterior post = posterior(batch.X);
    Tensor xhat = decode(post.mu, batch.s_onehot());  // noise-free evaluation
    Graph g;
    Graph::Var d = config.likelihood == Likelihood::bernoulli
                       ? g.bernoulli_nll(g.constant(xhat), g.constant(batch.X))
                       : g.sse_loss(g.constant(xhat), g.constant(batch.X));
    LossParts parts;
    parts.distortion = g.value(d).data[0];
    parts.rate = kl_to_prior(post);
    parts.total = parts.distortion + config.beta * parts.rate;
    return parts;
}

BvaeModel train_bvae(const FbcConfig& config, const LabeledBatch& data) {
    config.validate();
    if (data.d_s != config.sensitive_categories)
        throw std::invalid_argument("train: dataset has " + std::to_string(data.d_s) +
                                    " sensitive categories, config expects " +
                                    std::to_string(config.sensitive_categories));
    BvaeModel model;
    model.config = config;
    model.config.method = "bvae";
    model.encoder = Network("enc", widen_encoder_head(config.encoder, config.code_bits));
    model.decoder = Network("dec", config.decoder);

    Rng rng(config.seed);
    model.encoder.init_params(rng);
    model.decoder.init_params(rng);

    int n = data.size();
    int B = std::min(config.batch_size, n);
    int m = config.code_bits;
    Tensor s_onehot_all = data.s_onehot();
    int row = data.X.numel() / n;

    std::vector<Tensor> last_good;
    auto snapshot = [&]() {
        last_good.clear();
        for (auto& p : model.encoder.params().params) last_good.push_back(p.value);
        for (auto& p : model.decoder.params().params) last_good.push_back(p.value);
    };
    auto restore = [&]() {
        size_t k = 0;
        for (auto& p : model.encoder.params().params) p.value = last_good[k++];
        for (auto& p : model.decoder.params().params) p.value = last_good[k++];
    };
    snapshot();
    model.trace.reserve(static_cast<size_t>(config.iterations));

    for (int step = 1; step <= config.iterations; ++step) {
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
        Tensor noise({B, m}, 0.0);
        for (double& v : noise.data) v = rng.normal();

        Graph g;
        BoundParams bp;
        Graph::Var x = g.constant(std::move(xb));
        Graph::Var s = g.constant(std::move(sb));
        Graph::Var h = model.encoder.forward(g, x, /*train=*/true, bp);
        Graph::Var mu = g.slice_cols(h, 0, m);
        Graph::Var lv = g.slice_cols(h, m, 2 * m);
        Graph::Var sd = g.exp_act(g.scale(lv, 0.5));
        Graph::Var z = g.add(mu, g.mul(sd, g.constant(std::move(noise))));
        Graph::Var dec_in = g.concat_cols(z, s);
        Graph::Var xhat = model.decoder.forward(g, dec_in, /*train=*/true, bp);
        if (config.likelihood == Likelihood::bernoulli) xhat = g.sigmoid(xhat);
        Graph::Var dist = config.likelihood == Likelihood::bernoulli ? g.bernoulli_nll(xhat, x)
                                                                     : g.sse_loss(xhat, x);
        Graph::Var kl = g.gauss_kl(mu, lv);
        Graph::Var objective = g.add(dist, g.scale(kl, config.beta));

        double dist_v = g.value(dist).data[0];
        double kl_v = g.value(kl).data[0];
        double loss_v = dist_v + config.beta * kl_v;
        if (!std::isfinite(loss_v)) {
            restore();
            model.diverged_at = step;
            break;
        }
        snapshot();

        g.backward(objective);
        bp.pull_grads(g);
        try {
            adam_step(model.encoder.params(), config.lr);
            adam_step(model.decoder.params(), config.lr);
        } catch (const std::runtime_error&) {
            restore();
            model.diverged_at = step;
            break;
        }
        model.trace.push_back({step, loss_v, dist_v, kl_v});
    }
    return model;
}

}  // namespace fbc
