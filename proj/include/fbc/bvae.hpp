#pragma once

#include "fbc/fbc_model.hpp"

namespace fbc {

/// Diagonal Gaussian posterior for one sample or a batch row.
struct GaussianPosterior {
    Tensor mu;       // [m] or [B,m]
    Tensor log_var;  // same shape
};

/// Closed-form KL(N(mu, diag sigma^2) || N(0, I)) in nats, summed over
/// dimensions: 0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1). For a [B,m]
/// posterior the mean over the batch is returned.
double kl_to_prior(const GaussianPosterior& post);

/// Reparameterized draw z = mu + sigma * noise.
Tensor sample_posterior(const GaussianPosterior& post, const Tensor& noise);

/// Gaussian-encoder comparator: the encoder trunk ends in a 2m head
/// split into (mu, log_var); the decoder consumes (z, one-hot s); the
/// objective is distortion + beta * KL to the isotropic prior.
struct BvaeModel {
    FbcConfig config;
    Network encoder;
    Network decoder;
    std::vector<TraceRow> trace;
    int diverged_at = -1;

    /// Eval-mode posterior for a batch.
    GaussianPosterior posterior(const Tensor& x);
    /// The noise-free representation probes consume.
    Tensor posterior_mean(const Tensor& x);
    Tensor decode(const Tensor& z, const Tensor& s_onehot);
    /// Eval-mode loss parts; rate is the mean KL.
    LossParts loss(const LabeledBatch& batch);
};

/// Widens the final dense layer of an encoder stack to 2m for the
/// (mu, log_var) head.
std::vector<LayerSpec> widen_encoder_head(const std::vector<LayerSpec>& encoder, int code_bits);

BvaeModel train_bvae(const FbcConfig& config, const LabeledBatch& data);

}  // namespace fbc
