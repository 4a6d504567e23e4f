#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fbc/datasets.hpp"
#include "fbc/entropy_model.hpp"
#include "fbc/layers.hpp"

namespace fbc {

enum class Likelihood { squared_error, bernoulli };

/// beta = gamma / (gamma + 1), the rate coefficient induced by the
/// fairness penalty gamma.
double beta_from_gamma(double gamma);

struct FbcConfig {
    std::string dataset = "synthetic";
    std::string method = "fbc";  // "fbc" or "bvae"
    std::vector<LayerSpec> encoder;
    std::vector<LayerSpec> decoder;
    int code_bits = 0;
    int sensitive_categories = 0;
    double beta = 0.0;
    double sigma = 1.0;  // soft-quantization hardness
    int iterations = 2000;
    int batch_size = 64;
    double lr = 1e-3;
    uint64_t seed = 1;
    Likelihood likelihood = Likelihood::squared_error;
    EntropyModelConfig entropy;
    SplitSpec split;

    void validate() const;
    std::string to_json_text() const;
    static FbcConfig from_json_text(const std::string& text);
};

// Presets following the per-dataset architecture and hyperparameter
// tables; iteration counts are the paper-scale defaults.
FbcConfig make_adults_config();
FbcConfig make_compas_config();
FbcConfig make_heritage_config();
FbcConfig make_dsprites_config(int resolution);
/// Mirror-symmetric dense stack for generated tabular data.
FbcConfig make_synthetic_config(int d_x, int d_s, int code_bits = 10);
/// Preset lookup by dataset tag ("adults", "compas", "heritage",
/// "dsprites", "synthetic").
FbcConfig make_preset(const std::string& dataset, int d_x, int d_s, int resolution);

struct TraceRow {
    int step = 0;
    double loss = 0.0;
    double distortion = 0.0;
    double rate = 0.0;
};

struct LossParts {
    double total = 0.0;
    double distortion = 0.0;
    double rate = 0.0;
};

/// Encoder-binarizer-decoder with the sensitive side channel and the
/// autoregressive entropy estimator, trained jointly on
/// distortion + beta * rate.
struct FbcModel {
    FbcConfig config;
    Network encoder;
    Network decoder;
    EntropyModel entropy;
    std::vector<TraceRow> trace;
    int diverged_at = -1;  // step of the first non-finite loss, -1 if none

    /// Eval-mode encode: soft bits and their hard binarization, [N,m].
    std::pair<Tensor, Tensor> encode(const Tensor& x);
    /// Hard codes only.
    Tensor codes(const Tensor& x);
    /// Eval-mode decode from a code and a one-hot sensitive block.
    Tensor decode(const Tensor& bits, const Tensor& s_onehot);
    /// Eval-mode loss parts on a batch (hard codes, running statistics);
    /// total = distortion + beta * rate.
    LossParts loss(const LabeledBatch& batch);
};

/// Trains a fresh model for config.iterations steps. Encoder, decoder
/// and entropy estimator update jointly each step; the estimator always
/// receives the full cross-entropy gradient while the encoder's rate
/// gradient is scaled by beta. On a non-finite loss the parameters are
/// rolled back to the last finite step and training stops with
/// diverged_at set.
FbcModel train_fbc(const FbcConfig& config, const LabeledBatch& data);

}  // namespace fbc
