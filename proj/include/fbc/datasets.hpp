#pragma once

#include <array>
#include <string>
#include <vector>

#include "fbc/tensor.hpp"

namespace fbc {

/// Features plus categorical sensitive attribute and optional task label.
struct LabeledBatch {
    Tensor X;            // [N,d] or [N,1,R,R]
    std::vector<int> S;  // sensitive category per sample, in [0, d_s)
    int d_s = 0;
    std::vector<int> Y;  // empty when absent

    int size() const { return X.ndim() ? X.shape[0] : 0; }
    bool has_y() const { return !Y.empty(); }
    Tensor s_onehot() const;
    LabeledBatch subset(const std::vector<int>& idx) const;
};

struct SplitSpec {
    double train = 0.6;
    double probe_train = 0.2;
    double probe_eval = 0.2;
    uint64_t seed = 17;
};

struct ThreeWaySplit {
    LabeledBatch train, probe_train, probe_eval;
    std::vector<int> train_idx, probe_train_idx, probe_eval_idx;
};

/// Seeded shuffle into three disjoint, exhaustive parts with sizes within
/// one sample of the requested fractions. Raises if any part is empty.
ThreeWaySplit split(const LabeledBatch& batch, const SplitSpec& spec);

// ------------------------------------------------------------ DSprites-Unfair

struct FactorTuple {
    int shape = 0;        // {0,1,2}: square, ellipse, heart
    int scale = 0;        // {0..5}
    int orientation = 0;  // {0..39}, angle 2*pi*i/40
    int x = 0, y = 0;     // {0..31}
};

/// Sampling weight for the shape given the orientation,
/// 1 + 10[(i_or/40)^3 + (i_sh/3)^3].
double dsprites_weight(int i_orientation, int i_shape);

/// Quadrant of the orientation angle, floor(i/10); half-open quadrants.
int dsprites_sensitive(int i_orientation);

/// Factor tuples under the biased sampling: all factors uniform except
/// the shape, drawn proportionally to dsprites_weight at the sampled
/// orientation.
std::vector<FactorTuple> sample_dsprites_factors(int n, uint64_t seed);

/// Renders one factor tuple into a binary image (white shape on black).
Tensor render_dsprite(const FactorTuple& f, int resolution);

/// Full batch: rendered images, S = orientation quadrant, Y = shape.
LabeledBatch sample_dsprites_unfair(int n, int resolution, uint64_t seed);

// -------------------------------------------------------- synthetic tabular

/// Feature roles in the generator. The three latent blocks form a value
/// ladder: a code bit carrying the primary latent is worth more
/// reconstruction than one carrying the auxiliary latents, so rate
/// pressure retires them in a fixed order as beta grows. Only the
/// auxiliary blocks and the leak block touch the sensitive attribute;
/// the task label rides the primary latent alone.
enum class FeatureRole { primary, auxiliary, minor, leak };

struct SyntheticGenParams {
    int d_x = 0;
    int d_s = 0;
    double rho = 0.0;
    std::vector<FeatureRole> roles;  // one per feature
    std::vector<double> task_gain;   // tanh slope for latent-driven features
    std::vector<double> task_shift;
    std::vector<double> s_tint;      // sensitive shift inside the tanh, scaled by rho
    // per leak feature, the category -> level map in [0,1]; maps are
    // rotations of an even grid so no single direction carries S alone
    std::vector<std::vector<double>> leak_levels;
    double leak_noise = 0.0;  // scales with (1 - rho)
    double task_noise = 0.12;
};

struct SyntheticTabular {
    LabeledBatch batch;
    SyntheticGenParams params;
};

/// Unfair tabular generator: S uniform; latent u ~ N(0,1) with Y = [u>0];
/// task features are squashed affine functions of u, leak features carry
/// a per-category level with strength rho. Y-signal is independent of S
/// by construction.
SyntheticTabular make_synthetic_unfair_tabular(int n, int d_x, int d_s, double rho, uint64_t seed);

// ------------------------------------------------------------- CSV ingestion

struct TabularSchema {
    struct Feature {
        std::string name;
        bool categorical = false;
    };
    std::vector<Feature> features;
    std::vector<std::string> sensitive;  // cross product defines the categories
    std::string label;                   // empty when the dataset has no task label

    static TabularSchema from_json_text(const std::string& text);
    static TabularSchema from_json_file(const std::string& path);
    std::string to_json_text() const;
};

struct TabularData {
    LabeledBatch all;  // normalized with training-split statistics
    ThreeWaySplit splits;
    std::vector<std::string> feature_slots;  // expanded column names
    std::vector<double> slot_min, slot_max;  // recorded stats (numeric slots)
    int d_s = 0;
};

/// Parses an RFC-4180-style CSV with a header row, one-hot encodes
/// categorical features, min-max normalizes numeric features to [0,1]
/// using statistics of the training split, and indexes the sensitive
/// cross product lexicographically.
TabularData load_tabular_csv(const std::string& path, const TabularSchema& schema,
                             const SplitSpec& split_spec);

/// Writes a batch back to the generated-data CSV shape (x0..xd-1, s, y).
void write_tabular_csv(const std::string& path, const LabeledBatch& batch);

// ---------------------------------------------------------------- image packs

/// Binary image pack: magic "FBCI", u32 count, u32 resolution, then
/// row-major byte images (one byte per pixel, 0 or 1).
void write_image_pack(const std::string& path, const Tensor& images);
Tensor read_image_pack(const std::string& path);

}  // namespace fbc
