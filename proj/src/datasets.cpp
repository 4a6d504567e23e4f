#include "fbc/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fbc {

using nlohmann::json;

Tensor LabeledBatch::s_onehot() const {
    int n = size();
    Tensor onehot({n, d_s}, 0.0);
    for (int i = 0; i < n; ++i) onehot.at2(i, S[static_cast<size_t>(i)]) = 1.0;
    return onehot;
}

LabeledBatch LabeledBatch::subset(const std::vector<int>& idx) const {
    LabeledBatch out;
    out.d_s = d_s;
    int n = static_cast<int>(idx.size());
    std::vector<int> shape = X.shape;
    shape[0] = n;
    out.X = Tensor(shape, 0.0);
    int row = X.numel() / X.shape[0];
    for (int i = 0; i < n; ++i)
        std::copy_n(X.data.begin() + static_cast<long>(idx[static_cast<size_t>(i)]) * row, row,
                    out.X.data.begin() + static_cast<long>(i) * row);
    out.S.reserve(idx.size());
    for (int i : idx) out.S.push_back(S[static_cast<size_t>(i)]);
    if (!Y.empty()) {
        out.Y.reserve(idx.size());
        for (int i : idx) out.Y.push_back(Y[static_cast<size_t>(i)]);
    }
    return out;
}

ThreeWaySplit split(const LabeledBatch& batch, const SplitSpec& spec) {
    if (spec.train <= 0.0 || spec.probe_train <= 0.0 || spec.probe_eval <= 0.0)
        throw std::invalid_argument("split: fractions must be positive");
    if (std::abs(spec.train + spec.probe_train + spec.probe_eval - 1.0) > 1e-9)
        throw std::invalid_argument("split: fractions must sum to 1");
    int n = batch.size();
    int n0 = static_cast<int>(std::floor(spec.train * n + 0.5));
    int n1 = static_cast<int>(std::floor(spec.probe_train * n + 0.5));
    int n2 = n - n0 - n1;
    if (n0 < 1 || n1 < 1 || n2 < 1)
        throw std::invalid_argument("split: a part would be empty for n = " + std::to_string(n));
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng(spec.seed);
    for (int i = n - 1; i > 0; --i) std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.below(i + 1))]);
    ThreeWaySplit out;
    out.train_idx.assign(idx.begin(), idx.begin() + n0);
    out.probe_train_idx.assign(idx.begin() + n0, idx.begin() + n0 + n1);
    out.probe_eval_idx.assign(idx.begin() + n0 + n1, idx.end());
    out.train = batch.subset(out.train_idx);
    out.probe_train = batch.subset(out.probe_train_idx);
    out.probe_eval = batch.subset(out.probe_eval_idx);
    return out;
}

// ------------------------------------------------------------ DSprites-Unfair

double dsprites_weight(int i_orientation, int i_shape) {
    if (i_orientation < 0 || i_orientation > 39)
        throw std::invalid_argument("dsprites_weight: orientation index out of range");
    if (i_shape < 0 || i_shape > 2) throw std::invalid_argument("dsprites_weight: shape index out of range");
    double o = static_cast<double>(i_orientation) / 40.0;
    double s = static_cast<double>(i_shape) / 3.0;
    return 1.0 + 10.0 * (o * o * o + s * s * s);
}

int dsprites_sensitive(int i_orientation) {
    if (i_orientation < 0 || i_orientation > 39)
        throw std::invalid_argument("dsprites_sensitive: orientation index out of range");
    return i_orientation / 10;
}

std::vector<FactorTuple> sample_dsprites_factors(int n, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_dsprites_factors: n must be positive");
    Rng rng(seed);
    std::vector<FactorTuple> out;
    out.reserve(static_cast<size_t>(n));
    std::vector<double> w(3, 0.0);
    for (int i = 0; i < n; ++i) {
        FactorTuple f;
        f.scale = rng.below(6);
        f.orientation = rng.below(40);
        f.x = rng.below(32);
        f.y = rng.below(32);
        for (int sh = 0; sh < 3; ++sh) w[static_cast<size_t>(sh)] = dsprites_weight(f.orientation, sh);
        f.shape = rng.weighted(w);
        out.push_back(f);
    }
    return out;
}

Tensor render_dsprite(const FactorTuple& f, int resolution) {
    if (resolution < 8) throw std::invalid_argument("render_dsprite: resolution too small");
    int R = resolution;
    Tensor img({1, R, R}, 0.0);
    double scale = 0.5 + 0.5 * f.scale / 5.0;                       // 0.5 .. 1.0
    double theta = 2.0 * M_PI * f.orientation / 40.0;
    double cx = (0.25 + 0.5 * f.x / 31.0) * R;                      // keep the shape on canvas
    double cy = (0.25 + 0.5 * f.y / 31.0) * R;
    double half = (0.07 + 0.11 * scale) * R;
    double ct = std::cos(theta), st = std::sin(theta);
    for (int py = 0; py < R; ++py)
        for (int px = 0; px < R; ++px) {
            double dx = (px + 0.5 - cx) / half;
            double dy = (py + 0.5 - cy) / half;
            double u = ct * dx + st * dy;
            double v = -st * dx + ct * dy;
            bool inside = false;
            switch (f.shape) {
                case 0:  // square
                    inside = std::max(std::abs(u), std::abs(v)) <= 1.0;
                    break;
                case 1:  // ellipse
                    inside = (u * u) / 1.0 + (v * v) / 0.36 <= 1.0;
                    break;
                default: {  // heart, implicit sextic scaled into the box
                    double hu = u * 1.25, hv = -v * 1.25;
                    double a = hu * hu + hv * hv - 1.0;
                    inside = a * a * a - hu * hu * hv * hv * hv <= 0.0;
                    break;
                }
            }
            if (inside) img.data[static_cast<size_t>(py) * R + px] = 1.0;
        }
    return img;
}

LabeledBatch sample_dsprites_unfair(int n, int resolution, uint64_t seed) {
    std::vector<FactorTuple> factors = sample_dsprites_factors(n, seed);
    LabeledBatch out;
    out.d_s = 4;
    out.X = Tensor({n, 1, resolution, resolution}, 0.0);
    int px = resolution * resolution;
    for (int i = 0; i < n; ++i) {
        Tensor img = render_dsprite(factors[static_cast<size_t>(i)], resolution);
        std::copy(img.data.begin(), img.data.end(), out.X.data.begin() + static_cast<long>(i) * px);
        out.S.push_back(dsprites_sensitive(factors[static_cast<size_t>(i)].orientation));
        out.Y.push_back(factors[static_cast<size_t>(i)].shape);
    }
    return out;
}

// -------------------------------------------------------- synthetic tabular

SyntheticTabular make_synthetic_unfair_tabular(int n, int d_x, int d_s, double rho, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("synthetic tabular: n must be positive");
    if (d_x < 2) throw std::invalid_argument("synthetic tabular: d_x must be at least 2");
    if (d_s < 2) throw std::invalid_argument("synthetic tabular: d_s must be at least 2");
    if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("synthetic tabular: rho must be in [0,1]");

    SyntheticGenParams gp;
    gp.d_x = d_x;
    gp.d_s = d_s;
    gp.rho = rho;
    gp.leak_noise = 0.25 * (1.0 - rho);
    gp.task_noise = 0.12;

    // role allocation: about 4/9 primary, 2/9 auxiliary, one minor slot
    // on wide feature sets, about 2/9 leak; at least one primary and one
    // leak feature
    int n_leak = std::max(1, (2 * d_x) / 9);
    int n_minor = d_x >= 7 ? 1 : 0;
    int n_aux = std::min(std::max(0, d_x - n_leak - n_minor - 1), std::max(0, (2 * d_x) / 9));
    int n_primary = d_x - n_leak - n_minor - n_aux;
    gp.roles.reserve(static_cast<size_t>(d_x));
    for (int j = 0; j < n_primary; ++j) gp.roles.push_back(FeatureRole::primary);
    for (int j = 0; j < n_aux; ++j) gp.roles.push_back(FeatureRole::auxiliary);
    for (int j = 0; j < n_minor; ++j) gp.roles.push_back(FeatureRole::minor);
    for (int j = 0; j < n_leak; ++j) gp.roles.push_back(FeatureRole::leak);

    gp.task_gain.assign(static_cast<size_t>(d_x), 0.0);
    gp.task_shift.assign(static_cast<size_t>(d_x), 0.0);
    gp.s_tint.assign(static_cast<size_t>(d_x), 0.0);
    int leak_index = 0;
    for (int j = 0; j < d_x; ++j) {
        switch (gp.roles[static_cast<size_t>(j)]) {
            case FeatureRole::primary:
                gp.task_gain[static_cast<size_t>(j)] = 4.0 + 0.2 * (j % 3);
                gp.task_shift[static_cast<size_t>(j)] = 0.3 * std::sin(1.0 + j);
                break;
            case FeatureRole::auxiliary:
                gp.task_gain[static_cast<size_t>(j)] = 4.0;
                gp.task_shift[static_cast<size_t>(j)] = 0.2 * std::sin(2.0 + j);
                gp.s_tint[static_cast<size_t>(j)] = 0.45;
                break;
            case FeatureRole::minor:
                gp.task_gain[static_cast<size_t>(j)] = 4.0;
                gp.s_tint[static_cast<size_t>(j)] = 0.8;
                break;
            case FeatureRole::leak: {
                std::vector<double> levels(static_cast<size_t>(d_s), 0.0);
                for (int s = 0; s < d_s; ++s)
                    levels[static_cast<size_t>(s)] =
                        static_cast<double>((s + leak_index) % d_s) / (d_s - 1);
                gp.leak_levels.push_back(std::move(levels));
                ++leak_index;
                break;
            }
        }
    }

    Rng rng(seed);
    LabeledBatch b;
    b.d_s = d_s;
    b.X = Tensor({n, d_x}, 0.0);
    b.S.reserve(static_cast<size_t>(n));
    b.Y.reserve(static_cast<size_t>(n));
    auto clamp01 = [](double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); };
    for (int i = 0; i < n; ++i) {
        int s = rng.below(d_s);
        double u = rng.normal();   // primary latent, carries the task label
        double v = rng.normal();   // auxiliary latent
        double w = rng.normal();   // minor latent
        b.S.push_back(s);
        b.Y.push_back(u > 0.0 ? 1 : 0);
        int li = 0;
        for (int j = 0; j < d_x; ++j) {
            FeatureRole role = gp.roles[static_cast<size_t>(j)];
            if (role == FeatureRole::leak) {
                double level = gp.leak_levels[static_cast<size_t>(li)][static_cast<size_t>(s)];
                double x = 0.5 + rho * (level - 0.5) + gp.leak_noise * rng.normal();
                b.X.at2(i, j) = clamp01(x);
                ++li;
                continue;
            }
            double lat = role == FeatureRole::primary ? u : (role == FeatureRole::auxiliary ? v : w);
            // the sensitive tint shifts the response; it scales with rho and
            // uses this feature's rotated level map offset
            double delta = 2.0 * (static_cast<double>((s + j) % d_s) / (d_s - 1) - 0.5);
            double arg = gp.task_gain[static_cast<size_t>(j)] * lat +
                         gp.task_shift[static_cast<size_t>(j)] +
                         gp.s_tint[static_cast<size_t>(j)] * rho * delta;
            b.X.at2(i, j) = clamp01((1.0 + std::tanh(arg)) * 0.5 + gp.task_noise * rng.normal());
        }
    }
    return SyntheticTabular{std::move(b), std::move(gp)};
}

// ------------------------------------------------------------- CSV ingestion

namespace {

struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

RawTable parse_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("csv: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (text.empty()) throw std::runtime_error("csv: '" + path + "' is empty");
    RawTable t;
    std::vector<std::string> field_row;
    std::string field;
    bool in_quotes = false;
    auto end_field = [&]() {
        field_row.push_back(field);
        field.clear();
    };
    auto end_row = [&]() {
        end_field();
        bool blank = field_row.size() == 1 && field_row[0].empty();
        if (!blank) {
            if (t.header.empty()) t.header = field_row;
            else t.rows.push_back(field_row);
        }
        field_row.clear();
    };
    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            end_row();
        } else {
            field += c;
        }
    }
    if (!field.empty() || !field_row.empty()) end_row();
    if (t.header.empty()) throw std::runtime_error("csv: '" + path + "' has no header row");
    return t;
}

int column_index(const RawTable& t, const std::string& name) {
    for (size_t i = 0; i < t.header.size(); ++i)
        if (t.header[i] == name) return static_cast<int>(i);
    throw std::runtime_error("csv: missing column '" + name + "'");
}

double parse_number(const std::string& cell, int row, const std::string& col) {
    try {
        size_t pos = 0;
        double v = std::stod(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        throw std::runtime_error("csv: unparseable cell at row " + std::to_string(row) + ", column '" +
                                 col + "': '" + cell + "'");
    }
}

}  // namespace

TabularSchema TabularSchema::from_json_text(const std::string& text) {
    json j = json::parse(text);
    TabularSchema s;
    for (const auto& f : j.at("features")) {
        Feature feat;
        if (f.is_string()) {
            feat.name = f.get<std::string>();
        } else {
            feat.name = f.at("name").get<std::string>();
            feat.categorical = f.value("categorical", false);
        }
        s.features.push_back(feat);
    }
    for (const auto& c : j.at("sensitive")) s.sensitive.push_back(c.get<std::string>());
    if (j.contains("label") && !j.at("label").is_null()) s.label = j.at("label").get<std::string>();
    if (s.features.empty()) throw std::invalid_argument("schema: needs at least one feature");
    if (s.sensitive.empty()) throw std::invalid_argument("schema: needs at least one sensitive column");
    return s;
}

TabularSchema TabularSchema::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("schema: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string TabularSchema::to_json_text() const {
    json j;
    j["features"] = json::array();
    for (const auto& f : features) {
        if (f.categorical)
            j["features"].push_back({{"name", f.name}, {"categorical", true}});
        else
            j["features"].push_back(f.name);
    }
    j["sensitive"] = sensitive;
    if (!label.empty()) j["label"] = label;
    return j.dump(2);
}

TabularData load_tabular_csv(const std::string& path, const TabularSchema& schema,
                             const SplitSpec& split_spec) {
    RawTable raw = parse_csv(path);
    if (raw.rows.empty()) throw std::runtime_error("csv: '" + path + "' has a header but no data rows");
    int n = static_cast<int>(raw.rows.size());

    std::vector<int> feat_cols, sens_cols;
    for (const auto& f : schema.features) feat_cols.push_back(column_index(raw, f.name));
    for (const auto& s : schema.sensitive) sens_cols.push_back(column_index(raw, s));
    int label_col = schema.label.empty() ? -1 : column_index(raw, schema.label);

    for (int r = 0; r < n; ++r)
        if (raw.rows[static_cast<size_t>(r)].size() != raw.header.size())
            throw std::runtime_error("csv: row " + std::to_string(r + 1) + " has " +
                                     std::to_string(raw.rows[static_cast<size_t>(r)].size()) +
                                     " fields, header has " + std::to_string(raw.header.size()));

    // level maps (sorted for a stable lexicographic order)
    auto levels_of = [&](int col) {
        std::set<std::string> lv;
        for (const auto& row : raw.rows) lv.insert(row[static_cast<size_t>(col)]);
        return std::vector<std::string>(lv.begin(), lv.end());
    };
    auto level_index = [](const std::vector<std::string>& lv, const std::string& v, int row,
                          const std::string& col) {
        auto it = std::lower_bound(lv.begin(), lv.end(), v);
        if (it == lv.end() || *it != v)
            throw std::runtime_error("csv: unseen level at row " + std::to_string(row) + ", column '" +
                                     col + "'");
        return static_cast<int>(it - lv.begin());
    };

    std::vector<std::vector<std::string>> cat_levels(schema.features.size());
    for (size_t fi = 0; fi < schema.features.size(); ++fi)
        if (schema.features[fi].categorical) cat_levels[fi] = levels_of(feat_cols[fi]);
    std::vector<std::vector<std::string>> sens_levels;
    for (int c : sens_cols) sens_levels.push_back(levels_of(c));
    std::vector<std::string> label_levels;
    if (label_col >= 0) label_levels = levels_of(label_col);

    TabularData out;
    out.d_s = 1;
    for (const auto& lv : sens_levels) out.d_s *= static_cast<int>(lv.size());

    // expanded feature slots
    std::vector<int> slot_feature;  // owning schema feature per slot
    std::vector<int> slot_level;    // level for categorical slots, -1 numeric
    for (size_t fi = 0; fi < schema.features.size(); ++fi) {
        if (schema.features[fi].categorical) {
            for (size_t l = 0; l < cat_levels[fi].size(); ++l) {
                out.feature_slots.push_back(schema.features[fi].name + "=" + cat_levels[fi][l]);
                slot_feature.push_back(static_cast<int>(fi));
                slot_level.push_back(static_cast<int>(l));
            }
        } else {
            out.feature_slots.push_back(schema.features[fi].name);
            slot_feature.push_back(static_cast<int>(fi));
            slot_level.push_back(-1);
        }
    }
    int d = static_cast<int>(out.feature_slots.size());

    LabeledBatch all;
    all.d_s = out.d_s;
    all.X = Tensor({n, d}, 0.0);
    for (int r = 0; r < n; ++r) {
        const auto& row = raw.rows[static_cast<size_t>(r)];
        for (int sl = 0; sl < d; ++sl) {
            int fi = slot_feature[static_cast<size_t>(sl)];
            const std::string& cell = row[static_cast<size_t>(feat_cols[static_cast<size_t>(fi)])];
            if (slot_level[static_cast<size_t>(sl)] < 0) {
                all.X.at2(r, sl) = parse_number(cell, r + 1, schema.features[static_cast<size_t>(fi)].name);
            } else {
                int l = level_index(cat_levels[static_cast<size_t>(fi)], cell, r + 1,
                                    schema.features[static_cast<size_t>(fi)].name);
                all.X.at2(r, sl) = l == slot_level[static_cast<size_t>(sl)] ? 1.0 : 0.0;
            }
        }
        int sidx = 0;
        for (size_t sc = 0; sc < sens_cols.size(); ++sc) {
            const std::string& cell = row[static_cast<size_t>(sens_cols[sc])];
            sidx = sidx * static_cast<int>(sens_levels[sc].size()) +
                   level_index(sens_levels[sc], cell, r + 1, schema.sensitive[sc]);
        }
        all.S.push_back(sidx);
        if (label_col >= 0)
            all.Y.push_back(level_index(label_levels, row[static_cast<size_t>(label_col)], r + 1, schema.label));
    }

    ThreeWaySplit sp = split(all, split_spec);

    // min-max statistics on the training split, numeric slots only
    out.slot_min.assign(static_cast<size_t>(d), 0.0);
    out.slot_max.assign(static_cast<size_t>(d), 1.0);
    for (int sl = 0; sl < d; ++sl) {
        if (slot_level[static_cast<size_t>(sl)] >= 0) continue;
        double lo = all.X.at2(sp.train_idx[0], sl), hi = lo;
        for (int i : sp.train_idx) {
            lo = std::min(lo, all.X.at2(i, sl));
            hi = std::max(hi, all.X.at2(i, sl));
        }
        out.slot_min[static_cast<size_t>(sl)] = lo;
        out.slot_max[static_cast<size_t>(sl)] = hi;
        for (int r = 0; r < n; ++r) {
            double v = all.X.at2(r, sl);
            v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
            all.X.at2(r, sl) = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        }
    }

    out.all = std::move(all);
    out.splits = split(out.all, split_spec);  // same seed, same partition, normalized data
    return out;
}

void write_tabular_csv(const std::string& path, const LabeledBatch& batch) {
    if (batch.X.ndim() != 2) throw std::invalid_argument("write_tabular_csv: expects flat features");
    std::ofstream outf(path, std::ios::binary);
    if (!outf) throw std::runtime_error("csv: cannot write '" + path + "'");
    int n = batch.size(), d = batch.X.shape[1];
    for (int j = 0; j < d; ++j) outf << "x" << j << ",";
    outf << "s";
    if (batch.has_y()) outf << ",y";
    outf << "\n";
    char buf[64];
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", batch.X.at2(i, j));
            outf << buf << ",";
        }
        outf << batch.S[static_cast<size_t>(i)];
        if (batch.has_y()) outf << "," << batch.Y[static_cast<size_t>(i)];
        outf << "\n";
    }
}

// ---------------------------------------------------------------- image packs

void write_image_pack(const std::string& path, const Tensor& images) {
    if (images.ndim() != 4 || images.shape[1] != 1 || images.shape[2] != images.shape[3])
        throw std::invalid_argument("image pack: expects [N,1,R,R] images");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("image pack: cannot write '" + path + "'");
    uint32_t count = static_cast<uint32_t>(images.shape[0]);
    uint32_t res = static_cast<uint32_t>(images.shape[2]);
    out.write("FBCI", 4);
    out.write(reinterpret_cast<const char*>(&count), 4);
    out.write(reinterpret_cast<const char*>(&res), 4);
    std::vector<unsigned char> bytes(images.data.size());
    for (size_t i = 0; i < images.data.size(); ++i)
        bytes[i] = images.data[i] != 0.0 ? 1 : 0;
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
}

Tensor read_image_pack(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("image pack: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "FBCI", 4) != 0)
        throw std::runtime_error("image pack: '" + path + "' has a bad magic header");
    uint32_t count = 0, res = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    in.read(reinterpret_cast<char*>(&res), 4);
    if (!in || count == 0 || res == 0) throw std::runtime_error("image pack: corrupt header");
    std::vector<unsigned char> bytes(static_cast<size_t>(count) * res * res);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<long>(bytes.size()));
    if (!in) throw std::runtime_error("image pack: truncated data");
    Tensor images({static_cast<int>(count), 1, static_cast<int>(res), static_cast<int>(res)}, 0.0);
    for (size_t i = 0; i < bytes.size(); ++i) images.data[i] = bytes[i] ? 1.0 : 0.0;
    return images;
}

}  // namespace fbc
