#include "fbc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fbc {

namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::ofstream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ofstream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t get_u32(std::ifstream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

uint64_t get_u64(std::ifstream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

std::vector<std::pair<std::string, Tensor*>> model_tensors(FbcModel& m) {
    std::vector<std::pair<std::string, Tensor*>> out = m.encoder.state_tensors();
    for (auto& t : m.decoder.state_tensors()) out.push_back(t);
    for (auto& t : m.entropy.state_tensors()) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> model_tensors(BvaeModel& m) {
    std::vector<std::pair<std::string, Tensor*>> out = m.encoder.state_tensors();
    for (auto& t : m.decoder.state_tensors()) out.push_back(t);
    return out;
}

}  // namespace

void write_checkpoint(const std::string& path, const FbcConfig& config,
                      const std::vector<std::pair<std::string, Tensor*>>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
    out.write("FBCK", 4);
    put_u32(out, kVersion);
    std::string cfg = config.to_json_text();
    put_u64(out, cfg.size());
    out.write(cfg.data(), static_cast<long>(cfg.size()));
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<long>(name.size()));
        put_u32(out, static_cast<uint32_t>(t->shape.size()));
        for (int d : t->shape) put_u32(out, static_cast<uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  static_cast<long>(t->data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "FBCK", 4) != 0)
        throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
    uint32_t version = get_u32(in);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    uint64_t cfg_len = get_u64(in);
    std::string cfg(cfg_len, '\0');
    in.read(cfg.data(), static_cast<long>(cfg_len));
    if (!in) throw std::runtime_error("checkpoint: truncated config");
    Checkpoint ck;
    ck.config = FbcConfig::from_json_text(cfg);
    uint32_t count = get_u32(in);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = get_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        uint32_t ndim = get_u32(in);
        std::vector<int> shape;
        for (uint32_t dd = 0; dd < ndim; ++dd) shape.push_back(static_cast<int>(get_u32(in)));
        Tensor t(shape, 0.0);
        in.read(reinterpret_cast<char*>(t.data.data()), static_cast<long>(t.data.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated tensor '" + name + "'");
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ck;
}

void save_model(const std::string& path, FbcModel& model) {
    write_checkpoint(path, model.config, model_tensors(model));
}

void save_model(const std::string& path, BvaeModel& model) {
    write_checkpoint(path, model.config, model_tensors(model));
}

namespace {

void fill_from(const Checkpoint& ck, std::vector<std::pair<std::string, Tensor*>> slots) {
    if (slots.size() != ck.tensors.size())
        throw std::runtime_error("checkpoint: tensor count mismatch, model has " +
                                 std::to_string(slots.size()) + ", file has " +
                                 std::to_string(ck.tensors.size()));
    for (auto& [name, slot] : slots) {
        const Tensor* found = nullptr;
        for (const auto& [n, t] : ck.tensors)
            if (n == name) {
                found = &t;
                break;
            }
        if (!found) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
        if (found->shape != slot->shape)
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        *slot = *found;
    }
}

}  // namespace

FbcModel load_fbc_model(const Checkpoint& ck) {
    if (ck.config.method != "fbc")
        throw std::runtime_error("checkpoint: method is '" + ck.config.method + "', expected fbc");
    FbcModel m;
    m.config = ck.config;
    m.encoder = Network("enc", ck.config.encoder);
    m.decoder = Network("dec", ck.config.decoder);
    EntropyModelConfig ecfg = ck.config.entropy;
    ecfg.code_bits = ck.config.code_bits;
    m.entropy = EntropyModel(ecfg);
    Rng rng(1);
    m.encoder.init_params(rng);
    m.decoder.init_params(rng);
    m.entropy.init_params(rng);
    fill_from(ck, model_tensors(m));
    return m;
}

BvaeModel load_bvae_model(const Checkpoint& ck) {
    if (ck.config.method != "bvae")
        throw std::runtime_error("checkpoint: method is '" + ck.config.method + "', expected bvae");
    BvaeModel m;
    m.config = ck.config;
    m.encoder = Network("enc", widen_encoder_head(ck.config.encoder, ck.config.code_bits));
    m.decoder = Network("dec", ck.config.decoder);
    Rng rng(1);
    m.encoder.init_params(rng);
    m.decoder.init_params(rng);
    fill_from(ck, model_tensors(m));
    return m;
}

}  // namespace fbc
