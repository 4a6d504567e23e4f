#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fbc/bvae.hpp"
#include "fbc/fbc_model.hpp"

namespace fbc {

/// Versioned binary checkpoint: magic "FBCK", u32 version, u64 JSON
/// config length, config text, u32 tensor count, then per tensor a
/// length-prefixed name, the shape, and little-endian 64-bit floats.
struct Checkpoint {
    FbcConfig config;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_checkpoint(const std::string& path, const FbcConfig& config,
                      const std::vector<std::pair<std::string, Tensor*>>& tensors);
Checkpoint read_checkpoint(const std::string& path);

void save_model(const std::string& path, FbcModel& model);
void save_model(const std::string& path, BvaeModel& model);

/// Rebuilds a model from a checkpoint; the config's method field picks
/// the architecture.
FbcModel load_fbc_model(const Checkpoint& ck);
BvaeModel load_bvae_model(const Checkpoint& ck);

}  // namespace fbc
