#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fbc {

// Command implementations behind the CLI. Each returns a process exit
// code (0 success, 1 runtime failure) and writes a resolved-config
// snapshot next to its outputs.

struct GenDataArgs {
    std::string kind;  // "synthetic-tabular" | "dsprites-unfair"
    std::string out_dir;
    int n = 5000;
    int d_x = 9;
    int d_s = 4;
    double rho = 0.8;
    int resolution = 16;
    uint64_t seed = 7;
};
int cmd_gen_data(const GenDataArgs& args);

struct TrainArgs {
    std::string method = "fbc";  // "fbc" | "bvae"
    std::string data_dir;
    std::string out_dir;
    std::string config_path;  // optional config JSON; overrides the preset
    double beta = 0.0;
    int steps = -1;    // -1 keeps the preset value
    double lr = -1.0;  // idem
    int code_bits = -1;
    uint64_t seed = 1;
    int resolution = 16;  // dsprites preset parameter
};
int cmd_train(const TrainArgs& args);

struct ProbeArgs {
    std::string checkpoint;
    std::string data_dir;
    std::string out_dir;
    uint64_t seed = 1;
};
int cmd_probe(const ProbeArgs& args);

struct SweepArgs {
    std::vector<std::string> methods = {"fbc"};
    std::vector<double> betas = {0.0, 0.5, 1.0};
    int seeds = 5;
    std::string data_dir;
    std::string out_dir;
    int steps = -1;
    int jobs = 1;
    uint64_t seed = 1;       // base training seed
    uint64_t probe_seed = 1;
    double bin_width = 0.02;
};
int cmd_sweep(const SweepArgs& args);

struct ExportArgs {
    std::string checkpoint;
    std::string data_dir;
    std::string out_dir;
};
int cmd_export_embeddings(const ExportArgs& args);

}  // namespace fbc
