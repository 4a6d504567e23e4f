// fbc: fairness-by-binary-compression toolkit
//
// Subcommands: gen-data, train, probe, sweep, export-embeddings.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "fbc/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"fbc: learn and audit compact binary representations"};
    app.require_subcommand(1);

    fbc::GenDataArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a dataset");
    gen_cmd->add_option("--kind", gen.kind, "synthetic-tabular | dsprites-unfair")->required();
    gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
    gen_cmd->add_option("--n", gen.n, "sample count");
    gen_cmd->add_option("--d-x", gen.d_x, "tabular feature count");
    gen_cmd->add_option("--d-s", gen.d_s, "sensitive categories");
    gen_cmd->add_option("--rho", gen.rho, "sensitive leak strength in [0,1]");
    gen_cmd->add_option("--res", gen.resolution, "image resolution");
    gen_cmd->add_option("--seed", gen.seed, "generator seed");

    fbc::TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--method", train.method, "fbc | bvae")
        ->check(CLI::IsMember({"fbc", "bvae"}));
    train_cmd->add_option("--data", train.data_dir, "dataset directory")->required();
    train_cmd->add_option("--out", train.out_dir, "output directory")->required();
    train_cmd->add_option("--config", train.config_path, "config JSON overriding the preset");
    train_cmd->add_option("--beta", train.beta, "rate coefficient");
    train_cmd->add_option("--steps", train.steps, "optimizer steps");
    train_cmd->add_option("--lr", train.lr, "learning rate");
    train_cmd->add_option("--code-bits", train.code_bits, "code length m");
    train_cmd->add_option("--seed", train.seed, "training seed");
    train_cmd->add_option("--res", train.resolution, "dsprites resolution preset");

    fbc::ProbeArgs probe;
    CLI::App* probe_cmd = app.add_subcommand("probe", "audit a trained model");
    probe_cmd->add_option("--checkpoint", probe.checkpoint, "checkpoint file")->required();
    probe_cmd->add_option("--data", probe.data_dir, "dataset directory")->required();
    probe_cmd->add_option("--out", probe.out_dir, "output directory")->required();
    probe_cmd->add_option("--seed", probe.seed, "probe seed");

    fbc::SweepArgs sweep;
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "train+probe over a beta grid");
    sweep_cmd->add_option("--methods", sweep.methods, "methods to sweep")->delimiter(',');
    sweep_cmd->add_option("--betas", sweep.betas, "beta grid")->delimiter(',');
    sweep_cmd->add_option("--seeds", sweep.seeds, "seeds per cell");
    sweep_cmd->add_option("--data", sweep.data_dir, "dataset directory")->required();
    sweep_cmd->add_option("--out", sweep.out_dir, "output directory")->required();
    sweep_cmd->add_option("--steps", sweep.steps, "optimizer steps per run");
    sweep_cmd->add_option("--jobs", sweep.jobs, "parallel runs");
    sweep_cmd->add_option("--seed", sweep.seed, "base training seed");
    sweep_cmd->add_option("--bin-width", sweep.bin_width, "pareto bin width");

    fbc::ExportArgs exp;
    CLI::App* exp_cmd = app.add_subcommand("export-embeddings", "dump representations to CSV");
    exp_cmd->add_option("--checkpoint", exp.checkpoint, "checkpoint file")->required();
    exp_cmd->add_option("--data", exp.data_dir, "dataset directory")->required();
    exp_cmd->add_option("--out", exp.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (*gen_cmd) return fbc::cmd_gen_data(gen);
        if (*train_cmd) return fbc::cmd_train(train);
        if (*probe_cmd) return fbc::cmd_probe(probe);
        if (*sweep_cmd) return fbc::cmd_sweep(sweep);
        if (*exp_cmd) return fbc::cmd_export_embeddings(exp);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
