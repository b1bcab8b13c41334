#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "prunelab/errors.hpp"
#include "prunelab/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kRunError = 1, kConfigError = 2, kVerifyFailed = 3 };

void set_log_level() {
    const char* env = std::getenv("PRUNELAB_LOG");
    const std::string level = env ? env : "info";
    if (level == "error") {
        spdlog::set_level(spdlog::level::err);
    } else if (level == "info") {
        spdlog::set_level(spdlog::level::info);
    } else if (level == "debug") {
        spdlog::set_level(spdlog::level::debug);
    } else {
        throw prunelab::ConfigError("PRUNELAB_LOG must be error, info or debug, got '" + level + "'");
    }
}

std::string key_help() {
    std::string s = "Config keys (key=default):\n";
    for (const auto& k : prunelab::config_keys()) {
        s += "  " + k.key + "=" + k.default_value + "\n      " + k.description + "\n";
    }
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fine-pruning experiments on a synthetic transfer task"};
    app.require_subcommand(1);
    app.footer(key_help());

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    unsigned jobs = 1;
    app.add_option("--config", config_path, "Flat key=value config file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Overrides the config seed");
    app.add_option("--out", out_dir, "Overrides the output directory");
    app.add_option("--jobs", jobs, "Worker threads for sweep (0: all cores)");

    auto* gen = app.add_subcommand("gen-tasks", "Write source and target task CSVs");
    auto* pre = app.add_subcommand("pretrain", "Dense training on the source task");
    auto* fine = app.add_subcommand("fineprune", "Fine-prune the pretrained model on the target task");
    auto* sweep = app.add_subcommand("sweep", "Pruner x kept fraction x seed grid into summary.csv");
    auto* verify = app.add_subcommand("verify", "Run the oracle suite into verify_report.csv");
    for (auto* sub : {gen, pre, fine, sweep, verify}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }

    try {
        set_log_level();
        prunelab::ExperimentConfig config =
            config_path.empty() ? prunelab::ExperimentConfig{} : prunelab::load_config(config_path);
        if (seed) config.seed = *seed;
        if (!out_dir.empty()) config.out_dir = out_dir;
        config.validate();

        if (*gen) {
            prunelab::cmd_gen_tasks(config);
        } else if (*pre) {
            prunelab::cmd_pretrain(config);
        } else if (*fine) {
            prunelab::cmd_fineprune(config);
        } else if (*sweep) {
            prunelab::cmd_sweep(config, jobs);
        } else if (*verify) {
            if (!prunelab::cmd_verify(config)) {
                spdlog::error("verification failed");
                return kVerifyFailed;
            }
        }
    } catch (const prunelab::ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return kConfigError;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kRunError;
    }
    return kOk;
}
