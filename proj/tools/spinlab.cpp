// Command-line front end: runs one named experiment from an INI config and
// writes CSV payloads plus a summary.json into <out>/<name>/.
//
// Exit codes: 0 all checks passed, 1 a numerical check failed, 2 bad usage
// or bad configuration.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include <spinlab/spinlab.hpp>

int main(int argc, char** argv) {
    CLI::App app{"spherical spin-glass laboratory"};
    app.require_subcommand(0, 1);

    std::string config_path;
    std::string subcommand;
    std::string out_dir;
    std::uint64_t seed_override = 0;
    bool seed_given = false;
    int threads_override = 0;
    bool single_thread = false;
    bool list_only = false;

    app.add_option("subcommand", subcommand, "experiment to run (see --list)");
    app.add_option("--config", config_path, "INI config file path");
    app.add_option("--seed", seed_override, "override experiment.seed")
        ->each([&](const std::string&) { seed_given = true; });
    app.add_option("--threads", threads_override, "override experiment.threads");
    app.add_option("--out", out_dir, "override experiment.out");
    app.add_flag("--single-thread", single_thread, "force threads = 1");
    app.add_flag("--list", list_only, "list known subcommands and exit");

    CLI11_PARSE(app, argc, argv);

    if (list_only) {
        for (const auto& name : spinlab::known_subcommands()) std::printf("%s\n", name.c_str());
        return 0;
    }
    if (subcommand.empty()) {
        std::fprintf(stderr, "error: missing subcommand (try --list)\n");
        return 2;
    }

    try {
        spinlab::ExperimentConfig cfg = config_path.empty()
                                            ? spinlab::ExperimentConfig{}
                                            : spinlab::ExperimentConfig::load(config_path);
        if (seed_given) cfg.seed = seed_override;
        if (threads_override > 0) cfg.threads = threads_override;
        if (single_thread) cfg.threads = 1;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        cfg.validate();

        spinlab::RunOutcome outcome = spinlab::run_experiment(cfg, subcommand);
        std::printf("%s: %s (wrote %s)\n", subcommand.c_str(),
                    outcome.pass ? "pass" : "FAIL", outcome.csv_path.string().c_str());
        return outcome.pass ? 0 : 1;
    } catch (const spinlab::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
