#include "agripinn/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

int main(int argc, char** argv) {
    using namespace agripinn::cli;
    CLI::App app{"Hybrid process-guided crop biomass models"};
    app.set_version_flag("--version", code_version());
    app.require_subcommand(1);

    struct Shared {
        CommandOptions opts;
        std::vector<std::string> sets;
        std::string lambda, seed, output_dir;
    };
    Shared s;
    const auto common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", s.opts.config_path, "JSON config file");
        sub->add_option("--set", s.sets, "Override a config key, e.g. --set train.lr=0.01 (repeatable)")->take_all();
        sub->add_option("--seed", s.seed, "Master seed (overrides config)");
        sub->add_option("--output-dir", s.output_dir, "Output directory (overrides config)");
    };
    for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
             {"simulate", "Run the process simulator and write one trajectory CSV per location"},
             {"gen-data", "Generate the synthetic dataset and ground-truth sidecar"},
             {"train", "Train a model on the generated dataset"},
             {"eval", "Evaluate a trained model on the test split"},
             {"ablate", "Original vs hybrid training for each configured backbone"},
             {"report", "Flatten artifacts into plot-ready CSV files"}}) {
        auto* sub = app.add_subcommand(name, help);
        common(sub);
        if (name == "train" || name == "ablate")
            sub->add_option("--lambda", s.lambda, "Process-loss weight, or 'auto' for the grid search");
        if (name == "eval") sub->add_option("--model", s.opts.model, "hybrid or erm (default: last trained)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }

    s.opts.overrides = s.sets;
    if (!s.seed.empty()) s.opts.overrides.push_back("seed=" + s.seed);
    if (!s.lambda.empty())
        s.opts.overrides.push_back(s.lambda == "auto" ? "train.lambda=\"auto\"" : "train.lambda=" + s.lambda);
    if (!s.output_dir.empty()) s.opts.overrides.push_back("output_dir=\"" + s.output_dir + "\"");
    return run_command(app.get_subcommands().front()->get_name(), s.opts, std::cout, std::cerr);
}
