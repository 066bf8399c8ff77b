/**
 * @file cli.hpp
 * @brief Experiment configuration, run manifests and the pipeline subcommands.
 *
 * Configuration precedence, lowest to highest: built-in defaults, the config
 * file, `--set key=value` overrides in command-line order, then the dedicated
 * flags (`--seed`, `--lambda`, `--output-dir`). A relative output_dir is
 * resolved under $AGRIPINN_OUTPUT_ROOT when that variable is set.
 *
 * Output directory layout:
 *   dataset.csv, truth.csv, dataset.json        gen-data
 *   trajectories/<location>.csv                 simulate
 *   models/<hybrid|erm>/...                     train
 *   eval/<hybrid|erm>/report.{json,csv}         eval
 *   ablation.csv                                ablate
 *   report/{curves,metrics,ablation}.csv        report
 *   manifests/<command>.json                    every command
 */
#pragma once

#include "agripinn/backbone.hpp"
#include "agripinn/data.hpp"
#include "agripinn/eval.hpp"
#include "agripinn/training.hpp"

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace agripinn::cli {

enum ExitCode : int { kOk = 0, kIoError = 1, kConfigError = 2, kMissingArtifact = 3, kDivergence = 4 };

struct ExperimentConfig {
    std::uint64_t seed = 42;
    std::string output_dir = "runs/default";

    ProcessParams process{};

    data::GeneratorConfig data{};
    std::array<double, 3> split{0.64, 0.16, 0.2};  ///< train, val, test
    /// Non-empty: every site with one of these treatments is a test site and the
    /// remaining sites are split train/val in proportion to split[0]:split[1].
    std::vector<Treatment> test_treatments;
    int window = 0;  ///< 0 = full season

    nn::NetworkConfig network{};
    std::optional<double> agb_scale;  ///< unset = mean of the training targets

    train::TrainConfig train{};
    bool lambda_search = false;  ///< train.lambda = "auto"
    std::vector<double> lambda_grid = train::default_lambda_grid();

    double drought_threshold = eval::kDroughtThreshold;

    std::vector<nn::BackboneKind> ablate_backbones{nn::BackboneKind::mlp, nn::BackboneKind::conv1d,
                                                   nn::BackboneKind::recurrent};

    /// Throws ConfigError with the dotted path of the offending field.
    void validate() const;
};

/// Parses a JSON document; unknown keys and wrong types raise ConfigError naming the path.
ExperimentConfig parse_config(const std::string& json_text);
/// `key.path=value`; value is read as JSON, falling back to a bare string.
void apply_override(std::string& json_text, const std::string& assignment);
/// Reads `path` (empty = defaults only), applies overrides in order, parses and validates.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

/// Canonical JSON of a resolved config (every field, fixed key order).
std::string config_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

/// output_dir, resolved under $AGRIPINN_OUTPUT_ROOT when relative and the variable is set.
std::string resolve_output_dir(const ExperimentConfig& cfg);

struct RunManifest {
    std::string command;
    std::string status;  ///< running, complete, failed
    std::string config_hash;
    std::string dataset_hash;
    std::string code_version;
    std::string started_utc;
    std::string finished_utc;
    std::string error;
    std::vector<std::string> artifacts;

    std::string json_text() const;
    /// Atomic replace of `<dir>/manifests/<command>.json`.
    void write(const std::string& dir) const;
};

const char* code_version() noexcept;

struct CommandOptions {
    std::string config_path;
    std::vector<std::string> overrides;  ///< applied in order, after the config file
    std::string model;                   ///< eval: hybrid or erm; empty = last trained
};

/// Writes one CSV trajectory per location and prints a summary.
void cmd_simulate(const ExperimentConfig& cfg, std::ostream& out);
void cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out);
void cmd_train(const ExperimentConfig& cfg, std::ostream& out);
void cmd_eval(const ExperimentConfig& cfg, const std::string& model, std::ostream& out);
void cmd_ablate(const ExperimentConfig& cfg, std::ostream& out);
void cmd_report(const ExperimentConfig& cfg, std::ostream& out);

/// Loads the config, runs `command` with manifests, maps exceptions to exit codes.
int run_command(const std::string& command, const CommandOptions& opts, std::ostream& out, std::ostream& err);

// Helpers shared with tests.

/// Splits sites per the config (stratified fractions or treatment hold-out).
void apply_splits(const ExperimentConfig& cfg, std::vector<data::Site>& sites, std::vector<std::string>* notes);

/// Model directory label for a training lambda.
inline std::string model_label(double lambda) { return lambda == 0.0 ? "erm" : "hybrid"; }

/// Per-sample predictions of a saved model.
struct ModelArtifact {
    std::string label;
    double lambda = 0.0;
    nn::NetworkConfig network;
    data::NormStats norm;
    int window = 0;
    std::string dataset_hash;
    ad::ParameterStore params;
};
ModelArtifact load_model(const std::string& dir);

}  // namespace agripinn::cli
