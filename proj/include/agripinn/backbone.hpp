/**
 * @file backbone.hpp
 * @brief Regression network: feature window -> AGB plus four bounded latent heads.
 *
 * Inputs are batch-major stacks of windows (row = b * window + t). Three
 * interchangeable backbones (per-step MLP, 1-D temporal convolution, Elman
 * RNN) feed the AGB head. With latent_inputs = drivers the latent heads come
 * from a separate per-step MLP over the same-day driver columns; with
 * latent_inputs = shared one 5-channel head sits on the backbone.
 */
#pragma once

#include "agripinn/autodiff.hpp"
#include "agripinn/process.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace agripinn::nn {

using ad::Index;
using ad::Matrix;
using ad::ParameterStore;
using ad::Tape;
using ad::Var;

enum class BackboneKind { mlp, conv1d, recurrent };
enum class Activation { tanh, relu };
enum class LatentInputs { drivers, shared };
enum class Mode { train, infer };

std::string_view to_string(BackboneKind k) noexcept;
BackboneKind parse_backbone(std::string_view s);
std::string_view to_string(Activation a) noexcept;
Activation parse_activation(std::string_view s);
std::string_view to_string(LatentInputs l) noexcept;
LatentInputs parse_latent_inputs(std::string_view s);

struct NetworkConfig {
    BackboneKind backbone = BackboneKind::mlp;
    std::vector<int> hidden{32, 32};
    int kernel = 5;  ///< conv1d only, odd
    Activation activation = Activation::tanh;
    double dropout = 0.0;
    LatentInputs latent_inputs = LatentInputs::drivers;
    std::vector<int> latent_hidden{32, 32};
    int input_features = 15;
    std::vector<int> driver_features{1, 2, 3, 4, 5, 6, 7, 9, 10, 11, 12, 13, 14};
    RueBounds rue_bounds{};
    double lai_cap = 12.0;
    double par_scale = 10.0;  ///< MJ/m2/day per unit softplus
    double agb_scale = 1.0;   ///< g/m2 per unit softplus; training sets it from the train targets

    /// Throws ConfigError with a "network.*" field path.
    void validate() const;
};

/// Bounded-head outputs, each (B * window) x 1.
struct GraphOutputs {
    Var agb, fw, lai, rue, par;
};

struct PredictionBundle {
    Index batch = 0;
    Index window = 0;
    std::vector<double> agb_hat;            ///< B * window
    std::vector<LatentState> latent_hat;    ///< B * window
    std::vector<double> delta_agb_hat;      ///< B * (window - 1), consecutive differences within each window
};

ParameterStore init_network(const NetworkConfig& cfg, std::uint64_t seed);

/// Builds the network on `tape`. `rng` is required in train mode when dropout > 0.
GraphOutputs forward_graph(Tape& tape, const ParameterStore& theta, const NetworkConfig& cfg, const Matrix& x,
                           Index window, Mode mode, std::mt19937_64* rng = nullptr);

/// Value-only forward pass.
PredictionBundle forward(const ParameterStore& theta, const NetworkConfig& cfg, const Matrix& x, Index window,
                         Mode mode = Mode::infer, std::mt19937_64* rng = nullptr);

PredictionBundle bundle_from_graph(const GraphOutputs& out, Index window);

/// Maps raw channels (fw, lai, rue, par) into the latent box.
LatentState bound_latents(double raw_fw, double raw_lai, double raw_rue, double raw_par, const RueBounds& bounds,
                          double lai_cap, double par_scale);

}  // namespace agripinn::nn
