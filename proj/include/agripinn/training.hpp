/**
 * @file training.hpp
 * @brief Composite loss, optimizers, the training loop and the lambda grid search.
 *
 *   L = L_data + lambda * L_phys
 *   L_data = mean (agb_hat - agb_obs)^2
 *   L_phys = mean r^2,  r = (agb_hat[t+1] - agb_hat[t]) - Phi(latent_hat[t])
 *
 * The residual is evaluated on consecutive rows inside each window.
 */
#pragma once

#include "agripinn/backbone.hpp"
#include "agripinn/data.hpp"
#include "agripinn/errors.hpp"

#include <optional>
#include <string>
#include <vector>

namespace agripinn::train {

using ad::GradientMap;
using ad::Matrix;
using ad::ParameterStore;
using ad::Var;

enum class Optimizer { adam, sgd_momentum };
enum class Schedule { constant, cosine };

std::string_view to_string(Optimizer o) noexcept;
Optimizer parse_optimizer(std::string_view s);
std::string_view to_string(Schedule s) noexcept;
Schedule parse_schedule(std::string_view s);

struct TrainConfig {
    double lambda = 0.5;
    Optimizer optimizer = Optimizer::adam;
    double lr = 1e-3;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    Schedule schedule = Schedule::cosine;
    int batch_size = 128;
    int max_iters = 1000;
    std::uint64_t seed = 42;
    std::optional<double> grad_clip;  ///< global L2 norm cap
    int eval_every = 10;
    int patience = 50;                ///< validation checks without improvement
    bool full_collocation = false;    ///< residual on a separate draw from the collocation pool
    bool process_term = true;         ///< false removes L_phys from the objective entirely
    bool log_wall_time = false;       ///< false writes 0 in the wall_ms column so logs are reproducible
    double k = 0.6;

    void validate() const;
};

struct TrainRecord {
    int iter = 0;
    double data_loss = 0.0;
    double phys_loss = 0.0;
    double total_loss = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

struct TrainLog {
    double lambda = 0.0;
    bool process_term = true;
    std::vector<TrainRecord> records;
    int best_iter = -1;            ///< iteration of the best-validation snapshot (1-based count of updates)
    double best_val_rmse = 0.0;
    double wall_ms_to_best = 0.0;  ///< measured, independent of log_wall_time
    double wall_ms_total = 0.0;
    bool early_stopped = false;
    std::size_t parameter_count = 0;

    std::string csv_text(bool with_wall_time) const;
    std::string summary_json(bool with_wall_time) const;
};

struct FitResult {
    ParameterStore params;  ///< best-validation snapshot
    TrainLog log;
};

/// Non-finite loss during fit. Carries the last finite parameter state.
class DivergenceError : public NumericError {
public:
    DivergenceError(int iter, const std::string& what, ParameterStore last_good)
        : NumericError("iteration " + std::to_string(iter) + ": " + what), iter_(iter), last_good_(std::move(last_good)) {}
    int iter() const noexcept { return iter_; }
    const ParameterStore& last_good() const noexcept { return last_good_; }

private:
    int iter_;
    ParameterStore last_good_;
};

// Scalar losses.
double data_loss(const std::vector<double>& pred, const std::vector<double>& obs);
double process_loss(const nn::PredictionBundle& bundle, double k);
double total_loss(double data, double phys, double lambda);

// Graph losses. `agb` and the latents are (B * window) x 1.
Var data_loss(Var pred, const Matrix& obs);
Var process_residuals(const nn::GraphOutputs& out, ad::Index window, double k);
Var process_loss(const nn::GraphOutputs& out, ad::Index window, double k);

void sgd_momentum_step(ParameterStore& theta, const GradientMap& grads, double lr, double momentum);
void adam_step(ParameterStore& theta, const GradientMap& grads, double lr, double beta1, double beta2, double eps);
double learning_rate(const TrainConfig& cfg, int iter);
/// Scales all gradients so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
double clip_gradients(GradientMap& grads, double max_norm);

/// Builds the full objective on `tape` for one batch (used by fit and by gradient checks).
struct BatchLoss {
    Var total, data, phys;
    double phys_value = 0.0;
};
BatchLoss batch_loss(ad::Tape& tape, const ParameterStore& theta, const nn::NetworkConfig& net, const Matrix& x,
                     const Matrix& y, ad::Index window, const TrainConfig& cfg, std::mt19937_64* dropout_rng,
                     const Matrix* colloc_x = nullptr);

/// Validation RMSE of AGB predictions against observed targets.
double evaluate_rmse(const ParameterStore& theta, const nn::NetworkConfig& net,
                     const std::vector<const data::Sample*>& samples);

/// Training loop: batches of cfg.batch_size windows drawn with replacement, one
/// optimizer update per iteration, validation every cfg.eval_every updates,
/// early stop after cfg.patience checks without improvement.
FitResult fit(ParameterStore theta, const nn::NetworkConfig& net, const std::vector<const data::Sample*>& train,
              const std::vector<const data::Sample*>& val, const TrainConfig& cfg,
              const std::vector<const data::Sample*>* collocation = nullptr);

std::vector<double> default_lambda_grid();  ///< 0.05, 0.10, ..., 1.00

struct GridCandidate {
    double lambda = 0.0;
    double val_rmse = 0.0;
    std::string error;  ///< empty when the fit succeeded
    std::optional<FitResult> result;
};

struct GridResult {
    double best_lambda = 0.0;
    std::size_t best_index = 0;
    std::vector<GridCandidate> candidates;
};

class GridSearchError : public NumericError {
public:
    using NumericError::NumericError;
};

/// One fit per candidate from the same initial parameters (init seed `init_seed`).
/// Selects the lowest validation RMSE; exact ties go to the larger lambda.
GridResult grid_search_lambda(const std::vector<double>& candidates, const nn::NetworkConfig& net,
                              std::uint64_t init_seed, const std::vector<const data::Sample*>& train,
                              const std::vector<const data::Sample*>& val, const TrainConfig& cfg,
                              const std::vector<const data::Sample*>* collocation = nullptr,
                              bool keep_results = true);

}  // namespace agripinn::train
