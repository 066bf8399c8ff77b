/**
 * @file eval.hpp
 * @brief Regression metrics, latent-recovery scoring and the paired Wilcoxon signed-rank test.
 *
 *   RMSE  = sqrt(mean (y - y_hat)^2)
 *   MAE   = mean |y - y_hat|
 *   R2    = 1 - SS_res / SS_tot
 *   CC    = Pearson correlation
 *   RMSPE = 100 * sqrt(mean ((y - y_hat) / y)^2), zero observations excluded
 */
#pragma once

#include "agripinn/errors.hpp"
#include "agripinn/process.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace agripinn::eval {

/// A metric that is mathematically undefined for the given input (constant series).
class UndefinedMetricError : public ArgumentError {
public:
    using ArgumentError::ArgumentError;
};

struct EvalSeries {
    std::vector<double> y;      ///< observed
    std::vector<double> y_hat;  ///< predicted
    std::string unit;
};

using Values = std::span<const double>;

double rmse(Values y, Values y_hat);
double mae(Values y, Values y_hat);
double r2(Values y, Values y_hat);
double cc(Values y, Values y_hat);

struct Rmspe {
    double percent = 0.0;
    std::size_t excluded = 0;  ///< observations equal to zero, left out of the mean
};
Rmspe rmspe(Values y, Values y_hat);

inline double rmse(const EvalSeries& s) { return rmse(s.y, s.y_hat); }
inline double mae(const EvalSeries& s) { return mae(s.y, s.y_hat); }
inline double r2(const EvalSeries& s) { return r2(s.y, s.y_hat); }
inline double cc(const EvalSeries& s) { return cc(s.y, s.y_hat); }
inline Rmspe rmspe(const EvalSeries& s) { return rmspe(s.y, s.y_hat); }

/// W is the sum of ranks of positive differences a - b (W+). Two-sided p.
struct WilcoxonResult {
    double w = 0.0;
    double p = 1.0;
    std::size_t n = 0;  ///< pairs left after dropping zero differences
    bool exact = false;
};

/// Zero differences dropped, ties mid-ranked; exact distribution for n <= 20,
/// normal approximation with tie and continuity corrections above.
/// Throws InsufficientDataError when fewer than 5 non-zero differences remain.
WilcoxonResult wilcoxon_signed_rank(Values a, Values b);

/// Exact two-sided p for W+ given the (possibly tied) absolute-difference ranks.
double wilcoxon_exact_p(double w_plus, std::span<const double> ranks);

constexpr double kDroughtThreshold = 0.6;

int drought_days(Values fw, double threshold = kDroughtThreshold);

struct LatentMetric {
    std::string variable;  ///< lai, par, rue, fw
    Rmspe rmspe;
    std::optional<double> cc;
    std::string cc_error;  ///< set when CC is undefined
};

struct LatentRecovery {
    std::vector<LatentMetric> variables;
    int drought_days_truth = 0;
    int drought_days_pred = 0;
};

/// Per-variable scores of predicted against ground-truth latents (aligned day by day).
LatentRecovery latent_recovery(std::span<const LatentState> pred, std::span<const LatentState> truth);

struct MetricEntry {
    std::string metric;
    std::string variable;
    std::string treatment;  ///< "all" or a treatment name
    double value = 0.0;
    std::string unit;
};

struct SignificanceEntry {
    std::string comparison;
    WilcoxonResult result;
};

struct EvalReport {
    std::string label;  ///< "hybrid" or "ERM"
    double lambda = 0.0;
    std::vector<MetricEntry> metrics;
    std::vector<SignificanceEntry> significance;
    std::vector<std::string> notes;

    /// Throws DomainError when an entry violates its range (negative RMSE, |CC| > 1, ...).
    void validate() const;
    std::string json_text() const;
    /// Flat `metric,variable,treatment,value` rows.
    std::string csv_text() const;
};

}  // namespace agripinn::eval
