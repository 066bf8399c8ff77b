/**
 * @file data.hpp
 * @brief Synthetic forcing, simulator-backed datasets, features, splits and CSV I/O.
 *
 * Ground-truth latents live in SyntheticData::truth and in a sidecar CSV only;
 * the training-facing types (Site, Dataset) have no field that can hold them.
 */
#pragma once

#include "agripinn/autodiff.hpp"
#include "agripinn/process.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace agripinn::data {

using ad::Matrix;

enum class Split { train, val, test };
std::string_view to_string(Split s) noexcept;
Split parse_split(std::string_view s);

/// Ground-truth latent policy of the generator.
struct ScenarioParams {
    double par_fraction = 0.5;
    double rue = 3.0;                               ///< g/MJ, constant per crop
    double lai_rate = 0.006;                        ///< logistic slope per degC day
    double lai_midpoint_tt = 700.0;                 ///< degC days
    std::array<double, 3> lai_max{4.5, 5.5, 6.0};   ///< by soil code
    std::array<double, 3> bucket_mm{60.0, 100.0, 140.0};
    double initial_fill = 0.8;                      ///< bucket fraction at sowing
    double stress_onset = 0.5;                      ///< relative water content below which fw < 1
    double fw_floor = 0.05;
    double demand_coef = 0.25;                      ///< mm per degC day at full canopy cover

    void validate() const;
};

/// One location-season: forcing, observed AGB and split. No latent fields.
struct Site {
    std::string location_id;
    Treatment treatment = Treatment::rainfed;
    int soil_code = 0;
    std::vector<ForcingRecord> forcing;  ///< T days
    std::vector<double> agb_obs;         ///< T values; agb_obs[d] is AGB at the start of day d
    std::vector<bool> imputed;           ///< T flags, set when any cell of that row was mean-imputed
    Split split = Split::train;

    std::size_t days() const noexcept { return forcing.size(); }
};

struct SyntheticData {
    std::vector<Site> sites;
    std::vector<Trajectory> truth;  ///< aligned with sites
};

struct GeneratorConfig {
    int n_locations = 80;
    int days = 200;
    double noise_std = 0.05;
    double initial_agb = 1.0;
    std::vector<Treatment> treatments{Treatment::shelter, Treatment::rainfed, Treatment::irrigated};
    ScenarioParams scenario{};

    void validate() const;
};

/// Seasonal forcing for one location. Treatment changes precipitation only;
/// the random stream is consumed identically for every treatment.
std::vector<ForcingRecord> generate_forcing(std::uint64_t seed, int days, Treatment treatment);

/// Bucket water balance and canopy curve -> daily latent states.
std::vector<LatentState> forcing_to_latent(const std::vector<ForcingRecord>& forcing, const ScenarioParams& scenario);

/// Locations cycle through `cfg.treatments`. Noise: obs = max(0, agb + N(0,1) * noise_std * agb).
/// All sites start in the train split.
SyntheticData build_dataset(const GeneratorConfig& cfg, const ProcessParams& params, std::uint64_t seed);

/// Stratified split over items. Global split sizes use largest-remainder rounding
/// of fractions * n; those sizes are then shared out across strata proportionally.
/// Strata with fewer members than non-empty splits are pooled and assigned at random;
/// each such fallback appends a note.
std::vector<Split> split_stratified(const std::vector<std::string>& strata, const std::array<double, 3>& fractions,
                                    std::uint64_t seed, std::vector<std::string>* notes = nullptr);

/// Applies split_stratified to sites keyed by treatment.
void assign_splits(std::vector<Site>& sites, const std::array<double, 3>& fractions, std::uint64_t seed,
                   std::vector<std::string>* notes = nullptr);

// ---------------------------------------------------------------------------
// Features

/// Column names of the feature matrix built for every day.
const std::vector<std::string>& feature_names();
/// Indices of the same-day driver columns (no season clock, no cumulative radiation).
const std::vector<int>& driver_feature_indices();

/// T x F raw feature matrix of one site.
Matrix site_features(const Site& site);

struct Sample {
    std::string location_id;
    Treatment treatment = Treatment::rainfed;
    Split split = Split::train;
    int start_day = 0;
    Matrix features;              ///< window x F
    std::vector<double> target;   ///< window observed AGB values
};

struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;
    std::vector<bool> scaled;  ///< false for zero-variance features (passed through)
};

struct Dataset {
    std::vector<std::string> feature_names;
    std::vector<Sample> samples;
    std::optional<NormStats> norm;
    std::vector<std::string> warnings;

    std::size_t window() const { return samples.empty() ? 0 : samples.front().target.size(); }
    std::vector<const Sample*> split(Split s) const;
};

/// window = 0 takes the full season; otherwise non-overlapping windows of that length.
Dataset make_samples(const std::vector<Site>& sites, int window);

/// Statistics from train samples only.
NormStats compute_norm_stats(const Dataset& ds);
/// Standardizes features in place with train-split statistics. Zero-variance
/// features pass through and add a warning.
void normalize(Dataset& ds);
void normalize(Dataset& ds, const NormStats& stats);
void denormalize(Dataset& ds);

/// Row-stacks the features of `samples` (batch-major: row = b * window + t).
Matrix stack_features(const std::vector<const Sample*>& samples);
Matrix stack_targets(const std::vector<const Sample*>& samples);  ///< (B * window) x 1

// ---------------------------------------------------------------------------
// CSV

/// location_id,day,treatment,radiation,t_min,t_max,precipitation,soil_code,agb_obs_g_m2,split
std::string dataset_csv_text(const std::vector<Site>& sites);
void write_dataset_csv(const std::string& path, const std::vector<Site>& sites);
/// Missing numeric cells (empty, NA, nan) are replaced by the column mean and flagged.
std::vector<Site> read_dataset_csv(const std::string& path, std::size_t* imputed_cells = nullptr);

/// location_id,day,treatment,lai,par,rue,fw
void write_truth_csv(const std::string& path, const std::vector<Trajectory>& truth);
/// The sidecar stores latents only; AGB is rebuilt by replaying the simulator from `initial_agb`.
std::vector<Trajectory> read_truth_csv(const std::string& path, double initial_agb, const ProcessParams& params);

std::string dataset_hash(const std::vector<Site>& sites);

}  // namespace agripinn::data
