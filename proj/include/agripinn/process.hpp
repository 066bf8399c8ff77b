/**
 * @file process.hpp
 * @brief Reduced LINTUL5 biomass dynamics.
 *
 * Daily biomass recurrence driven by four physiological states:
 *
 *   AGB(t+1) = AGB(t) + RUE(t) * PAR(t) * (1 - exp(-k * LAI(t))) * F_W(t)
 *
 * Units: AGB in g/m2, PAR in MJ/m2/day, RUE in g/MJ, LAI and F_W
 * dimensionless. The time step is fixed at one day.
 */
#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace agripinn {

enum class Treatment { shelter, rainfed, irrigated };

std::string_view to_string(Treatment t) noexcept;
Treatment parse_treatment(std::string_view s);

/// One day of exogenous drivers at one location.
struct ForcingRecord {
    int day_of_season = 0;
    double radiation = 0.0;      ///< global radiation, MJ/m2/day
    double t_min = 0.0;          ///< degC
    double t_max = 0.0;          ///< degC
    double precipitation = 0.0;  ///< mm/day, irrigation included
    int soil_code = 0;
    Treatment treatment = Treatment::rainfed;

    /// Throws DomainError on t_min > t_max or negative radiation/precipitation.
    void validate() const;
};

struct RueBounds {
    double lo = 0.5;
    double hi = 4.0;
    double midpoint() const noexcept { return 0.5 * (lo + hi); }
};

struct ProcessParams {
    double k = 0.6;  ///< light-extinction coefficient
    RueBounds rue_bounds{};

    void validate() const;
};

struct LatentState {
    double lai = 0.0;
    double par = 0.0;
    double rue = 0.0;
    double fw = 0.0;

    /// Checks the physical box; `rue_bounds` limits RUE.
    void validate(const RueBounds& rue_bounds) const;
};

struct Trajectory {
    std::string location_id;
    std::vector<double> agb;             ///< T+1 values, g/m2
    std::vector<LatentState> latent;     ///< T values
    std::vector<ForcingRecord> forcing;  ///< T values, may be empty for latent-only runs

    std::size_t days() const noexcept { return latent.size(); }
};

/// Conversion at the reporting boundary: 1 g/m2 = 0.01 t/ha.
inline constexpr double kTonnesPerHectarePerGramPerSquareMetre = 0.01;
inline double g_m2_to_t_ha(double v) noexcept { return v * kTonnesPerHectarePerGramPerSquareMetre; }
inline double t_ha_to_g_m2(double v) noexcept { return v / kTonnesPerHectarePerGramPerSquareMetre; }

/// PAR * (1 - exp(-k * LAI)).
double intercepted_radiation(double par, double lai, double k);

/// The growth law Phi(latent) = RUE * PAR * (1 - exp(-k LAI)) * F_W.
double growth_increment(const LatentState& latent, double k);
double growth_increment(const LatentState& latent, const ProcessParams& params);

double step(double agb, const LatentState& latent, double k);

/// Forward simulation; agb[t+1] = step(agb[t], latent[t]).
Trajectory simulate(double initial_agb, std::span<const LatentState> latent_series,
                    const ProcessParams& params);

/// delta_agb - Phi(latent). Positive means the increment exceeds the process law.
double residual(double delta_agb, const LatentState& latent, double k);

/// Residual of every consecutive pair of a trajectory (T values).
std::vector<double> trajectory_residuals(const Trajectory& traj, double k);

/// d Phi / d LAI = RUE * PAR * F_W * k * exp(-k LAI).
double elasticity_lai(const LatentState& latent, double k);

/// d Phi / d log PAR, which equals Phi. Requires PAR > 0.
double elasticity_log_par(const LatentState& latent, double k);

/// Trajectory CSV: location_id,day,agb_g_m2,lai,par_mj_m2,rue_g_mj,fw,residual,
/// radiation,t_min,t_max,precipitation,soil_code,treatment. The final row (day T)
/// carries only the AGB value.
void write_trajectory_csv(const std::string& path, const Trajectory& traj, double k);
Trajectory read_trajectory_csv(const std::string& path);

}  // namespace agripinn
