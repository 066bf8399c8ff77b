#include "agripinn/process.hpp"

#include "agripinn/csv.hpp"
#include "agripinn/errors.hpp"

#include <cmath>
#include <sstream>

namespace agripinn {

std::string_view to_string(Treatment t) noexcept {
    switch (t) {
        case Treatment::shelter: return "shelter";
        case Treatment::rainfed: return "rainfed";
        case Treatment::irrigated: return "irrigated";
    }
    return "rainfed";
}

Treatment parse_treatment(std::string_view s) {
    if (s == "shelter") return Treatment::shelter;
    if (s == "rainfed") return Treatment::rainfed;
    if (s == "irrigated") return Treatment::irrigated;
    throw ArgumentError("unknown treatment '" + std::string(s) + "'");
}

void ForcingRecord::validate() const {
    if (!(radiation >= 0.0)) throw DomainError("radiation", "must be >= 0");
    if (!(precipitation >= 0.0)) throw DomainError("precipitation", "must be >= 0");
    if (!(t_min <= t_max)) throw DomainError("t_min", "must not exceed t_max");
}

void ProcessParams::validate() const {
    if (!(k > 0.0) || !std::isfinite(k)) throw DomainError("k", "must be > 0");
    if (!(rue_bounds.lo > 0.0)) throw DomainError("rue_bounds.lo", "must be > 0");
    if (!(rue_bounds.lo <= rue_bounds.hi)) throw DomainError("rue_bounds", "lo must not exceed hi");
}

void LatentState::validate(const RueBounds& b) const {
    if (!(lai >= 0.0)) throw DomainError("lai", "must be >= 0");
    if (!(par >= 0.0)) throw DomainError("par", "must be >= 0");
    if (!(fw >= 0.0 && fw <= 1.0)) throw DomainError("fw", "must lie in [0, 1]");
    if (!(rue >= b.lo && rue <= b.hi)) throw DomainError("rue", "outside rue_bounds");
}

namespace {

void check_k(double k) {
    if (!(k > 0.0)) throw DomainError("k", "must be > 0");
}

// The growth law itself does not need the RUE box, only sign constraints.
void check_latent(const LatentState& s) {
    if (!(s.lai >= 0.0)) throw DomainError("lai", "must be >= 0");
    if (!(s.par >= 0.0)) throw DomainError("par", "must be >= 0");
    if (!(s.rue >= 0.0)) throw DomainError("rue", "must be >= 0");
    if (!(s.fw >= 0.0 && s.fw <= 1.0)) throw DomainError("fw", "must lie in [0, 1]");
}

}  // namespace

double intercepted_radiation(double par, double lai, double k) {
    if (!(par >= 0.0)) throw DomainError("par", "must be >= 0");
    if (!(lai >= 0.0)) throw DomainError("lai", "must be >= 0");
    check_k(k);
    return par * -std::expm1(-k * lai);
}

double growth_increment(const LatentState& s, double k) {
    check_latent(s);
    return s.rue * intercepted_radiation(s.par, s.lai, k) * s.fw;
}

double growth_increment(const LatentState& s, const ProcessParams& params) {
    s.validate(params.rue_bounds);
    return growth_increment(s, params.k);
}

double step(double agb, const LatentState& latent, double k) {
    if (!(agb >= 0.0)) throw DomainError("agb", "must be >= 0");
    return agb + growth_increment(latent, k);
}

Trajectory simulate(double initial_agb, std::span<const LatentState> latent_series, const ProcessParams& params) {
    if (latent_series.empty()) throw ArgumentError("simulate: latent series is empty");
    params.validate();
    Trajectory traj;
    traj.agb.reserve(latent_series.size() + 1);
    traj.agb.push_back(initial_agb);
    for (const auto& s : latent_series) {
        s.validate(params.rue_bounds);
        traj.agb.push_back(step(traj.agb.back(), s, params.k));
    }
    traj.latent.assign(latent_series.begin(), latent_series.end());
    return traj;
}

double residual(double delta_agb, const LatentState& latent, double k) {
    return delta_agb - growth_increment(latent, k);
}

std::vector<double> trajectory_residuals(const Trajectory& traj, double k) {
    if (traj.agb.size() != traj.latent.size() + 1) {
        throw ArgumentError("trajectory: |agb| must equal |latent| + 1");
    }
    std::vector<double> r(traj.latent.size());
    for (std::size_t t = 0; t < r.size(); ++t) {
        r[t] = residual(traj.agb[t + 1] - traj.agb[t], traj.latent[t], k);
    }
    return r;
}

double elasticity_lai(const LatentState& s, double k) {
    check_latent(s);
    check_k(k);
    return s.rue * s.par * s.fw * k * std::exp(-k * s.lai);
}

double elasticity_log_par(const LatentState& s, double k) {
    check_latent(s);
    if (!(s.par > 0.0)) throw DomainError("par", "log-derivative undefined at par = 0");
    return growth_increment(s, k);
}

namespace {

constexpr const char* kTrajectoryHeader =
    "location_id,day,agb_g_m2,lai,par_mj_m2,rue_g_mj,fw,residual,"
    "radiation,t_min,t_max,precipitation,soil_code,treatment";

}  // namespace

void write_trajectory_csv(const std::string& path, const Trajectory& traj, double k) {
    if (traj.agb.size() != traj.latent.size() + 1) {
        throw ArgumentError("trajectory: |agb| must equal |latent| + 1");
    }
    if (!traj.forcing.empty() && traj.forcing.size() != traj.latent.size()) {
        throw ArgumentError("trajectory: |forcing| must equal |latent|");
    }
    using csv::format_double;
    const auto res = trajectory_residuals(traj, k);
    std::ostringstream out;
    out << kTrajectoryHeader << '\n';
    for (std::size_t t = 0; t < traj.latent.size(); ++t) {
        const auto& s = traj.latent[t];
        out << traj.location_id << ',' << t << ',' << format_double(traj.agb[t]) << ',' << format_double(s.lai)
            << ',' << format_double(s.par) << ',' << format_double(s.rue) << ',' << format_double(s.fw) << ','
            << format_double(res[t]);
        if (traj.forcing.empty()) {
            out << ",,,,,,";
        } else {
            const auto& f = traj.forcing[t];
            out << ',' << format_double(f.radiation) << ',' << format_double(f.t_min) << ','
                << format_double(f.t_max) << ',' << format_double(f.precipitation) << ',' << f.soil_code << ','
                << to_string(f.treatment);
        }
        out << '\n';
    }
    out << traj.location_id << ',' << traj.latent.size() << ',' << format_double(traj.agb.back())
        << ",,,,,,,,,,,\n";
    csv::write_atomic(path, out.str());
}

Trajectory read_trajectory_csv(const std::string& path) {
    auto table = csv::read_file(path);
    const auto c_loc = table.require_column("location_id");
    const auto c_day = table.require_column("day");
    const auto c_agb = table.require_column("agb_g_m2");
    const auto c_lai = table.require_column("lai");
    const auto c_par = table.require_column("par_mj_m2");
    const auto c_rue = table.require_column("rue_g_mj");
    const auto c_fw = table.require_column("fw");
    const auto c_rad = table.find_column("radiation");
    const auto c_tmin = table.find_column("t_min");
    const auto c_tmax = table.find_column("t_max");
    const auto c_pr = table.find_column("precipitation");
    const auto c_soil = table.find_column("soil_code");
    const auto c_tr = table.find_column("treatment");

    Trajectory traj;
    if (table.rows.empty()) throw SchemaError(1, "agb_g_m2", "trajectory has no rows");
    traj.location_id = table.rows[0][c_loc];
    const std::size_t n = table.rows.size();
    bool with_forcing = c_rad && c_tmin && c_tmax && c_pr && c_soil && c_tr;
    for (std::size_t r = 0; r < n; ++r) {
        if (csv::parse_int(table, r, c_day) != static_cast<long long>(r)) {
            throw SchemaError(table.line_numbers[r], "day", "days must be consecutive from 0");
        }
        traj.agb.push_back(csv::parse_double(table, r, c_agb));
        if (r + 1 == n) break;
        LatentState s;
        s.lai = csv::parse_double(table, r, c_lai);
        s.par = csv::parse_double(table, r, c_par);
        s.rue = csv::parse_double(table, r, c_rue);
        s.fw = csv::parse_double(table, r, c_fw);
        traj.latent.push_back(s);
        if (with_forcing && !csv::is_missing(table, r, *c_rad)) {
            ForcingRecord f;
            f.day_of_season = static_cast<int>(r);
            f.radiation = csv::parse_double(table, r, *c_rad);
            f.t_min = csv::parse_double(table, r, *c_tmin);
            f.t_max = csv::parse_double(table, r, *c_tmax);
            f.precipitation = csv::parse_double(table, r, *c_pr);
            f.soil_code = static_cast<int>(csv::parse_int(table, r, *c_soil));
            f.treatment = parse_treatment(table.rows[r][*c_tr]);
            traj.forcing.push_back(f);
        }
    }
    if (!traj.forcing.empty() && traj.forcing.size() != traj.latent.size()) {
        throw SchemaError(table.line_numbers.back(), "radiation", "forcing columns partially filled");
    }
    return traj;
}

}  // namespace agripinn
