#include "agripinn/data.hpp"

#include "agripinn/csv.hpp"
#include "agripinn/errors.hpp"
#include "agripinn/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace agripinn::data {

std::string_view to_string(Split s) noexcept {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ArgumentError("unknown split '" + std::string(s) + "'");
}

void ScenarioParams::validate() const {
    if (!(par_fraction > 0.0 && par_fraction <= 1.0)) throw ConfigError("data.scenario.par_fraction", "must lie in (0, 1]");
    if (!(rue > 0.0)) throw ConfigError("data.scenario.rue", "must be > 0");
    for (double c : bucket_mm) {
        if (!(c > 0.0)) throw ConfigError("data.scenario.bucket_mm", "must be > 0");
    }
    for (double m : lai_max) {
        if (!(m > 0.0)) throw ConfigError("data.scenario.lai_max", "must be > 0");
    }
    if (!(initial_fill >= 0.0 && initial_fill <= 1.0)) throw ConfigError("data.scenario.initial_fill", "must lie in [0, 1]");
    if (!(stress_onset > 0.0 && stress_onset <= 1.0)) throw ConfigError("data.scenario.stress_onset", "must lie in (0, 1]");
    if (!(fw_floor >= 0.0 && fw_floor < 1.0)) throw ConfigError("data.scenario.fw_floor", "must lie in [0, 1)");
    if (!(demand_coef >= 0.0)) throw ConfigError("data.scenario.demand_coef", "must be >= 0");
}

void GeneratorConfig::validate() const {
    if (n_locations < 1) throw ConfigError("data.n_locations", "must be >= 1");
    if (days < 1) throw ConfigError("data.days", "must be >= 1");
    if (!(noise_std >= 0.0)) throw ConfigError("data.noise_std", "must be >= 0");
    if (!(initial_agb >= 0.0)) throw ConfigError("data.initial_agb", "must be >= 0");
    if (treatments.empty()) throw ConfigError("data.treatments", "must not be empty");
    scenario.validate();
}

// ---------------------------------------------------------------------------
// Generator

std::vector<ForcingRecord> generate_forcing(std::uint64_t seed, int days, Treatment treatment) {
    if (days < 1) throw ArgumentError("generate_forcing: days must be >= 1");
    Rng rng(seed);
    const double amp = rng.uniform(8.0, 14.0);
    const double base = rng.uniform(4.0, 8.0);
    const double phase = rng.uniform(-20.0, 20.0);
    const double tbase = rng.uniform(2.0, 8.0);
    const int soil = static_cast<int>(rng.index(3));

    std::vector<ForcingRecord> out(static_cast<std::size_t>(days));
    for (int d = 0; d < days; ++d) {
        const double seas = std::sin(M_PI * (d + phase + 30.0) / (days + 60.0));
        auto& f = out[static_cast<std::size_t>(d)];
        f.day_of_season = d;
        f.soil_code = soil;
        f.treatment = treatment;
        f.radiation = std::max(0.5, base + amp * seas + rng.normal(0.0, 2.0));
        const double tmean = tbase + 14.0 * seas + rng.normal(0.0, 2.0);
        const double span = rng.uniform(6.0, 12.0);
        f.t_min = tmean - 0.5 * span;
        f.t_max = tmean + 0.5 * span;
        // Always draw both numbers so the stream does not depend on the treatment.
        const bool wet = rng.uniform() < 0.3;
        const double amount = rng.exponential(6.0);
        double p = wet ? amount : 0.0;
        if (treatment == Treatment::shelter) p *= 0.1;
        if (treatment == Treatment::irrigated && d % 5 == 0) p += 25.0;
        f.precipitation = p;
    }
    return out;
}

std::vector<LatentState> forcing_to_latent(const std::vector<ForcingRecord>& forcing, const ScenarioParams& sc) {
    std::vector<LatentState> out;
    out.reserve(forcing.size());
    double tt = 0.0;
    double water = -1.0;
    for (const auto& f : forcing) {
        f.validate();
        if (f.soil_code < 0 || f.soil_code > 2) throw DomainError("soil_code", "must be 0, 1 or 2");
        const double cap = sc.bucket_mm[static_cast<std::size_t>(f.soil_code)];
        const double lai_max = sc.lai_max[static_cast<std::size_t>(f.soil_code)];
        if (water < 0.0) water = sc.initial_fill * cap;

        const double tmean = 0.5 * (f.t_min + f.t_max);
        tt += std::max(tmean, 0.0);
        LatentState s;
        s.lai = lai_max / (1.0 + std::exp(-sc.lai_rate * (tt - sc.lai_midpoint_tt)));
        s.par = sc.par_fraction * f.radiation;
        s.rue = sc.rue;

        // Bucket: rain in, stress from relative content, transpiration out.
        water = std::min(cap, water + f.precipitation);
        const double rel = std::min(1.0, (water / cap) / sc.stress_onset);
        const double smooth = rel * rel * (3.0 - 2.0 * rel);
        s.fw = sc.fw_floor + (1.0 - sc.fw_floor) * smooth;
        const double demand = sc.demand_coef * std::max(tmean, 0.0) * (1.0 - std::exp(-0.5 * s.lai));
        water = std::max(0.0, water - demand * s.fw);
        out.push_back(s);
    }
    return out;
}

namespace {

std::string location_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "loc%03d", i);
    return buf;
}

}  // namespace

SyntheticData build_dataset(const GeneratorConfig& cfg, const ProcessParams& params, std::uint64_t seed) {
    cfg.validate();
    params.validate();
    SyntheticData out;
    out.sites.reserve(static_cast<std::size_t>(cfg.n_locations));
    out.truth.reserve(static_cast<std::size_t>(cfg.n_locations));
    for (int i = 0; i < cfg.n_locations; ++i) {
        const Treatment tr = cfg.treatments[static_cast<std::size_t>(i) % cfg.treatments.size()];
        auto forcing = generate_forcing(derive_seed(seed, 2 * static_cast<std::uint64_t>(i)), cfg.days, tr);
        auto latent = forcing_to_latent(forcing, cfg.scenario);
        auto traj = simulate(cfg.initial_agb, latent, params);
        traj.location_id = location_name(i);
        traj.forcing = forcing;

        Site site;
        site.location_id = traj.location_id;
        site.treatment = tr;
        site.soil_code = forcing.front().soil_code;
        site.forcing = std::move(forcing);
        site.agb_obs.resize(static_cast<std::size_t>(cfg.days));
        site.imputed.assign(static_cast<std::size_t>(cfg.days), false);
        Rng noise(derive_seed(seed, 2 * static_cast<std::uint64_t>(i) + 1));
        for (std::size_t d = 0; d < site.agb_obs.size(); ++d) {
            const double agb = traj.agb[d];
            site.agb_obs[d] = cfg.noise_std > 0.0 ? std::max(0.0, agb + noise.normal() * cfg.noise_std * agb) : agb;
        }
        out.sites.push_back(std::move(site));
        out.truth.push_back(std::move(traj));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splits

namespace {

// Largest-remainder rounding of `weights * total` (weights sum to 1). Ties go
// to the earlier index.
std::array<std::size_t, 3> apportion(std::size_t total, const std::array<double, 3>& w) {
    std::array<std::size_t, 3> n{};
    std::array<double, 3> rem{};
    std::size_t used = 0;
    for (int j = 0; j < 3; ++j) {
        const double exact = w[j] * static_cast<double>(total);
        n[j] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        rem[j] = exact - static_cast<double>(n[j]);
        used += n[j];
    }
    while (used < total) {
        int best = 0;
        for (int j = 1; j < 3; ++j) {
            if (rem[j] > rem[best] + 1e-12) best = j;
        }
        ++n[best];
        rem[best] = -1.0;
        ++used;
    }
    return n;
}

}  // namespace

std::vector<Split> split_stratified(const std::vector<std::string>& strata, const std::array<double, 3>& fractions,
                                    std::uint64_t seed, std::vector<std::string>* notes) {
    double total = 0.0;
    int nonzero = 0;
    for (double f : fractions) {
        if (!(f >= 0.0)) throw ArgumentError("split fractions must be >= 0");
        total += f;
        nonzero += f > 0.0;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("split fractions must sum to 1");
    const std::size_t n = strata.size();
    std::vector<Split> out(n, Split::train);
    if (n == 0) return out;

    // Members per stratum in first-appearance order.
    std::vector<std::string> keys;
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < n; ++i) {
        auto& m = members[strata[i]];
        if (m.empty()) keys.push_back(strata[i]);
        m.push_back(i);
    }

    std::vector<std::string> regular;
    std::vector<std::size_t> pooled;
    for (const auto& k : keys) {
        if (static_cast<int>(members[k].size()) < nonzero) {
            pooled.insert(pooled.end(), members[k].begin(), members[k].end());
            if (notes) {
                notes->push_back("stratum '" + k + "' has " + std::to_string(members[k].size()) +
                                 " member(s), fewer than the " + std::to_string(nonzero) +
                                 " non-empty splits; assigned by global random draw");
            }
        } else {
            regular.push_back(k);
        }
    }

    // Controlled rounding: floor every stratum x split cell, then hand out the
    // leftovers by largest remainder subject to both row and column totals.
    std::map<std::string, std::array<std::size_t, 3>> cell;
    struct Rem {
        double r;
        std::size_t stratum;
        int split;
    };
    std::vector<Rem> rems;
    std::vector<std::size_t> row_left(regular.size());
    std::size_t regular_total = 0;
    for (const auto& k : regular) regular_total += members[k].size();
    // Split sizes over the regular strata; pooled members are drawn separately.
    auto col_left = apportion(regular_total, fractions);
    for (std::size_t s = 0; s < regular.size(); ++s) {
        const auto sz = members[regular[s]].size();
        auto& c = cell[regular[s]];
        std::size_t used = 0;
        for (int j = 0; j < 3; ++j) {
            const double exact = fractions[j] * static_cast<double>(sz);
            c[j] = static_cast<std::size_t>(std::floor(exact + 1e-9));
            c[j] = std::min(c[j], col_left[j]);
            col_left[j] -= c[j];
            used += c[j];
            rems.push_back({exact - static_cast<double>(c[j]), s, j});
        }
        row_left[s] = sz - used;
    }
    std::stable_sort(rems.begin(), rems.end(), [](const Rem& a, const Rem& b) { return a.r > b.r; });
    for (const auto& r : rems) {
        if (row_left[r.stratum] > 0 && col_left[r.split] > 0) {
            ++cell[regular[r.stratum]][r.split];
            --row_left[r.stratum];
            --col_left[r.split];
        }
    }
    // Anything still unplaced goes wherever column capacity remains.
    for (std::size_t s = 0; s < regular.size(); ++s) {
        for (int j = 0; j < 3 && row_left[s] > 0; ++j) {
            while (row_left[s] > 0 && col_left[j] > 0) {
                ++cell[regular[s]][j];
                --row_left[s];
                --col_left[j];
            }
        }
        if (row_left[s] > 0) cell[regular[s]][0] += row_left[s];
    }

    Rng rng(seed);
    auto shuffle = [&rng](std::vector<std::size_t>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
    };
    for (const auto& k : regular) {
        auto idx = members[k];
        shuffle(idx);
        const auto& c = cell[k];
        std::size_t p = 0;
        for (int j = 0; j < 3; ++j) {
            for (std::size_t q = 0; q < c[j]; ++q) out[idx[p++]] = static_cast<Split>(j);
        }
    }
    for (std::size_t i : pooled) {
        const double u = rng.uniform();
        out[i] = u < fractions[0] ? Split::train : (u < fractions[0] + fractions[1] ? Split::val : Split::test);
    }
    return out;
}

void assign_splits(std::vector<Site>& sites, const std::array<double, 3>& fractions, std::uint64_t seed,
                   std::vector<std::string>* notes) {
    std::vector<std::string> keys;
    keys.reserve(sites.size());
    for (const auto& s : sites) keys.emplace_back(to_string(s.treatment));
    auto splits = split_stratified(keys, fractions, seed, notes);
    for (std::size_t i = 0; i < sites.size(); ++i) sites[i].split = splits[i];
}

// ---------------------------------------------------------------------------
// Features

const std::vector<std::string>& feature_names() {
    static const std::vector<std::string> names{
        "season_fraction", "radiation", "t_min", "t_max", "precipitation", "precip_7d", "precip_30d",
        "thermal_time", "cum_radiation", "soil_0", "soil_1", "soil_2", "shelter", "rainfed", "irrigated"};
    return names;
}

const std::vector<int>& driver_feature_indices() {
    static const std::vector<int> idx{1, 2, 3, 4, 5, 6, 7, 9, 10, 11, 12, 13, 14};
    return idx;
}

Matrix site_features(const Site& site) {
    const auto T = static_cast<Eigen::Index>(site.days());
    Matrix x = Matrix::Zero(T, static_cast<Eigen::Index>(feature_names().size()));
    std::vector<double> csum(static_cast<std::size_t>(T) + 1, 0.0);
    double tt = 0.0, cum_rad = 0.0;
    for (Eigen::Index d = 0; d < T; ++d) {
        const auto& f = site.forcing[static_cast<std::size_t>(d)];
        csum[static_cast<std::size_t>(d) + 1] = csum[static_cast<std::size_t>(d)] + f.precipitation;
        auto trailing = [&](Eigen::Index w) {
            const auto hi = static_cast<std::size_t>(d + 1);
            const auto lo = static_cast<std::size_t>(std::max<Eigen::Index>(0, d + 1 - w));
            return csum[hi] - csum[lo];
        };
        tt += std::max(0.5 * (f.t_min + f.t_max), 0.0);
        cum_rad += f.radiation;
        x(d, 0) = static_cast<double>(d) / static_cast<double>(T);
        x(d, 1) = f.radiation;
        x(d, 2) = f.t_min;
        x(d, 3) = f.t_max;
        x(d, 4) = f.precipitation;
        x(d, 5) = trailing(7);
        x(d, 6) = trailing(30);
        x(d, 7) = tt;
        x(d, 8) = cum_rad;
        if (site.soil_code >= 0 && site.soil_code <= 2) x(d, 9 + site.soil_code) = 1.0;
        x(d, 12 + static_cast<int>(site.treatment)) = 1.0;
    }
    return x;
}

std::vector<const Sample*> Dataset::split(Split s) const {
    std::vector<const Sample*> out;
    for (const auto& x : samples) {
        if (x.split == s) out.push_back(&x);
    }
    return out;
}

Dataset make_samples(const std::vector<Site>& sites, int window) {
    if (window < 0) throw ArgumentError("window must be >= 0");
    Dataset ds;
    ds.feature_names = feature_names();
    std::size_t uniform = 0;
    for (const auto& site : sites) {
        const auto T = static_cast<int>(site.days());
        if (T < 2) throw ArgumentError("site '" + site.location_id + "' has fewer than 2 days");
        const int w = window == 0 ? T : window;
        if (uniform == 0) uniform = static_cast<std::size_t>(w);
        if (static_cast<std::size_t>(w) != uniform || w > T) {
            throw ArgumentError("site '" + site.location_id + "': windows must have uniform length " +
                                std::to_string(uniform));
        }
        const Matrix x = site_features(site);
        for (int start = 0; start + w <= T; start += w) {
            Sample s;
            s.location_id = site.location_id;
            s.treatment = site.treatment;
            s.split = site.split;
            s.start_day = start;
            s.features = x.middleRows(start, w);
            s.target.assign(site.agb_obs.begin() + start, site.agb_obs.begin() + start + w);
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

NormStats compute_norm_stats(const Dataset& ds) {
    const auto train = ds.split(Split::train);
    if (train.empty()) throw InsufficientDataError("normalize: train split is empty");
    const auto F = train.front()->features.cols();
    NormStats st;
    st.mean.assign(static_cast<std::size_t>(F), 0.0);
    st.std.assign(static_cast<std::size_t>(F), 1.0);
    st.scaled.assign(static_cast<std::size_t>(F), true);
    double count = 0.0;
    for (const auto* s : train) count += static_cast<double>(s->features.rows());
    for (Eigen::Index j = 0; j < F; ++j) {
        double m = 0.0;
        for (const auto* s : train) m += s->features.col(j).sum();
        m /= count;
        double v = 0.0;
        for (const auto* s : train) v += (s->features.col(j).array() - m).square().sum();
        v /= count;
        st.mean[static_cast<std::size_t>(j)] = m;
        const double sd = std::sqrt(v);
        if (!(sd > 1e-12 * std::max(1.0, std::abs(m)))) {
            st.scaled[static_cast<std::size_t>(j)] = false;
        } else {
            st.std[static_cast<std::size_t>(j)] = sd;
        }
    }
    return st;
}

void normalize(Dataset& ds) { normalize(ds, compute_norm_stats(ds)); }

void normalize(Dataset& ds, const NormStats& st) {
    if (ds.norm) throw ArgumentError("dataset is already normalized");
    for (std::size_t j = 0; j < st.scaled.size(); ++j) {
        if (!st.scaled[j]) {
            const auto& name = j < ds.feature_names.size() ? ds.feature_names[j] : std::to_string(j);
            ds.warnings.push_back("feature '" + name + "' has zero variance in the train split; left unscaled");
        }
    }
    for (auto& s : ds.samples) {
        if (static_cast<std::size_t>(s.features.cols()) != st.mean.size()) {
            throw ShapeError("normalize: feature count " + std::to_string(s.features.cols()) + " vs stats " +
                             std::to_string(st.mean.size()));
        }
        for (Eigen::Index j = 0; j < s.features.cols(); ++j) {
            if (!st.scaled[static_cast<std::size_t>(j)]) continue;
            s.features.col(j) =
                ((s.features.col(j).array() - st.mean[static_cast<std::size_t>(j)]) / st.std[static_cast<std::size_t>(j)])
                    .matrix();
        }
    }
    ds.norm = st;
}

void denormalize(Dataset& ds) {
    if (!ds.norm) throw ArgumentError("dataset is not normalized");
    const auto& st = *ds.norm;
    for (auto& s : ds.samples) {
        for (Eigen::Index j = 0; j < s.features.cols(); ++j) {
            if (!st.scaled[static_cast<std::size_t>(j)]) continue;
            s.features.col(j) =
                (s.features.col(j).array() * st.std[static_cast<std::size_t>(j)] + st.mean[static_cast<std::size_t>(j)])
                    .matrix();
        }
    }
    ds.norm.reset();
}

Matrix stack_features(const std::vector<const Sample*>& samples) {
    if (samples.empty()) throw ArgumentError("stack_features: no samples");
    const auto w = samples.front()->features.rows();
    const auto F = samples.front()->features.cols();
    Matrix x(w * static_cast<Eigen::Index>(samples.size()), F);
    for (std::size_t b = 0; b < samples.size(); ++b) {
        if (samples[b]->features.rows() != w) throw ShapeError("stack_features: ragged windows");
        x.middleRows(static_cast<Eigen::Index>(b) * w, w) = samples[b]->features;
    }
    return x;
}

Matrix stack_targets(const std::vector<const Sample*>& samples) {
    if (samples.empty()) throw ArgumentError("stack_targets: no samples");
    const auto w = static_cast<Eigen::Index>(samples.front()->target.size());
    Matrix y(w * static_cast<Eigen::Index>(samples.size()), 1);
    for (std::size_t b = 0; b < samples.size(); ++b) {
        for (Eigen::Index t = 0; t < w; ++t) y(static_cast<Eigen::Index>(b) * w + t, 0) = samples[b]->target[static_cast<std::size_t>(t)];
    }
    return y;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

constexpr const char* kDatasetHeader =
    "location_id,day,treatment,radiation,t_min,t_max,precipitation,soil_code,agb_obs_g_m2,split";
constexpr const char* kTruthHeader = "location_id,day,treatment,lai,par,rue,fw";

}  // namespace

std::string dataset_csv_text(const std::vector<Site>& sites) {
    using csv::format_double;
    std::ostringstream out;
    out << kDatasetHeader << '\n';
    for (const auto& s : sites) {
        for (std::size_t d = 0; d < s.days(); ++d) {
            const auto& f = s.forcing[d];
            out << s.location_id << ',' << d << ',' << to_string(s.treatment) << ',' << format_double(f.radiation)
                << ',' << format_double(f.t_min) << ',' << format_double(f.t_max) << ','
                << format_double(f.precipitation) << ',' << s.soil_code << ',' << format_double(s.agb_obs[d]) << ','
                << to_string(s.split) << '\n';
        }
    }
    return out.str();
}

void write_dataset_csv(const std::string& path, const std::vector<Site>& sites) {
    csv::write_atomic(path, dataset_csv_text(sites));
}

std::vector<Site> read_dataset_csv(const std::string& path, std::size_t* imputed_cells) {
    const auto table = csv::read_file(path);
    const auto c_loc = table.require_column("location_id");
    const auto c_day = table.require_column("day");
    const auto c_tr = table.require_column("treatment");
    const auto c_soil = table.require_column("soil_code");
    const auto c_split = table.require_column("split");
    const std::array<const char*, 5> numeric_names{"radiation", "t_min", "t_max", "precipitation", "agb_obs_g_m2"};
    std::array<std::size_t, 5> num_cols{};
    for (std::size_t k = 0; k < numeric_names.size(); ++k) num_cols[k] = table.require_column(numeric_names[k]);

    // Column means over present cells for mean substitution.
    std::array<double, 5> mean{};
    std::array<std::size_t, 5> present{};
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        for (std::size_t k = 0; k < num_cols.size(); ++k) {
            if (csv::is_missing(table, r, num_cols[k])) continue;
            mean[k] += csv::parse_double(table, r, num_cols[k]);
            ++present[k];
        }
    }
    for (std::size_t k = 0; k < mean.size(); ++k) {
        if (present[k] > 0) mean[k] /= static_cast<double>(present[k]);
    }

    std::vector<Site> sites;
    std::map<std::string, std::size_t> index;
    std::size_t imputed = 0;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto line = table.line_numbers[r];
        const auto& id = row[c_loc];
        if (id.empty()) throw SchemaError(line, "location_id", "empty identifier");
        auto it = index.find(id);
        if (it == index.end()) {
            Site s;
            s.location_id = id;
            try {
                s.treatment = parse_treatment(row[c_tr]);
                s.split = parse_split(row[c_split]);
            } catch (const ArgumentError& e) {
                throw SchemaError(line, "treatment/split", e.what());
            }
            s.soil_code = static_cast<int>(csv::parse_int(table, r, c_soil));
            it = index.emplace(id, sites.size()).first;
            sites.push_back(std::move(s));
        }
        auto& site = sites[it->second];
        const auto day = csv::parse_int(table, r, c_day);
        if (day != static_cast<long long>(site.days())) {
            throw SchemaError(line, "day", "expected day " + std::to_string(site.days()) + " for " + id);
        }
        if (row[c_tr] != to_string(site.treatment)) throw SchemaError(line, "treatment", "changes within location " + id);
        if (row[c_split] != to_string(site.split)) throw SchemaError(line, "split", "changes within location " + id);
        std::array<double, 5> v{};
        bool flag = false;
        for (std::size_t k = 0; k < num_cols.size(); ++k) {
            if (csv::is_missing(table, r, num_cols[k])) {
                if (present[k] == 0) throw SchemaError(line, numeric_names[k], "column has no values to impute from");
                v[k] = mean[k];
                flag = true;
                ++imputed;
            } else {
                v[k] = csv::parse_double(table, r, num_cols[k]);
            }
        }
        ForcingRecord f;
        f.day_of_season = static_cast<int>(day);
        f.radiation = v[0];
        f.t_min = v[1];
        f.t_max = v[2];
        f.precipitation = v[3];
        f.soil_code = site.soil_code;
        f.treatment = site.treatment;
        try {
            f.validate();
        } catch (const DomainError& e) {
            throw SchemaError(line, e.field(), e.what());
        }
        site.forcing.push_back(f);
        site.agb_obs.push_back(v[4]);
        site.imputed.push_back(flag);
    }
    if (imputed_cells) *imputed_cells = imputed;
    return sites;
}

void write_truth_csv(const std::string& path, const std::vector<Trajectory>& truth) {
    using csv::format_double;
    std::ostringstream out;
    out << kTruthHeader << '\n';
    for (const auto& tr : truth) {
        for (std::size_t d = 0; d < tr.latent.size(); ++d) {
            const auto& s = tr.latent[d];
            const auto treatment = tr.forcing.empty() ? std::string_view("") : to_string(tr.forcing[d].treatment);
            out << tr.location_id << ',' << d << ',' << treatment << ',' << format_double(s.lai) << ','
                << format_double(s.par) << ',' << format_double(s.rue) << ',' << format_double(s.fw) << '\n';
        }
    }
    csv::write_atomic(path, out.str());
}

std::vector<Trajectory> read_truth_csv(const std::string& path, double initial_agb, const ProcessParams& params) {
    const auto table = csv::read_file(path);
    const auto c_loc = table.require_column("location_id");
    const auto c_day = table.require_column("day");
    const auto c_lai = table.require_column("lai");
    const auto c_par = table.require_column("par");
    const auto c_rue = table.require_column("rue");
    const auto c_fw = table.require_column("fw");
    std::vector<Trajectory> out;
    std::map<std::string, std::size_t> index;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& id = table.rows[r][c_loc];
        auto it = index.find(id);
        if (it == index.end()) {
            it = index.emplace(id, out.size()).first;
            out.emplace_back();
            out.back().location_id = id;
        }
        auto& tr = out[it->second];
        if (csv::parse_int(table, r, c_day) != static_cast<long long>(tr.latent.size())) {
            throw SchemaError(table.line_numbers[r], "day", "days must be consecutive from 0");
        }
        tr.latent.push_back({csv::parse_double(table, r, c_lai), csv::parse_double(table, r, c_par),
                             csv::parse_double(table, r, c_rue), csv::parse_double(table, r, c_fw)});
    }
    for (auto& tr : out) {
        auto replay = simulate(initial_agb, tr.latent, params);
        tr.agb = std::move(replay.agb);
    }
    return out;
}

std::string dataset_hash(const std::vector<Site>& sites) { return csv::hex64(csv::fnv1a(dataset_csv_text(sites))); }

}  // namespace agripinn::data
