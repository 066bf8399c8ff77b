#include "agripinn/cli.hpp"

#include "agripinn/csv.hpp"
#include "agripinn/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#ifndef AGRIPINN_VERSION
#define AGRIPINN_VERSION "0.0.0"
#endif

namespace agripinn::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const char* code_version() noexcept { return AGRIPINN_VERSION; }

// ---------------------------------------------------------------------------
// Config parsing

namespace {

std::string join_path(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

/// Field reader over one JSON object that remembers which keys were consumed.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    const json* get(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }
    std::string path(const std::string& key) const { return join_path(path_, key); }

    void number(const std::string& key, double& v) {
        if (auto* x = get(key)) v = as_number(*x, path(key));
    }
    void integer(const std::string& key, int& v) {
        if (auto* x = get(key)) v = as_int(*x, path(key));
    }
    void boolean(const std::string& key, bool& v) {
        if (auto* x = get(key)) {
            if (!x->is_boolean()) throw ConfigError(path(key), "expected true or false");
            v = x->get<bool>();
        }
    }
    void string(const std::string& key, std::string& v) {
        if (auto* x = get(key)) v = as_string(*x, path(key));
    }
    void int_list(const std::string& key, std::vector<int>& v) {
        if (auto* x = get(key)) {
            if (!x->is_array()) throw ConfigError(path(key), "expected an array");
            v.clear();
            for (std::size_t i = 0; i < x->size(); ++i) v.push_back(as_int((*x)[i], path(key) + "[" + std::to_string(i) + "]"));
        }
    }
    void number_list(const std::string& key, std::vector<double>& v) {
        if (auto* x = get(key)) {
            if (!x->is_array()) throw ConfigError(path(key), "expected an array");
            v.clear();
            for (std::size_t i = 0; i < x->size(); ++i)
                v.push_back(as_number((*x)[i], path(key) + "[" + std::to_string(i) + "]"));
        }
    }
    template <std::size_t N>
    void number_array(const std::string& key, std::array<double, N>& v) {
        std::vector<double> tmp;
        number_list(key, tmp);
        if (get(key) == nullptr) return;
        if (tmp.size() != N) throw ConfigError(path(key), "expected " + std::to_string(N) + " numbers");
        std::copy(tmp.begin(), tmp.end(), v.begin());
    }
    template <class T, class Parse>
    void enum_list(const std::string& key, std::vector<T>& v, Parse parse) {
        if (auto* x = get(key)) {
            if (!x->is_array()) throw ConfigError(path(key), "expected an array");
            v.clear();
            for (std::size_t i = 0; i < x->size(); ++i) {
                const std::string p = path(key) + "[" + std::to_string(i) + "]";
                v.push_back(parse_enum(as_string((*x)[i], p), p, parse));
            }
        }
    }
    template <class T, class Parse>
    void enumeration(const std::string& key, T& v, Parse parse) {
        if (auto* x = get(key)) v = parse_enum(as_string(*x, path(key)), path(key), parse);
    }

    /// Rejects keys that no reader asked for.
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(path(it.key()), "unknown key");
    }

    static double as_number(const json& x, const std::string& p) {
        if (!x.is_number()) throw ConfigError(p, "expected a number");
        return x.get<double>();
    }
    static int as_int(const json& x, const std::string& p) {
        if (!x.is_number_integer()) throw ConfigError(p, "expected an integer");
        const auto v = x.get<long long>();
        if (v < -2147483647LL || v > 2147483647LL) throw ConfigError(p, "integer out of range");
        return static_cast<int>(v);
    }
    static std::string as_string(const json& x, const std::string& p) {
        if (!x.is_string()) throw ConfigError(p, "expected a string");
        return x.get<std::string>();
    }
    template <class Parse>
    static auto parse_enum(const std::string& s, const std::string& p, Parse parse) {
        try {
            return parse(s);
        } catch (const ConfigError& e) {
            throw ConfigError(p, e.what());
        } catch (const Error& e) {
            throw ConfigError(p, e.what());
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void parse_process(const json& j, ExperimentConfig& c) {
    Fields f(j, "process");
    f.number("k", c.process.k);
    std::array<double, 2> rb{c.process.rue_bounds.lo, c.process.rue_bounds.hi};
    f.number_array("rue_bounds", rb);
    c.process.rue_bounds = {rb[0], rb[1]};
    f.finish();
}

void parse_data(const json& j, ExperimentConfig& c) {
    Fields f(j, "data");
    f.integer("n_locations", c.data.n_locations);
    f.integer("days", c.data.days);
    f.number("noise_std", c.data.noise_std);
    f.number("initial_agb", c.data.initial_agb);
    f.enum_list("treatments", c.data.treatments, parse_treatment);
    f.number_array("split", c.split);
    f.enum_list("test_treatments", c.test_treatments, parse_treatment);
    f.integer("window", c.window);
    if (auto* s = f.get("scenario")) {
        auto& sc = c.data.scenario;
        Fields g(*s, "data.scenario");
        g.number("par_fraction", sc.par_fraction);
        g.number("rue", sc.rue);
        g.number("lai_rate", sc.lai_rate);
        g.number("lai_midpoint_tt", sc.lai_midpoint_tt);
        g.number_array("lai_max", sc.lai_max);
        g.number_array("bucket_mm", sc.bucket_mm);
        g.number("initial_fill", sc.initial_fill);
        g.number("stress_onset", sc.stress_onset);
        g.number("fw_floor", sc.fw_floor);
        g.number("demand_coef", sc.demand_coef);
        g.finish();
    }
    f.finish();
}

void parse_network(const json& j, ExperimentConfig& c) {
    Fields f(j, "network");
    auto& n = c.network;
    f.enumeration("backbone", n.backbone, nn::parse_backbone);
    f.int_list("hidden", n.hidden);
    f.integer("kernel", n.kernel);
    f.enumeration("activation", n.activation, nn::parse_activation);
    f.number("dropout", n.dropout);
    f.enumeration("latent_inputs", n.latent_inputs, nn::parse_latent_inputs);
    f.int_list("latent_hidden", n.latent_hidden);
    f.number("lai_cap", n.lai_cap);
    f.number("par_scale", n.par_scale);
    if (auto* s = f.get("agb_scale")) {
        if (s->is_string() && s->get<std::string>() == "auto")
            c.agb_scale.reset();
        else
            c.agb_scale = Fields::as_number(*s, "network.agb_scale");
    }
    f.finish();
}

void parse_train(const json& j, ExperimentConfig& c) {
    Fields f(j, "train");
    auto& t = c.train;
    if (auto* s = f.get("lambda")) {
        if (s->is_string() && s->get<std::string>() == "auto") {
            c.lambda_search = true;
        } else {
            c.lambda_search = false;
            t.lambda = Fields::as_number(*s, "train.lambda");
        }
    }
    f.number_list("lambda_grid", c.lambda_grid);
    f.enumeration("optimizer", t.optimizer, train::parse_optimizer);
    f.number("lr", t.lr);
    f.number("momentum", t.momentum);
    f.number("beta1", t.beta1);
    f.number("beta2", t.beta2);
    f.number("adam_eps", t.adam_eps);
    f.enumeration("schedule", t.schedule, train::parse_schedule);
    f.integer("batch_size", t.batch_size);
    f.integer("max_iters", t.max_iters);
    if (auto* s = f.get("grad_clip")) {
        if (s->is_null())
            t.grad_clip.reset();
        else
            t.grad_clip = Fields::as_number(*s, "train.grad_clip");
    }
    f.integer("eval_every", t.eval_every);
    f.integer("patience", t.patience);
    f.boolean("full_collocation", t.full_collocation);
    f.boolean("process_term", t.process_term);
    f.boolean("log_wall_time", t.log_wall_time);
    f.finish();
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text.empty() ? std::string("{}") : json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<config>", std::string("invalid JSON: ") + e.what());
    }
    ExperimentConfig c;
    Fields f(j, "");
    if (auto* s = f.get("seed")) {
        if (!s->is_number_unsigned()) throw ConfigError("seed", "expected a non-negative integer");
        c.seed = s->get<std::uint64_t>();
    }
    f.string("output_dir", c.output_dir);
    if (auto* s = f.get("process")) parse_process(*s, c);
    if (auto* s = f.get("data")) parse_data(*s, c);
    if (auto* s = f.get("network")) parse_network(*s, c);
    if (auto* s = f.get("train")) parse_train(*s, c);
    if (auto* s = f.get("eval")) {
        Fields g(*s, "eval");
        g.number("drought_threshold", c.drought_threshold);
        g.finish();
    }
    if (auto* s = f.get("ablate")) {
        Fields g(*s, "ablate");
        g.enum_list("backbones", c.ablate_backbones, nn::parse_backbone);
        g.finish();
    }
    f.finish();

    // Quantities with a single source of truth.
    c.network.rue_bounds = c.process.rue_bounds;
    c.network.input_features = static_cast<int>(data::feature_names().size());
    c.train.k = c.process.k;
    c.train.seed = c.seed;
    return c;
}

void ExperimentConfig::validate() const {
    try {
        process.validate();
    } catch (const DomainError& e) {
        throw ConfigError("process." + e.field(), e.what());
    }
    data.validate();
    double sum = 0.0;
    for (double s : split) {
        if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("data.split", "fractions must be finite and >= 0");
        sum += s;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("data.split", "fractions must sum to 1");
    if (!(split[0] > 0.0)) throw ConfigError("data.split", "train fraction must be > 0");
    for (auto t : test_treatments) {
        if (std::find(data.treatments.begin(), data.treatments.end(), t) == data.treatments.end())
            throw ConfigError("data.test_treatments", std::string(to_string(t)) + " is not generated");
    }
    if (!test_treatments.empty()) {
        const bool all = std::all_of(data.treatments.begin(), data.treatments.end(), [&](Treatment t) {
            return std::find(test_treatments.begin(), test_treatments.end(), t) != test_treatments.end();
        });
        if (all) throw ConfigError("data.test_treatments", "leaves no treatment for training");
    }
    if (window < 0 || window == 1 || window > data.days)
        throw ConfigError("data.window", "must be 0 (full season) or in [2, days]");
    network.validate();
    if (agb_scale && !(*agb_scale > 0.0)) throw ConfigError("network.agb_scale", "must be > 0 or \"auto\"");
    train.validate();
    if (lambda_grid.empty()) throw ConfigError("train.lambda_grid", "must not be empty");
    for (double l : lambda_grid)
        if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("train.lambda_grid", "values must be finite and >= 0");
    if (!(drought_threshold > 0.0 && drought_threshold <= 1.0))
        throw ConfigError("eval.drought_threshold", "must lie in (0, 1]");
    if (ablate_backbones.empty()) throw ConfigError("ablate.backbones", "must list at least one backbone");
    if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
}

void apply_override(std::string& json_text, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must have the form key=value");
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json root;
    try {
        root = json::parse(json_text.empty() ? std::string("{}") : json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<config>", std::string("invalid JSON: ") + e.what());
    }
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &root;
    std::string walked;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError(key, "empty path segment");
        walked = join_path(walked, part);
        if (!node->is_object()) throw ConfigError(walked, "not an object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
    json_text = root.dump();
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::string text;
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot read config file " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        text = ss.str();
        try {
            [[maybe_unused]] const auto probe = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ConfigError(path, std::string("invalid JSON: ") + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(text, o);
    auto cfg = parse_config(text);
    cfg.validate();
    return cfg;
}

namespace {

json network_json(const nn::NetworkConfig& n) {
    json j;
    j["backbone"] = nn::to_string(n.backbone);
    j["hidden"] = n.hidden;
    j["kernel"] = n.kernel;
    j["activation"] = nn::to_string(n.activation);
    j["dropout"] = n.dropout;
    j["latent_inputs"] = nn::to_string(n.latent_inputs);
    j["latent_hidden"] = n.latent_hidden;
    j["input_features"] = n.input_features;
    j["driver_features"] = n.driver_features;
    j["rue_bounds"] = {n.rue_bounds.lo, n.rue_bounds.hi};
    j["lai_cap"] = n.lai_cap;
    j["par_scale"] = n.par_scale;
    j["agb_scale"] = n.agb_scale;
    return j;
}

nn::NetworkConfig network_from_json(const json& j) {
    nn::NetworkConfig n;
    n.backbone = nn::parse_backbone(j.at("backbone").get<std::string>());
    n.hidden = j.at("hidden").get<std::vector<int>>();
    n.kernel = j.at("kernel").get<int>();
    n.activation = nn::parse_activation(j.at("activation").get<std::string>());
    n.dropout = j.at("dropout").get<double>();
    n.latent_inputs = nn::parse_latent_inputs(j.at("latent_inputs").get<std::string>());
    n.latent_hidden = j.at("latent_hidden").get<std::vector<int>>();
    n.input_features = j.at("input_features").get<int>();
    n.driver_features = j.at("driver_features").get<std::vector<int>>();
    n.rue_bounds = {j.at("rue_bounds").at(0).get<double>(), j.at("rue_bounds").at(1).get<double>()};
    n.lai_cap = j.at("lai_cap").get<double>();
    n.par_scale = j.at("par_scale").get<double>();
    n.agb_scale = j.at("agb_scale").get<double>();
    return n;
}

std::vector<std::string> treatment_names(const std::vector<Treatment>& v) {
    std::vector<std::string> out;
    for (auto t : v) out.emplace_back(to_string(t));
    return out;
}

}  // namespace

std::string config_json(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["process"] = {{"k", c.process.k}, {"rue_bounds", {c.process.rue_bounds.lo, c.process.rue_bounds.hi}}};
    const auto& sc = c.data.scenario;
    j["data"] = {{"n_locations", c.data.n_locations},
                 {"days", c.data.days},
                 {"noise_std", c.data.noise_std},
                 {"initial_agb", c.data.initial_agb},
                 {"treatments", treatment_names(c.data.treatments)},
                 {"split", c.split},
                 {"test_treatments", treatment_names(c.test_treatments)},
                 {"window", c.window},
                 {"scenario",
                  {{"par_fraction", sc.par_fraction},
                   {"rue", sc.rue},
                   {"lai_rate", sc.lai_rate},
                   {"lai_midpoint_tt", sc.lai_midpoint_tt},
                   {"lai_max", sc.lai_max},
                   {"bucket_mm", sc.bucket_mm},
                   {"initial_fill", sc.initial_fill},
                   {"stress_onset", sc.stress_onset},
                   {"fw_floor", sc.fw_floor},
                   {"demand_coef", sc.demand_coef}}}};
    json net = network_json(c.network);
    net.erase("input_features");
    net.erase("driver_features");
    net.erase("rue_bounds");
    if (c.agb_scale)
        net["agb_scale"] = *c.agb_scale;
    else
        net["agb_scale"] = "auto";
    j["network"] = net;
    const auto& t = c.train;
    json tj;
    if (c.lambda_search)
        tj["lambda"] = "auto";
    else
        tj["lambda"] = t.lambda;
    tj["lambda_grid"] = c.lambda_grid;
    tj["optimizer"] = train::to_string(t.optimizer);
    tj["lr"] = t.lr;
    tj["momentum"] = t.momentum;
    tj["beta1"] = t.beta1;
    tj["beta2"] = t.beta2;
    tj["adam_eps"] = t.adam_eps;
    tj["schedule"] = train::to_string(t.schedule);
    tj["batch_size"] = t.batch_size;
    tj["max_iters"] = t.max_iters;
    tj["grad_clip"] = t.grad_clip ? json(*t.grad_clip) : json(nullptr);
    tj["eval_every"] = t.eval_every;
    tj["patience"] = t.patience;
    tj["full_collocation"] = t.full_collocation;
    tj["process_term"] = t.process_term;
    tj["log_wall_time"] = t.log_wall_time;
    j["train"] = tj;
    j["eval"] = {{"drought_threshold", c.drought_threshold}};
    std::vector<std::string> bb;
    for (auto b : c.ablate_backbones) bb.emplace_back(nn::to_string(b));
    j["ablate"] = {{"backbones", bb}};
    return j.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) { return csv::hex64(csv::fnv1a(config_json(cfg))); }

std::string resolve_output_dir(const ExperimentConfig& cfg) {
    fs::path p(cfg.output_dir);
    if (p.is_relative()) {
        if (const char* root = std::getenv("AGRIPINN_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
    }
    return p.lexically_normal().string();
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string path_str(const fs::path& p) { return p.string(); }

}  // namespace

std::string RunManifest::json_text() const {
    json j;
    j["command"] = command;
    j["status"] = status;
    j["config_hash"] = config_hash;
    j["dataset_hash"] = dataset_hash;
    j["code_version"] = code_version;
    j["started_utc"] = started_utc;
    j["finished_utc"] = finished_utc;
    if (!error.empty()) j["error"] = error;
    j["artifacts"] = artifacts;
    return j.dump(2) + "\n";
}

void RunManifest::write(const std::string& dir) const {
    const fs::path d = fs::path(dir) / "manifests";
    fs::create_directories(d);
    csv::write_atomic(path_str(d / (command + ".json")), json_text());
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces

void apply_splits(const ExperimentConfig& cfg, std::vector<data::Site>& sites, std::vector<std::string>* notes) {
    if (cfg.test_treatments.empty()) {
        data::assign_splits(sites, cfg.split, cfg.seed, notes);
        return;
    }
    const auto held_out = [&](Treatment t) {
        return std::find(cfg.test_treatments.begin(), cfg.test_treatments.end(), t) != cfg.test_treatments.end();
    };
    std::vector<data::Site> rest;
    std::vector<std::size_t> index;
    for (std::size_t i = 0; i < sites.size(); ++i) {
        if (held_out(sites[i].treatment)) {
            sites[i].split = data::Split::test;
        } else {
            rest.push_back(sites[i]);
            index.push_back(i);
        }
    }
    const double tv = cfg.split[0] + cfg.split[1];
    data::assign_splits(rest, {cfg.split[0] / tv, cfg.split[1] / tv, 0.0}, cfg.seed, notes);
    for (std::size_t k = 0; k < rest.size(); ++k) sites[index[k]].split = rest[k].split;
}

namespace {

fs::path require(const fs::path& p) {
    if (!fs::exists(p)) throw MissingArtifactError(p.string());
    return p;
}

std::vector<data::Site> load_sites(const fs::path& dir) {
    return data::read_dataset_csv(path_str(require(dir / "dataset.csv")));
}

/// Samples plus split views; pinned in memory because the views point into it.
struct Prepared {
    data::Dataset ds;
    std::vector<const data::Sample*> train, val, test, all;

    Prepared() = default;
    Prepared(const Prepared&) = delete;
    Prepared& operator=(const Prepared&) = delete;
};

std::unique_ptr<Prepared> prepare(const std::vector<data::Site>& sites, int window, const data::NormStats* stats) {
    auto p = std::make_unique<Prepared>();
    p->ds = data::make_samples(sites, window);
    if (stats)
        data::normalize(p->ds, *stats);
    else
        data::normalize(p->ds);
    p->train = p->ds.split(data::Split::train);
    p->val = p->ds.split(data::Split::val);
    p->test = p->ds.split(data::Split::test);
    for (const auto& s : p->ds.samples) p->all.push_back(&s);
    if (p->train.empty()) throw ConfigError("data.split", "no training samples");
    if (p->val.empty()) throw ConfigError("data.split", "no validation samples; early stopping needs a validation split");
    return p;
}

double mean_target(const std::vector<const data::Sample*>& samples) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto* p : samples) {
        for (double v : p->target) s += v;
        n += p->target.size();
    }
    return n ? s / static_cast<double>(n) : 1.0;
}

struct TrainOutcome {
    train::FitResult fit;
    double lambda = 0.0;
    std::vector<train::GridCandidate> grid;
};

TrainOutcome train_model(const ExperimentConfig& cfg, const nn::NetworkConfig& net, const train::TrainConfig& tc,
                         bool search, const Prepared& p) {
    const auto* colloc = tc.full_collocation ? &p.all : nullptr;
    TrainOutcome out;
    if (search) {
        auto g = train::grid_search_lambda(cfg.lambda_grid, net, cfg.seed, p.train, p.val, tc, colloc, true);
        out.lambda = g.best_lambda;
        out.fit = std::move(*g.candidates[g.best_index].result);
        for (auto& c : g.candidates) c.result.reset();
        out.grid = std::move(g.candidates);
    } else {
        out.fit = train::fit(nn::init_network(net, cfg.seed), net, p.train, p.val, tc, colloc);
        out.lambda = tc.lambda;
    }
    return out;
}

nn::PredictionBundle predict(const ad::ParameterStore& theta, const nn::NetworkConfig& net,
                             const std::vector<const data::Sample*>& samples) {
    const auto window = static_cast<ad::Index>(samples.front()->target.size());
    return nn::forward(theta, net, data::stack_features(samples), window);
}

/// Test RMSE over all test samples and per treatment.
std::map<std::string, double> rmse_by_treatment(const nn::PredictionBundle& b,
                                                const std::vector<const data::Sample*>& samples) {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
    const std::size_t T = static_cast<std::size_t>(b.window);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t t = 0; t < T; ++t) {
            for (const std::string& g : {std::string("all"), std::string(to_string(samples[i]->treatment))}) {
                groups[g].first.push_back(samples[i]->target[t]);
                groups[g].second.push_back(b.agb_hat[i * T + t]);
            }
        }
    }
    std::map<std::string, double> out;
    for (const auto& [g, v] : groups) out[g] = eval::rmse(v.first, v.second);
    return out;
}

json norm_json(const data::NormStats& s) {
    std::vector<int> scaled;
    for (bool b : s.scaled) scaled.push_back(b ? 1 : 0);
    return {{"mean", s.mean}, {"std", s.std}, {"scaled", scaled}};
}

data::NormStats norm_from_json(const json& j) {
    data::NormStats s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.std = j.at("std").get<std::vector<double>>();
    for (int v : j.at("scaled").get<std::vector<int>>()) s.scaled.push_back(v != 0);
    return s;
}

std::string format_fixed(double v, int digits) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(digits) << v;
    return o.str();
}

struct CommandResult {
    std::vector<std::string> artifacts;
    std::string dataset_hash;
};

CommandResult simulate_impl(const ExperimentConfig& cfg, std::ostream& out) {
    const fs::path dir = resolve_output_dir(cfg);
    auto synth = data::build_dataset(cfg.data, cfg.process, cfg.seed);
    const fs::path tdir = dir / "trajectories";
    fs::create_directories(tdir);
    CommandResult r;
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& traj : synth.truth) {
        const auto path = tdir / (traj.location_id + ".csv");
        write_trajectory_csv(path_str(path), traj, cfg.process.k);
        r.artifacts.push_back(path_str(path));
        lo = std::min(lo, traj.agb.back());
        hi = std::max(hi, traj.agb.back());
    }
    out << "simulated " << synth.truth.size() << " locations x " << cfg.data.days << " days; final AGB "
        << format_fixed(g_m2_to_t_ha(lo), 3) << ".." << format_fixed(g_m2_to_t_ha(hi), 3) << " t/ha\n";
    return r;
}

CommandResult gen_data_impl(const ExperimentConfig& cfg, std::ostream& out) {
    const fs::path dir = resolve_output_dir(cfg);
    fs::create_directories(dir);
    auto synth = data::build_dataset(cfg.data, cfg.process, cfg.seed);
    std::vector<std::string> notes;
    apply_splits(cfg, synth.sites, &notes);
    CommandResult r;
    r.dataset_hash = data::dataset_hash(synth.sites);
    data::write_dataset_csv(path_str(dir / "dataset.csv"), synth.sites);
    data::write_truth_csv(path_str(dir / "truth.csv"), synth.truth);
    std::map<std::string, int> counts{{"train", 0}, {"val", 0}, {"test", 0}};
    for (const auto& s : synth.sites) ++counts[std::string(data::to_string(s.split))];
    json meta;
    meta["dataset_hash"] = r.dataset_hash;
    meta["config_hash"] = config_hash(cfg);
    meta["seed"] = cfg.seed;
    meta["locations"] = synth.sites.size();
    meta["days"] = cfg.data.days;
    meta["splits"] = {{"train", counts["train"]}, {"val", counts["val"]}, {"test", counts["test"]}};
    meta["notes"] = notes;
    csv::write_atomic(path_str(dir / "dataset.json"), meta.dump(2) + "\n");
    r.artifacts = {path_str(dir / "dataset.csv"), path_str(dir / "truth.csv"), path_str(dir / "dataset.json")};
    out << "dataset " << r.dataset_hash << ": " << synth.sites.size() << " locations (train " << counts["train"]
        << ", val " << counts["val"] << ", test " << counts["test"] << ")\n";
    for (const auto& n : notes) out << "note: " << n << "\n";
    return r;
}

CommandResult train_impl(const ExperimentConfig& cfg, std::ostream& out) {
    const fs::path dir = resolve_output_dir(cfg);
    const auto sites = load_sites(dir);
    CommandResult r;
    r.dataset_hash = data::dataset_hash(sites);
    auto p = prepare(sites, cfg.window, nullptr);
    for (const auto& w : p->ds.warnings) out << "warning: " << w << "\n";

    nn::NetworkConfig net = cfg.network;
    net.agb_scale = cfg.agb_scale.value_or(mean_target(p->train));
    const std::string planned = cfg.lambda_search ? "hybrid" : model_label(cfg.train.lambda);

    TrainOutcome o;
    try {
        o = train_model(cfg, net, cfg.train, cfg.lambda_search, *p);
    } catch (const train::DivergenceError& e) {
        const fs::path mdir = dir / "models" / planned;
        fs::create_directories(mdir);
        csv::write_atomic(path_str(mdir / "checkpoint_last_good.txt"), ad::checkpoint_text(e.last_good()));
        throw;
    }
    const std::string label = model_label(o.lambda);
    const fs::path mdir = dir / "models" / label;
    fs::create_directories(mdir);

    json model;
    model["label"] = label;
    model["lambda"] = o.lambda;
    model["lambda_selected_by_search"] = cfg.lambda_search;
    model["window"] = cfg.window;
    model["seed"] = cfg.seed;
    model["dataset_hash"] = r.dataset_hash;
    model["feature_names"] = p->ds.feature_names;
    model["network"] = network_json(net);
    model["norm"] = norm_json(*p->ds.norm);

    const bool wall = cfg.train.log_wall_time;
    csv::write_atomic(path_str(mdir / "checkpoint.txt"), ad::checkpoint_text(o.fit.params));
    csv::write_atomic(path_str(mdir / "model.json"), model.dump(2) + "\n");
    csv::write_atomic(path_str(mdir / "train_log.csv"), o.fit.log.csv_text(wall));
    csv::write_atomic(path_str(mdir / "train_summary.json"), o.fit.log.summary_json(wall));
    r.artifacts = {path_str(mdir / "checkpoint.txt"), path_str(mdir / "model.json"), path_str(mdir / "train_log.csv"),
                   path_str(mdir / "train_summary.json")};
    if (!o.grid.empty()) {
        std::ostringstream g;
        g << "lambda,val_rmse_g_m2,error\n";
        for (const auto& c : o.grid)
            g << csv::format_double(c.lambda) << ',' << (c.error.empty() ? csv::format_double(c.val_rmse) : "") << ','
              << c.error << '\n';
        csv::write_atomic(path_str(mdir / "grid.csv"), g.str());
        r.artifacts.push_back(path_str(mdir / "grid.csv"));
    }
    csv::write_atomic(path_str(dir / "models" / "LATEST"), label + "\n");

    out << "trained " << label << " (lambda " << csv::format_double(o.lambda) << ", " << nn::to_string(net.backbone)
        << ", " << o.fit.log.parameter_count << " parameters): best val RMSE "
        << format_fixed(o.fit.log.best_val_rmse, 3) << " g/m2 at iteration " << o.fit.log.best_iter << "\n";
    return r;
}

struct Scored {
    std::vector<double> obs, pred, truth_agb;
    std::vector<LatentState> lat_pred, lat_truth;
};

std::string latest_label(const fs::path& dir) {
    const auto text = csv::read_text(path_str(require(dir / "models" / "LATEST")));
    std::string label = text.substr(0, text.find_first_of("\r\n"));
    return label;
}

CommandResult eval_impl(const ExperimentConfig& cfg, const std::string& model_flag, std::ostream& out) {
    const fs::path dir = resolve_output_dir(cfg);
    const std::string label = model_flag.empty() ? latest_label(dir) : model_flag;
    if (label != "hybrid" && label != "erm") throw ConfigError("--model", "must be hybrid or erm");
    const auto art = load_model(path_str(dir / "models" / label));
    const auto sites = load_sites(dir);
    const auto truth = data::read_truth_csv(path_str(require(dir / "truth.csv")), cfg.data.initial_agb, cfg.process);

    CommandResult r;
    r.dataset_hash = data::dataset_hash(sites);
    eval::EvalReport rep;
    rep.label = art.lambda == 0.0 ? "ERM" : "hybrid";
    rep.lambda = art.lambda;
    if (r.dataset_hash != art.dataset_hash) rep.notes.push_back("dataset changed since the model was trained");

    auto p = prepare(sites, art.window, &art.norm);
    if (p->test.empty()) throw ConfigError("data.split", "no test locations to evaluate");
    std::map<std::string, const Trajectory*> truth_by_id;
    for (const auto& t : truth) truth_by_id[t.location_id] = &t;

    const auto bundle = predict(art.params, art.network, p->test);
    const std::size_t T = static_cast<std::size_t>(bundle.window);

    // Groups: all test samples, then each treatment in enum order.
    std::vector<std::string> group_names{"all"};
    for (auto t : {Treatment::shelter, Treatment::rainfed, Treatment::irrigated})
        for (const auto* s : p->test)
            if (s->treatment == t) {
                group_names.emplace_back(to_string(t));
                break;
            }
    std::map<std::string, Scored> groups;
    std::map<std::string, std::vector<double>> drought_rel;
    std::map<std::string, std::pair<int, int>> drought_sum;
    std::vector<double> own_loc_rmse;
    double resid_ss = 0.0;
    std::size_t resid_n = 0;
    for (std::size_t i = 0; i < p->test.size(); ++i) {
        const auto* s = p->test[i];
        auto it = truth_by_id.find(s->location_id);
        if (it == truth_by_id.end()) throw MissingArtifactError(path_str(dir / "truth.csv") + " (location " + s->location_id + ")");
        const Trajectory& tr = *it->second;
        std::vector<double> fw_pred, fw_truth, loc_obs, loc_pred;
        for (std::size_t t = 0; t < T; ++t) {
            const std::size_t day = static_cast<std::size_t>(s->start_day) + t;
            const std::size_t k = i * T + t;
            for (const std::string& g : {std::string("all"), std::string(to_string(s->treatment))}) {
                auto& sc = groups[g];
                sc.obs.push_back(s->target[t]);
                sc.pred.push_back(bundle.agb_hat[k]);
                sc.truth_agb.push_back(tr.agb[day]);
                sc.lat_pred.push_back(bundle.latent_hat[k]);
                sc.lat_truth.push_back(tr.latent[day]);
            }
            fw_pred.push_back(bundle.latent_hat[k].fw);
            fw_truth.push_back(tr.latent[day].fw);
            loc_obs.push_back(s->target[t]);
            loc_pred.push_back(bundle.agb_hat[k]);
            if (t + 1 < T) {
                const double res = residual(bundle.agb_hat[k + 1] - bundle.agb_hat[k], bundle.latent_hat[k], cfg.process.k);
                resid_ss += res * res;
                ++resid_n;
            }
        }
        own_loc_rmse.push_back(eval::rmse(loc_obs, loc_pred));
        const int dt = eval::drought_days(fw_truth, cfg.drought_threshold);
        const int dp = eval::drought_days(fw_pred, cfg.drought_threshold);
        const double rel = std::abs(dp - dt) / std::max(1.0, static_cast<double>(dt));
        for (const std::string& g : {std::string("all"), std::string(to_string(s->treatment))}) {
            drought_rel[g].push_back(rel);
            drought_sum[g].first += dt;
            drought_sum[g].second += dp;
        }
    }

    const auto add = [&](const std::string& metric, const std::string& var, const std::string& g, const std::string& unit,
                         auto&& fn) {
        try {
            rep.metrics.push_back({metric, var, g, fn(), unit});
        } catch (const Error& e) {
            rep.notes.push_back(metric + " " + var + " " + g + ": " + e.what());
        }
    };
    for (const auto& g : group_names) {
        const auto& sc = groups[g];
        add("rmse", "agb", g, "g/m2", [&] { return eval::rmse(sc.obs, sc.pred); });
        add("mae", "agb", g, "g/m2", [&] { return eval::mae(sc.obs, sc.pred); });
        add("r2", "agb", g, "", [&] { return eval::r2(sc.obs, sc.pred); });
        add("cc", "agb", g, "", [&] { return eval::cc(sc.obs, sc.pred); });
        add("rmspe", "agb", g, "%", [&] { return eval::rmspe(sc.obs, sc.pred).percent; });
        add("rmse", "agb_replay", g, "g/m2", [&] { return eval::rmse(sc.truth_agb, sc.pred); });
        add("cc", "agb_replay", g, "", [&] { return eval::cc(sc.truth_agb, sc.pred); });
        const auto lr = eval::latent_recovery(sc.lat_pred, sc.lat_truth);
        for (const auto& v : lr.variables) {
            rep.metrics.push_back({"rmspe", v.variable, g, v.rmspe.percent, "%"});
            if (v.rmspe.excluded) rep.notes.push_back("rmspe " + v.variable + " " + g + ": " +
                                                      std::to_string(v.rmspe.excluded) + " zero observations excluded");
            if (v.cc)
                rep.metrics.push_back({"cc", v.variable, g, *v.cc, ""});
            else
                rep.notes.push_back("cc " + v.variable + " " + g + ": " + v.cc_error);
        }
        auto rel = drought_rel[g];
        std::sort(rel.begin(), rel.end());
        const std::size_t m = rel.size();
        const double median = m % 2 ? rel[m / 2] : 0.5 * (rel[m / 2 - 1] + rel[m / 2]);
        rep.metrics.push_back({"drought_days_truth", "fw", g, static_cast<double>(drought_sum[g].first), "days"});
        rep.metrics.push_back({"drought_days_pred", "fw", g, static_cast<double>(drought_sum[g].second), "days"});
        rep.metrics.push_back({"drought_days_median_rel_error", "fw", g, median, ""});
    }
    if (resid_n) rep.metrics.push_back({"rmse", "process_residual", "all", std::sqrt(resid_ss / resid_n), "g/m2/day"});

    // Comparison against the other trained variant when both exist.
    const std::string other = label == "hybrid" ? "erm" : "hybrid";
    const fs::path other_dir = dir / "models" / other;
    if (fs::exists(other_dir / "model.json") && fs::exists(other_dir / "checkpoint.txt")) {
        const auto oart = load_model(path_str(other_dir));
        auto op = prepare(sites, oart.window, &oart.norm);
        if (op->test.size() == p->test.size()) {
            const auto ob = predict(oart.params, oart.network, op->test);
            const auto own = rmse_by_treatment(bundle, p->test);
            const auto theirs = rmse_by_treatment(ob, op->test);
            for (const auto& g : group_names) {
                rep.metrics.push_back({"rmse", "agb_" + other, g, theirs.at(g), "g/m2"});
                rep.metrics.push_back({"rmse_ratio", "agb_vs_" + other, g, own.at(g) / theirs.at(g), ""});
            }
            std::vector<double> other_loc_rmse;
            const std::size_t OT = static_cast<std::size_t>(ob.window);
            for (std::size_t i = 0; i < op->test.size(); ++i) {
                std::vector<double> o_obs(op->test[i]->target.begin(), op->test[i]->target.end());
                std::vector<double> o_pred(ob.agb_hat.begin() + static_cast<long>(i * OT),
                                           ob.agb_hat.begin() + static_cast<long>((i + 1) * OT));
                other_loc_rmse.push_back(eval::rmse(o_obs, o_pred));
            }
            try {
                rep.significance.push_back(
                    {label + "_vs_" + other, eval::wilcoxon_signed_rank(own_loc_rmse, other_loc_rmse)});
            } catch (const InsufficientDataError& e) {
                rep.notes.push_back("wilcoxon " + label + "_vs_" + other + ": " + e.what());
            }
        } else {
            rep.notes.push_back(other + " model uses a different sample layout; comparison skipped");
        }
    }

    rep.validate();
    const fs::path edir = dir / "eval" / label;
    fs::create_directories(edir);
    csv::write_atomic(path_str(edir / "report.json"), rep.json_text());
    csv::write_atomic(path_str(edir / "report.csv"), rep.csv_text());
    r.artifacts = {path_str(edir / "report.json"), path_str(edir / "report.csv")};
    const auto& all = groups["all"];
    out << "evaluated " << rep.label << " on " << p->test.size() << " test samples: AGB RMSE "
        << format_fixed(eval::rmse(all.obs, all.pred), 3) << " g/m2\n";
    return r;
}

CommandResult ablate_impl(const ExperimentConfig& cfg, std::ostream& out) {
    const fs::path dir = resolve_output_dir(cfg);
    const auto sites = load_sites(dir);
    CommandResult r;
    r.dataset_hash = data::dataset_hash(sites);
    auto p = prepare(sites, cfg.window, nullptr);
    const bool have_test = !p->test.empty();
    const double scale = cfg.agb_scale.value_or(mean_target(p->train));

    std::ostringstream csvout;
    csvout << "backbone,variant,lambda,parameter_count,wall_ms_to_best,best_iter,rmse_all,rmse_shelter,rmse_rainfed,"
              "rmse_irrigated,status\n";
    for (auto kind : cfg.ablate_backbones) {
        nn::NetworkConfig net = cfg.network;
        net.backbone = kind;
        net.agb_scale = scale;
        for (const std::string variant : {"original", "hybrid"}) {
            train::TrainConfig tc = cfg.train;
            bool search = false;
            if (variant == "original") {
                // The unmodified backbone: no process term at all.
                tc.lambda = 0.0;
                tc.process_term = false;
            } else {
                search = cfg.lambda_search;
            }
            csvout << nn::to_string(kind) << ',' << variant << ',';
            try {
                auto o = train_model(cfg, net, tc, search, *p);
                std::map<std::string, double> rm;
                if (have_test) rm = rmse_by_treatment(predict(o.fit.params, net, p->test), p->test);
                const auto cell = [&](const char* g) {
                    auto it = rm.find(g);
                    return it == rm.end() ? std::string() : csv::format_double(it->second);
                };
                csvout << csv::format_double(o.lambda) << ',' << o.fit.log.parameter_count << ','
                       << format_fixed(o.fit.log.wall_ms_to_best, 1) << ',' << o.fit.log.best_iter << ','
                       << cell("all") << ',' << cell("shelter") << ',' << cell("rainfed") << ',' << cell("irrigated")
                       << ",ok\n";
                out << nn::to_string(kind) << ' ' << variant << ": " << o.fit.log.parameter_count << " parameters, "
                    << format_fixed(o.fit.log.wall_ms_to_best, 0) << " ms to best";
                if (have_test) out << ", test RMSE " << format_fixed(rm.at("all"), 3) << " g/m2";
                out << "\n";
            } catch (const Error& e) {
                std::string msg = e.what();
                std::replace(msg.begin(), msg.end(), ',', ';');
                std::replace(msg.begin(), msg.end(), '\n', ' ');
                csvout << ",,,,,,,,failed: " << msg << '\n';
                out << nn::to_string(kind) << ' ' << variant << ": failed: " << e.what() << "\n";
            }
        }
    }
    fs::create_directories(dir);
    csv::write_atomic(path_str(dir / "ablation.csv"), csvout.str());
    r.artifacts = {path_str(dir / "ablation.csv")};
    return r;
}

CommandResult report_impl(const ExperimentConfig& cfg, std::ostream& out) {
    const fs::path dir = resolve_output_dir(cfg);
    std::ostringstream curves, metrics;
    curves << "model,iter,data_loss,phys_loss,total_loss,lr\n";
    metrics << "model,metric,variable,treatment,value\n";
    bool any = false;
    for (const std::string label : {"hybrid", "erm"}) {
        const fs::path log = dir / "models" / label / "train_log.csv";
        if (fs::exists(log)) {
            any = true;
            const auto t = csv::read_file(path_str(log));
            const std::size_t cols[] = {t.require_column("iter"), t.require_column("data_loss"),
                                        t.require_column("phys_loss"), t.require_column("total_loss"),
                                        t.require_column("lr")};
            for (const auto& row : t.rows) {
                curves << label;
                for (auto c : cols) curves << ',' << row[c];
                curves << '\n';
            }
        }
        const fs::path rep = dir / "eval" / label / "report.csv";
        if (fs::exists(rep)) {
            any = true;
            const auto t = csv::read_file(path_str(rep));
            for (const auto& row : t.rows) {
                metrics << label;
                for (const auto& cell : row) metrics << ',' << cell;
                metrics << '\n';
            }
        }
    }
    const bool have_ablation = fs::exists(dir / "ablation.csv");
    if (!any && !have_ablation) throw MissingArtifactError(path_str(dir / "models"));
    const fs::path rdir = dir / "report";
    fs::create_directories(rdir);
    CommandResult r;
    csv::write_atomic(path_str(rdir / "curves.csv"), curves.str());
    csv::write_atomic(path_str(rdir / "metrics.csv"), metrics.str());
    r.artifacts = {path_str(rdir / "curves.csv"), path_str(rdir / "metrics.csv")};
    if (have_ablation) {
        csv::write_atomic(path_str(rdir / "ablation.csv"), csv::read_text(path_str(dir / "ablation.csv")));
        r.artifacts.push_back(path_str(rdir / "ablation.csv"));
    }
    out << "report written to " << path_str(rdir) << "\n";
    return r;
}

}  // namespace

ModelArtifact load_model(const std::string& dir) {
    const fs::path d(dir);
    const auto model_path = require(d / "model.json");
    const auto ckpt_path = require(d / "checkpoint.txt");
    json j;
    try {
        j = json::parse(csv::read_text(path_str(model_path)));
    } catch (const json::exception& e) {
        throw IoError(path_str(model_path) + ": " + e.what());
    }
    ModelArtifact a;
    try {
        a.label = j.at("label").get<std::string>();
        a.lambda = j.at("lambda").get<double>();
        a.window = j.at("window").get<int>();
        a.dataset_hash = j.at("dataset_hash").get<std::string>();
        a.network = network_from_json(j.at("network"));
        a.norm = norm_from_json(j.at("norm"));
    } catch (const json::exception& e) {
        throw IoError(path_str(model_path) + ": " + e.what());
    }
    a.params = ad::load_checkpoint(path_str(ckpt_path));
    return a;
}

void cmd_simulate(const ExperimentConfig& cfg, std::ostream& out) { simulate_impl(cfg, out); }
void cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out) { gen_data_impl(cfg, out); }
void cmd_train(const ExperimentConfig& cfg, std::ostream& out) { train_impl(cfg, out); }
void cmd_eval(const ExperimentConfig& cfg, const std::string& model, std::ostream& out) { eval_impl(cfg, model, out); }
void cmd_ablate(const ExperimentConfig& cfg, std::ostream& out) { ablate_impl(cfg, out); }
void cmd_report(const ExperimentConfig& cfg, std::ostream& out) { report_impl(cfg, out); }

int run_command(const std::string& command, const CommandOptions& opts, std::ostream& out, std::ostream& err) {
    static const std::set<std::string> known{"simulate", "gen-data", "train", "eval", "ablate", "report"};
    if (!known.count(command)) {
        err << "error: unknown command '" << command << "'\n";
        return kConfigError;
    }
    ExperimentConfig cfg;
    try {
        cfg = load_config(opts.config_path, opts.overrides);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIoError;
    }

    RunManifest m;
    m.command = command;
    m.status = "running";
    m.config_hash = config_hash(cfg);
    m.code_version = code_version();
    m.started_utc = utc_now();
    const std::string dir = resolve_output_dir(cfg);

    const auto fail = [&](int code, const std::string& kind, const std::string& what) {
        err << kind << ": " << what << "\n";
        m.status = "failed";
        m.error = what;
        m.finished_utc = utc_now();
        try {
            m.write(dir);
        } catch (const std::exception&) {
        }
        return code;
    };

    try {
        m.write(dir);
        CommandResult r;
        if (command == "simulate")
            r = simulate_impl(cfg, out);
        else if (command == "gen-data")
            r = gen_data_impl(cfg, out);
        else if (command == "train")
            r = train_impl(cfg, out);
        else if (command == "eval")
            r = eval_impl(cfg, opts.model, out);
        else if (command == "ablate")
            r = ablate_impl(cfg, out);
        else
            r = report_impl(cfg, out);
        m.status = "complete";
        m.artifacts = std::move(r.artifacts);
        m.dataset_hash = r.dataset_hash;
        m.finished_utc = utc_now();
        m.write(dir);
        return kOk;
    } catch (const ConfigError& e) {
        return fail(kConfigError, "config error", e.what());
    } catch (const MissingArtifactError& e) {
        return fail(kMissingArtifact, "missing artifact", e.path());
    } catch (const NumericError& e) {
        return fail(kDivergence, "numeric divergence", e.what());
    } catch (const std::exception& e) {
        return fail(kIoError, "error", e.what());
    }
}

}  // namespace agripinn::cli
