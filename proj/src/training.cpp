#include "agripinn/training.hpp"

#include "agripinn/csv.hpp"
#include "agripinn/rng.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace agripinn::train {

std::string_view to_string(Optimizer o) noexcept { return o == Optimizer::sgd_momentum ? "sgd_momentum" : "adam"; }

Optimizer parse_optimizer(std::string_view s) {
    if (s == "adam") return Optimizer::adam;
    if (s == "sgd_momentum") return Optimizer::sgd_momentum;
    throw ConfigError("train.optimizer", "unknown optimizer '" + std::string(s) + "' (adam, sgd_momentum)");
}

std::string_view to_string(Schedule s) noexcept { return s == Schedule::cosine ? "cosine" : "constant"; }

Schedule parse_schedule(std::string_view s) {
    if (s == "constant") return Schedule::constant;
    if (s == "cosine") return Schedule::cosine;
    throw ConfigError("train.schedule", "unknown schedule '" + std::string(s) + "' (constant, cosine)");
}

void TrainConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("train.lambda", "must be finite and >= 0");
    if (!(lr > 0.0)) throw ConfigError("train.lr", "must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum", "must lie in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1", "must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2", "must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps", "must be > 0");
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
    if (max_iters < 1) throw ConfigError("train.max_iters", "must be >= 1");
    if (grad_clip && !(*grad_clip > 0.0)) throw ConfigError("train.grad_clip", "must be > 0");
    if (eval_every < 1) throw ConfigError("train.eval_every", "must be >= 1");
    if (patience < 1) throw ConfigError("train.patience", "must be >= 1");
    if (!(k > 0.0)) throw ConfigError("process.k", "must be > 0");
    if (!process_term && lambda != 0.0) {
        throw ConfigError("train.process_term", "removing the process term requires lambda = 0");
    }
}

// ---------------------------------------------------------------------------
// Log serialization

std::string TrainLog::csv_text(bool with_wall_time) const {
    using csv::format_double;
    std::ostringstream out;
    out << "iter,data_loss,phys_loss,total_loss,lr,wall_ms\n";
    for (const auto& r : records) {
        out << r.iter << ',' << format_double(r.data_loss) << ',' << format_double(r.phys_loss) << ','
            << format_double(r.total_loss) << ',' << format_double(r.lr) << ','
            << (with_wall_time ? format_double(std::round(r.wall_ms * 1000.0) / 1000.0) : std::string("0")) << '\n';
    }
    return out.str();
}

std::string TrainLog::summary_json(bool with_wall_time) const {
    nlohmann::ordered_json j;
    j["lambda"] = lambda;
    j["process_term"] = process_term;
    j["iterations"] = records.size();
    j["best_iter"] = best_iter;
    j["best_val_rmse_g_m2"] = best_val_rmse;
    j["early_stopped"] = early_stopped;
    j["parameter_count"] = parameter_count;
    if (!records.empty()) {
        j["final_data_loss"] = records.back().data_loss;
        j["final_phys_loss"] = records.back().phys_loss;
        j["initial_phys_loss"] = records.front().phys_loss;
    }
    if (with_wall_time) {
        j["wall_ms_to_best"] = wall_ms_to_best;
        j["wall_ms_total"] = wall_ms_total;
    }
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Losses

double data_loss(const std::vector<double>& pred, const std::vector<double>& obs) {
    if (pred.size() != obs.size()) {
        throw ArgumentError("data_loss: " + std::to_string(pred.size()) + " predictions vs " +
                            std::to_string(obs.size()) + " observations");
    }
    if (pred.empty()) throw ArgumentError("data_loss: empty series");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - obs[i]) * (pred[i] - obs[i]);
    return s / static_cast<double>(pred.size());
}

double process_loss(const nn::PredictionBundle& b, double k) {
    if (b.window < 2) throw ArgumentError("process_loss: windows need at least 2 steps");
    double s = 0.0;
    std::size_t n = 0;
    for (ad::Index w = 0; w < b.batch; ++w) {
        for (ad::Index t = 0; t + 1 < b.window; ++t) {
            const auto i = static_cast<std::size_t>(w * b.window + t);
            const auto d = static_cast<std::size_t>(w * (b.window - 1) + t);
            const double r = residual(b.delta_agb_hat[d], b.latent_hat[i], k);
            s += r * r;
            ++n;
        }
    }
    return s / static_cast<double>(n);
}

double total_loss(double data, double phys, double lambda) {
    if (!std::isfinite(data) || !std::isfinite(phys) || !std::isfinite(lambda)) {
        throw NumericError("total_loss: non-finite input (data " + csv::format_double(data) + ", phys " +
                           csv::format_double(phys) + ", lambda " + csv::format_double(lambda) + ")");
    }
    return data + lambda * phys;
}

Var data_loss(Var pred, const Matrix& obs) {
    if (pred.rows() != obs.rows() || pred.cols() != obs.cols()) {
        throw ArgumentError("data_loss: prediction shape " + ad::shape_string(pred.value()) + " vs observation shape " +
                            ad::shape_string(obs));
    }
    return ad::mean(ad::square(pred - pred.tape()->constant(obs)));
}

Var process_residuals(const nn::GraphOutputs& out, ad::Index window, double k) {
    if (window < 2) throw ArgumentError("process_loss: windows need at least 2 steps");
    const ad::Index batch = out.agb.rows() / window;
    std::vector<ad::Index> cur, next;
    cur.reserve(static_cast<std::size_t>(batch * (window - 1)));
    next.reserve(cur.capacity());
    for (ad::Index b = 0; b < batch; ++b) {
        for (ad::Index t = 0; t + 1 < window; ++t) {
            cur.push_back(b * window + t);
            next.push_back(b * window + t + 1);
        }
    }
    Var phi = out.rue * out.par * (1.0 - ad::exp(-k * out.lai)) * out.fw;
    return (ad::take_rows(out.agb, next) - ad::take_rows(out.agb, cur)) - ad::take_rows(phi, cur);
}

Var process_loss(const nn::GraphOutputs& out, ad::Index window, double k) {
    return ad::mean(ad::square(process_residuals(out, window, k)));
}

// ---------------------------------------------------------------------------
// Optimizers

void sgd_momentum_step(ParameterStore& theta, const GradientMap& grads, double lr, double momentum) {
    for (const auto& name : theta.names()) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        Matrix& v = theta.slot(name, "velocity");
        v = momentum * v + it->second;
        theta.value(name) -= lr * v;
    }
    ++theta.step;
}

void adam_step(ParameterStore& theta, const GradientMap& grads, double lr, double beta1, double beta2, double eps) {
    ++theta.step;
    const double t = static_cast<double>(theta.step);
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    for (const auto& name : theta.names()) {
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const Matrix& g = it->second;
        Matrix& m = theta.slot(name, "m");
        Matrix& v = theta.slot(name, "v");
        m = beta1 * m + (1.0 - beta1) * g;
        v.array() = beta2 * v.array() + (1.0 - beta2) * g.array().square();
        theta.value(name).array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
}

double learning_rate(const TrainConfig& cfg, int iter) {
    if (cfg.schedule == Schedule::constant) return cfg.lr;
    return 0.5 * cfg.lr * (1.0 + std::cos(M_PI * static_cast<double>(iter) / static_cast<double>(cfg.max_iters)));
}

double clip_gradients(GradientMap& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [_, g] : grads) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& [_, g] : grads) g *= s;
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Training

BatchLoss batch_loss(ad::Tape& tape, const ParameterStore& theta, const nn::NetworkConfig& net, const Matrix& x,
                     const Matrix& y, ad::Index window, const TrainConfig& cfg, std::mt19937_64* dropout_rng,
                     const Matrix* colloc_x) {
    BatchLoss out;
    auto pred = nn::forward_graph(tape, theta, net, x, window, nn::Mode::train, dropout_rng);
    out.data = data_loss(pred.agb, y);
    if (cfg.process_term) {
        nn::GraphOutputs src = colloc_x ? nn::forward_graph(tape, theta, net, *colloc_x, window, nn::Mode::train, dropout_rng)
                                        : pred;
        out.phys = process_loss(src, window, cfg.k);
        out.total = out.data + cfg.lambda * out.phys;
        out.phys_value = out.phys.scalar();
    } else {
        // Objective is the data term alone; the residual is evaluated off-tape for the log
        // with the same operations (and the same dropout draws) as the full objective.
        ad::Tape side(false);
        nn::GraphOutputs src;
        if (colloc_x) {
            src = nn::forward_graph(side, theta, net, *colloc_x, window, nn::Mode::train, dropout_rng);
        } else {
            src = {side.constant(pred.agb.value()), side.constant(pred.fw.value()), side.constant(pred.lai.value()),
                   side.constant(pred.rue.value()), side.constant(pred.par.value())};
        }
        out.phys_value = process_loss(src, window, cfg.k).scalar();
        out.total = out.data;
    }
    return out;
}

double evaluate_rmse(const ParameterStore& theta, const nn::NetworkConfig& net,
                     const std::vector<const data::Sample*>& samples) {
    const Matrix x = data::stack_features(samples);
    const Matrix y = data::stack_targets(samples);
    const auto b = nn::forward(theta, net, x, static_cast<ad::Index>(samples.front()->target.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < b.agb_hat.size(); ++i) {
        const double d = b.agb_hat[i] - y(static_cast<ad::Index>(i), 0);
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(b.agb_hat.size()));
}

FitResult fit(ParameterStore theta, const nn::NetworkConfig& net, const std::vector<const data::Sample*>& train,
              const std::vector<const data::Sample*>& val, const TrainConfig& cfg,
              const std::vector<const data::Sample*>* collocation) {
    cfg.validate();
    net.validate();
    if (train.empty()) throw InsufficientDataError("fit: empty training set");
    if (val.empty()) throw InsufficientDataError("fit: empty validation set");
    const auto window = static_cast<ad::Index>(train.front()->target.size());
    const bool use_colloc = cfg.full_collocation && collocation && !collocation->empty();

    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    auto elapsed_ms = [&t0] { return std::chrono::duration<double, std::milli>(clock::now() - t0).count(); };

    Rng batch_rng(derive_seed(cfg.seed, 101));
    std::mt19937_64 dropout_rng(derive_seed(cfg.seed, 102));

    FitResult res;
    res.log.lambda = cfg.lambda;
    res.log.process_term = cfg.process_term;
    res.log.parameter_count = theta.parameter_count();
    res.params = theta;
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;

    std::vector<const data::Sample*> batch(static_cast<std::size_t>(cfg.batch_size));
    std::vector<const data::Sample*> colloc_batch(use_colloc ? batch.size() : 0);
    for (int it = 0; it < cfg.max_iters; ++it) {
        for (auto& s : batch) s = train[batch_rng.index(train.size())];
        for (auto& s : colloc_batch) s = (*collocation)[batch_rng.index(collocation->size())];
        const Matrix x = data::stack_features(batch);
        const Matrix y = data::stack_targets(batch);
        const Matrix cx = use_colloc ? data::stack_features(colloc_batch) : Matrix();

        ad::Tape tape;
        auto loss = batch_loss(tape, theta, net, x, y, window, cfg, &dropout_rng, use_colloc ? &cx : nullptr);
        const double dl = loss.data.scalar();
        const double total = loss.total.scalar();
        if (!std::isfinite(total)) {
            throw DivergenceError(it + 1, "non-finite loss (data " + csv::format_double(dl) + ", phys " +
                                              csv::format_double(loss.phys_value) + ")",
                                  theta);
        }
        tape.backward(loss.total);
        auto grads = tape.gradients();
        for (const auto& [name, g] : grads) {
            if (!g.allFinite()) throw DivergenceError(it + 1, "non-finite gradient for '" + name + "'", theta);
        }
        if (cfg.grad_clip) clip_gradients(grads, *cfg.grad_clip);
        const double lr = learning_rate(cfg, it);
        if (cfg.optimizer == Optimizer::adam) {
            adam_step(theta, grads, lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
        } else {
            sgd_momentum_step(theta, grads, lr, cfg.momentum);
        }
        res.log.records.push_back({it + 1, dl, loss.phys_value, total, lr, elapsed_ms()});

        if ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.max_iters) {
            const double v = evaluate_rmse(theta, net, val);
            if (!std::isfinite(v)) throw DivergenceError(it + 1, "non-finite validation RMSE", res.params);
            if (v < best) {
                best = v;
                res.params = theta;
                res.log.best_iter = it + 1;
                res.log.best_val_rmse = v;
                res.log.wall_ms_to_best = elapsed_ms();
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                res.log.early_stopped = true;
                break;
            }
        }
    }
    res.log.wall_ms_total = elapsed_ms();
    return res;
}

std::vector<double> default_lambda_grid() {
    std::vector<double> g;
    for (int i = 1; i <= 20; ++i) g.push_back(0.05 * i);
    return g;
}

GridResult grid_search_lambda(const std::vector<double>& candidates, const nn::NetworkConfig& net,
                              std::uint64_t init_seed, const std::vector<const data::Sample*>& train,
                              const std::vector<const data::Sample*>& val, const TrainConfig& cfg,
                              const std::vector<const data::Sample*>* collocation, bool keep_results) {
    if (candidates.empty()) throw ArgumentError("grid_search_lambda: no candidates");
    for (double l : candidates) {
        if (!(l >= 0.0)) throw ArgumentError("grid_search_lambda: candidates must be >= 0");
    }
    GridResult out;
    const ParameterStore theta0 = nn::init_network(net, init_seed);
    bool any = false;
    for (double l : candidates) {
        GridCandidate c;
        c.lambda = l;
        TrainConfig tc = cfg;
        tc.lambda = l;
        tc.process_term = true;
        try {
            auto r = fit(theta0, net, train, val, tc, collocation);
            c.val_rmse = r.log.best_val_rmse;
            if (keep_results) c.result = std::move(r);
        } catch (const Error& e) {
            c.error = e.what();
        }
        out.candidates.push_back(std::move(c));
    }
    // Lowest validation RMSE; on an exact tie the larger lambda wins (stronger process prior).
    for (std::size_t i = 0; i < out.candidates.size(); ++i) {
        const auto& c = out.candidates[i];
        if (!c.error.empty()) continue;
        const auto& b = out.candidates[out.best_index];
        if (!any || c.val_rmse < b.val_rmse || (c.val_rmse == b.val_rmse && c.lambda > b.lambda)) {
            out.best_index = i;
            any = true;
        }
    }
    if (!any) {
        std::string msg = "every lambda candidate failed:";
        for (const auto& c : out.candidates) msg += " [lambda " + csv::format_double(c.lambda) + ": " + c.error + "]";
        throw GridSearchError(msg);
    }
    out.best_lambda = out.candidates[out.best_index].lambda;
    return out;
}

}  // namespace agripinn::train
