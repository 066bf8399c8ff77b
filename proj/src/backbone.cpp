#include "agripinn/backbone.hpp"

#include "agripinn/errors.hpp"
#include "agripinn/rng.hpp"

#include <cmath>

namespace agripinn::nn {

std::string_view to_string(BackboneKind k) noexcept {
    switch (k) {
        case BackboneKind::mlp: return "mlp";
        case BackboneKind::conv1d: return "conv1d";
        case BackboneKind::recurrent: return "recurrent";
    }
    return "mlp";
}

BackboneKind parse_backbone(std::string_view s) {
    if (s == "mlp") return BackboneKind::mlp;
    if (s == "conv1d") return BackboneKind::conv1d;
    if (s == "recurrent") return BackboneKind::recurrent;
    throw ConfigError("network.backbone", "unknown kind '" + std::string(s) + "' (mlp, conv1d, recurrent)");
}

std::string_view to_string(Activation a) noexcept { return a == Activation::relu ? "relu" : "tanh"; }

Activation parse_activation(std::string_view s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw ConfigError("network.activation", "unknown activation '" + std::string(s) + "' (tanh, relu)");
}

std::string_view to_string(LatentInputs l) noexcept { return l == LatentInputs::shared ? "shared" : "drivers"; }

LatentInputs parse_latent_inputs(std::string_view s) {
    if (s == "drivers") return LatentInputs::drivers;
    if (s == "shared") return LatentInputs::shared;
    throw ConfigError("network.latent_inputs", "unknown mode '" + std::string(s) + "' (drivers, shared)");
}

void NetworkConfig::validate() const {
    if (hidden.empty()) throw ConfigError("network.hidden", "needs at least one hidden layer");
    for (int h : hidden) {
        if (h < 1) throw ConfigError("network.hidden", "widths must be >= 1");
    }
    if (backbone == BackboneKind::conv1d && (kernel < 1 || kernel % 2 == 0)) {
        throw ConfigError("network.kernel", "must be odd and >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("network.dropout", "must lie in [0, 1)");
    if (input_features < 1) throw ConfigError("network.input_features", "must be >= 1");
    if (latent_inputs == LatentInputs::drivers) {
        if (latent_hidden.empty()) throw ConfigError("network.latent_hidden", "needs at least one hidden layer");
        for (int h : latent_hidden) {
            if (h < 1) throw ConfigError("network.latent_hidden", "widths must be >= 1");
        }
        if (driver_features.empty()) throw ConfigError("network.driver_features", "must not be empty");
        for (int j : driver_features) {
            if (j < 0 || j >= input_features) throw ConfigError("network.driver_features", "index out of range");
        }
    }
    if (!(rue_bounds.lo > 0.0 && rue_bounds.lo <= rue_bounds.hi)) {
        throw ConfigError("process.rue_bounds", "need 0 < lo <= hi");
    }
    if (!(lai_cap > 0.0)) throw ConfigError("network.lai_cap", "must be > 0");
    if (!(par_scale > 0.0)) throw ConfigError("network.par_scale", "must be > 0");
    if (!(agb_scale > 0.0)) throw ConfigError("network.agb_scale", "must be > 0");
}

namespace {

std::string layer_name(const char* prefix, std::size_t i, const char* what) {
    return std::string(prefix) + "." + std::to_string(i) + "." + what;
}

// Uniform with variance 1 / fan_in.
Matrix fan_in_uniform(Rng& rng, Index rows, Index cols, Index fan_in) {
    const double a = std::sqrt(3.0 / static_cast<double>(fan_in));
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
    return m;
}

Var activate(Var v, Activation a) { return a == Activation::relu ? ad::relu(v) : ad::tanh(v); }

Var maybe_dropout(Var v, const NetworkConfig& cfg, Mode mode, std::mt19937_64* rng) {
    if (mode != Mode::train || cfg.dropout == 0.0) return v;
    if (!rng) throw ArgumentError("forward: train mode with dropout needs a random generator");
    return ad::dropout(v, cfg.dropout, *rng);
}

Var dense_stack(Tape& tape, const ParameterStore& theta, const char* prefix, std::size_t layers, Var h,
                const NetworkConfig& cfg, Mode mode, std::mt19937_64* rng) {
    for (std::size_t i = 0; i < layers; ++i) {
        h = matmul(h, tape.parameter(theta, layer_name(prefix, i, "w"))) + tape.parameter(theta, layer_name(prefix, i, "b"));
        h = maybe_dropout(activate(h, cfg.activation), cfg, mode, rng);
    }
    return h;
}

Var recurrent_stack(Tape& tape, const ParameterStore& theta, Var h, Index window, const NetworkConfig& cfg, Mode mode,
                    std::mt19937_64* rng) {
    const Index batch = h.rows() / window;
    std::vector<Index> to_batch_major(static_cast<std::size_t>(batch * window));
    for (Index b = 0; b < batch; ++b) {
        for (Index t = 0; t < window; ++t) to_batch_major[static_cast<std::size_t>(b * window + t)] = t * batch + b;
    }
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
        Var pre = matmul(h, tape.parameter(theta, layer_name("backbone", i, "wx"))) +
                  tape.parameter(theta, layer_name("backbone", i, "b"));
        Var wh = tape.parameter(theta, layer_name("backbone", i, "wh"));
        std::vector<Var> steps;
        steps.reserve(static_cast<std::size_t>(window));
        for (Index t = 0; t < window; ++t) {
            std::vector<Index> rows(static_cast<std::size_t>(batch));
            for (Index b = 0; b < batch; ++b) rows[static_cast<std::size_t>(b)] = b * window + t;
            Var z = take_rows(pre, std::move(rows));
            if (t > 0) z = z + matmul(steps.back(), wh);
            steps.push_back(ad::tanh(z));
        }
        h = take_rows(concat_rows(steps), to_batch_major);
        h = maybe_dropout(h, cfg, mode, rng);
    }
    return h;
}

}  // namespace

ParameterStore init_network(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ParameterStore s;
    Index in = cfg.input_features;
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
        const Index out = cfg.hidden[i];
        switch (cfg.backbone) {
            case BackboneKind::mlp:
                s.add(layer_name("backbone", i, "w"), fan_in_uniform(rng, in, out, in));
                break;
            case BackboneKind::conv1d:
                s.add(layer_name("backbone", i, "w"), fan_in_uniform(rng, cfg.kernel * in, out, cfg.kernel * in));
                break;
            case BackboneKind::recurrent:
                s.add(layer_name("backbone", i, "wx"), fan_in_uniform(rng, in, out, in));
                s.add(layer_name("backbone", i, "wh"), fan_in_uniform(rng, out, out, out));
                break;
        }
        s.add(layer_name("backbone", i, "b"), Matrix::Zero(1, out));
        in = out;
    }
    const Index head_out = cfg.latent_inputs == LatentInputs::shared ? 5 : 1;
    s.add("head.w", fan_in_uniform(rng, in, head_out, in));
    s.add("head.b", Matrix::Zero(1, head_out));
    if (cfg.latent_inputs == LatentInputs::drivers) {
        Index lin = static_cast<Index>(cfg.driver_features.size());
        for (std::size_t i = 0; i < cfg.latent_hidden.size(); ++i) {
            const Index out = cfg.latent_hidden[i];
            s.add(layer_name("latent", i, "w"), fan_in_uniform(rng, lin, out, lin));
            s.add(layer_name("latent", i, "b"), Matrix::Zero(1, out));
            lin = out;
        }
        s.add("latent.head.w", fan_in_uniform(rng, lin, 4, lin));
        s.add("latent.head.b", Matrix::Zero(1, 4));
    }
    return s;
}

GraphOutputs forward_graph(Tape& tape, const ParameterStore& theta, const NetworkConfig& cfg, const Matrix& x,
                           Index window, Mode mode, std::mt19937_64* rng) {
    if (x.cols() != cfg.input_features) {
        throw ShapeError("forward: input has " + std::to_string(x.cols()) + " features, layout expects " +
                         std::to_string(cfg.input_features));
    }
    if (window < 1 || x.rows() % window != 0) {
        throw ShapeError("forward: " + std::to_string(x.rows()) + " rows are not whole windows of " +
                         std::to_string(window));
    }
    Var input = tape.constant(x);
    Var h = input;
    switch (cfg.backbone) {
        case BackboneKind::mlp:
            h = dense_stack(tape, theta, "backbone", cfg.hidden.size(), h, cfg, mode, rng);
            break;
        case BackboneKind::conv1d:
            for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
                h = conv1d(h, tape.parameter(theta, layer_name("backbone", i, "w")), window, cfg.kernel) +
                    tape.parameter(theta, layer_name("backbone", i, "b"));
                h = maybe_dropout(activate(h, cfg.activation), cfg, mode, rng);
            }
            break;
        case BackboneKind::recurrent:
            h = recurrent_stack(tape, theta, h, window, cfg, mode, rng);
            break;
    }
    Var head = matmul(h, tape.parameter(theta, "head.w")) + tape.parameter(theta, "head.b");

    Var raw_agb, raw_lat;
    if (cfg.latent_inputs == LatentInputs::shared) {
        raw_agb = slice_cols(head, 0, 1);
        raw_lat = slice_cols(head, 1, 4);
    } else {
        raw_agb = head;
        Matrix drivers(x.rows(), static_cast<Index>(cfg.driver_features.size()));
        for (std::size_t j = 0; j < cfg.driver_features.size(); ++j) {
            drivers.col(static_cast<Index>(j)) = x.col(cfg.driver_features[j]);
        }
        Var z = dense_stack(tape, theta, "latent", cfg.latent_hidden.size(), tape.constant(std::move(drivers)), cfg,
                            mode, rng);
        raw_lat = matmul(z, tape.parameter(theta, "latent.head.w")) + tape.parameter(theta, "latent.head.b");
    }

    GraphOutputs out;
    out.agb = cfg.agb_scale * ad::softplus(raw_agb);
    out.fw = ad::sigmoid(slice_cols(raw_lat, 0, 1));
    out.lai = ad::soft_cap(ad::softplus(slice_cols(raw_lat, 1, 1)), cfg.lai_cap);
    out.rue = cfg.rue_bounds.lo + (cfg.rue_bounds.hi - cfg.rue_bounds.lo) * ad::sigmoid(slice_cols(raw_lat, 2, 1));
    out.par = cfg.par_scale * ad::softplus(slice_cols(raw_lat, 3, 1));
    return out;
}

PredictionBundle bundle_from_graph(const GraphOutputs& out, Index window) {
    PredictionBundle b;
    const Index n = out.agb.rows();
    b.window = window;
    b.batch = n / window;
    b.agb_hat.resize(static_cast<std::size_t>(n));
    b.latent_hat.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        b.agb_hat[static_cast<std::size_t>(i)] = out.agb.value()(i, 0);
        b.latent_hat[static_cast<std::size_t>(i)] = {out.lai.value()(i, 0), out.par.value()(i, 0),
                                                     out.rue.value()(i, 0), out.fw.value()(i, 0)};
    }
    b.delta_agb_hat.reserve(static_cast<std::size_t>(b.batch * (window - 1)));
    for (Index s = 0; s < b.batch; ++s) {
        for (Index t = 0; t + 1 < window; ++t) {
            const auto i = static_cast<std::size_t>(s * window + t);
            b.delta_agb_hat.push_back(b.agb_hat[i + 1] - b.agb_hat[i]);
        }
    }
    return b;
}

PredictionBundle forward(const ParameterStore& theta, const NetworkConfig& cfg, const Matrix& x, Index window, Mode mode,
                         std::mt19937_64* rng) {
    Tape tape(false);
    return bundle_from_graph(forward_graph(tape, theta, cfg, x, window, mode, rng), window);
}

LatentState bound_latents(double raw_fw, double raw_lai, double raw_rue, double raw_par, const RueBounds& bounds,
                          double lai_cap, double par_scale) {
    LatentState s;
    s.fw = ad::sigmoid_value(raw_fw);
    s.lai = ad::soft_cap_value(ad::softplus_value(raw_lai), lai_cap);
    s.rue = bounds.lo + (bounds.hi - bounds.lo) * ad::sigmoid_value(raw_rue);
    s.par = par_scale * ad::softplus_value(raw_par);
    return s;
}

}  // namespace agripinn::nn
