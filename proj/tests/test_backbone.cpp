#include "doctest.h"

#include "agripinn/backbone.hpp"
#include "agripinn/errors.hpp"

#include <cmath>
#include <random>

using namespace agripinn;
using namespace agripinn::nn;

namespace {

Matrix random_input(std::uint64_t seed, Index rows, Index cols) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0, 1);
    Matrix x(rows, cols);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    return x;
}

NetworkConfig small(BackboneKind k) {
    NetworkConfig c;
    c.backbone = k;
    c.hidden = {6, 5};
    c.latent_hidden = {5};
    c.agb_scale = 50.0;
    return c;
}

const BackboneKind kAll[] = {BackboneKind::mlp, BackboneKind::conv1d, BackboneKind::recurrent};

}  // namespace

TEST_CASE("parameter count of the shared-head mlp") {
    NetworkConfig c;
    c.input_features = 8;
    c.hidden = {16};
    c.latent_inputs = LatentInputs::shared;
    auto s = init_network(c, 1);
    CHECK(s.parameter_count() == 229);
}

TEST_CASE("init is deterministic and validated") {
    for (auto k : kAll) {
        auto c = small(k);
        CHECK(init_network(c, 9) == init_network(c, 9));
        CHECK_FALSE(init_network(c, 9) == init_network(c, 10));
        // Weights bounded by the fan-in rule, biases zero.
        auto s = init_network(c, 9);
        CHECK(s.value("backbone.0.b").isZero());
        CHECK(s.value("head.b").isZero());
    }
    NetworkConfig bad;
    bad.hidden.clear();
    try {
        init_network(bad, 1);
        FAIL("expected throw");
    } catch (const ConfigError& e) {
        CHECK(e.path() == "network.hidden");
    }
    bad = NetworkConfig{};
    bad.dropout = 1.0;
    CHECK_THROWS_AS(init_network(bad, 1), ConfigError);
    bad = NetworkConfig{};
    bad.backbone = BackboneKind::conv1d;
    bad.kernel = 4;
    CHECK_THROWS_AS(init_network(bad, 1), ConfigError);
}

TEST_CASE("zero weights give logistic midpoints") {
    for (auto k : kAll) {
        auto c = small(k);
        auto s = init_network(c, 3);
        for (const auto& n : s.names()) s.value(n).setZero();
        auto b = forward(s, c, random_input(1, 2 * 7, 15), 7);
        for (const auto& l : b.latent_hat) {
            CHECK(l.fw == 0.5);
            CHECK(l.rue == doctest::Approx(c.rue_bounds.midpoint()).epsilon(1e-15));
            CHECK(l.lai == doctest::Approx(std::log(2.0)).epsilon(1e-5));
        }
    }
}

TEST_CASE("bundle shapes are identical across backbones") {
    const Index B = 3, T = 9;
    const auto x = random_input(2, B * T, 15);
    for (auto k : kAll) {
        auto c = small(k);
        auto s = init_network(c, 4);
        auto b = forward(s, c, x, T);
        CHECK(b.batch == B);
        CHECK(b.window == T);
        CHECK(b.agb_hat.size() == static_cast<std::size_t>(B * T));
        CHECK(b.latent_hat.size() == static_cast<std::size_t>(B * T));
        CHECK(b.delta_agb_hat.size() == static_cast<std::size_t>(B * (T - 1)));
        CHECK(b.delta_agb_hat[T - 1] == b.agb_hat[T + 1] - b.agb_hat[T]);
        for (double a : b.agb_hat) CHECK(a >= 0.0);
        for (const auto& l : b.latent_hat) CHECK_NOTHROW(l.validate(c.rue_bounds));
        // Infer mode is a pure function of the inputs.
        auto again = forward(s, c, x, T);
        CHECK(again.agb_hat == b.agb_hat);
    }
    auto c = small(BackboneKind::mlp);
    auto s = init_network(c, 4);
    CHECK_THROWS_AS(forward(s, c, random_input(2, 10, 14), 5), ShapeError);
    CHECK_THROWS_AS(forward(s, c, random_input(2, 10, 15), 3), ShapeError);
}

TEST_CASE("per-step backbones do not mix windows") {
    // Changing the second window must leave the first window's outputs untouched.
    const Index T = 6;
    auto x = random_input(5, 2 * T, 15);
    for (auto k : kAll) {
        auto c = small(k);
        auto s = init_network(c, 6);
        auto a = forward(s, c, x, T);
        Matrix y = x;
        y.bottomRows(T).setConstant(3.0);
        auto b = forward(s, c, y, T);
        for (Index t = 0; t < T; ++t) CHECK(a.agb_hat[static_cast<std::size_t>(t)] == b.agb_hat[static_cast<std::size_t>(t)]);
    }
}

TEST_CASE("dropout masks are seeded") {
    auto c = small(BackboneKind::mlp);
    c.dropout = 0.3;
    auto s = init_network(c, 1);
    const auto x = random_input(3, 20, 15);
    std::mt19937_64 r1(42), r2(42), r3(43);
    auto a = forward(s, c, x, 10, Mode::train, &r1);
    auto b = forward(s, c, x, 10, Mode::train, &r2);
    auto d = forward(s, c, x, 10, Mode::train, &r3);
    CHECK(a.agb_hat == b.agb_hat);
    CHECK(a.agb_hat != d.agb_hat);
    auto i1 = forward(s, c, x, 10);
    auto i2 = forward(s, c, x, 10);
    CHECK(i1.agb_hat == i2.agb_hat);
    CHECK(i1.agb_hat != a.agb_hat);

    // Without dropout no mask node is recorded.
    c.dropout = 0.0;
    Tape t;
    forward_graph(t, s, c, x, 10, Mode::train);
    Tape t2;
    std::mt19937_64 r4(1);
    auto cd = c;
    cd.dropout = 0.2;
    forward_graph(t2, s, cd, x, 10, Mode::train, &r4);
    CHECK(t2.size() > t.size());
}

TEST_CASE("bound_latents") {
    RueBounds rb;
    auto inf = bound_latents(1e6, 0, 0, 0, rb, 12, 10);
    CHECK(inf.fw == doctest::Approx(1.0));
    auto mid = bound_latents(0, 0, 0, 0, rb, 12, 10);
    CHECK(mid.rue == rb.midpoint());
    CHECK(mid.lai == doctest::Approx(0.69315).epsilon(1e-5));
    CHECK(mid.par == doctest::Approx(10 * std::log(2.0)));

    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> wide(-60, 60);
    for (int i = 0; i < 10000; ++i) {
        auto s = bound_latents(wide(rng), wide(rng), wide(rng), wide(rng), rb, 12, 10);
        CHECK_NOTHROW(s.validate(rb));
        CHECK(s.lai <= 12.0);
    }
    // Strictly monotone per channel over a moderate range.
    double prev_lai = -1, prev_fw = -1, prev_rue = 0, prev_par = -1;
    for (double r = -20; r <= 20; r += 0.25) {
        auto s = bound_latents(r, r, r, r, rb, 12, 10);
        CHECK(s.lai > prev_lai);
        CHECK(s.fw > prev_fw);
        CHECK(s.rue > prev_rue);
        CHECK(s.par > prev_par);
        prev_lai = s.lai;
        prev_fw = s.fw;
        prev_rue = s.rue;
        prev_par = s.par;
    }
}

TEST_CASE("gradient check through forward and the bounded heads") {
    const Index B = 2, T = 5;
    const auto x = random_input(8, B * T, 15);
    for (auto k : kAll) {
        for (auto li : {LatentInputs::drivers, LatentInputs::shared}) {
            auto c = small(k);
            c.latent_inputs = li;
            auto s = init_network(c, 12);
            auto f = [&](Tape& t, const ParameterStore& p) {
                auto o = forward_graph(t, p, c, x, T, Mode::infer);
                return ad::sum(o.agb) * 0.01 + ad::sum(o.fw) + ad::sum(o.lai) + ad::sum(o.rue) + ad::sum(o.par);
            };
            auto r = ad::grad_check(f, s, 1e-5);
            INFO(to_string(k), " worst ", r.worst_parameter, " ad=", r.analytic, " fd=", r.numeric);
            CHECK(r.max_rel_error < 1e-4);
        }
    }
}
