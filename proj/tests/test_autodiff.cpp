#include "doctest.h"

#include "agripinn/autodiff.hpp"
#include "agripinn/errors.hpp"
#include "agripinn/process.hpp"

#include <cmath>
#include <filesystem>
#include <random>

using namespace agripinn;
using namespace agripinn::ad;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Index r, Index c, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

// Reduce an arbitrary output to a scalar with fixed random weights so every
// output element contributes a distinct adjoint.
Var contract(Tape& t, Var y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return sum(y * t.constant(random_matrix(rng, y.rows(), y.cols())));
}

void check_graph(const ScalarGraph& f, const ParameterStore& s, double tol = 1e-5) {
    auto res = grad_check(f, s, 1e-5);
    INFO("worst ", res.worst_parameter, "[", res.worst_index, "] ad=", res.analytic, " fd=", res.numeric);
    CHECK(res.max_rel_error < tol);
}

}  // namespace

TEST_CASE("primitive values") {
    Tape t;
    CHECK(exp(t.constant(0.0)).scalar() == 1.0);
    auto a = t.leaf(Matrix::Constant(1, 1, 3.0));
    auto b = t.leaf(Matrix::Constant(1, 1, 4.0));
    auto p = a * b;
    CHECK(p.scalar() == 12.0);
    t.backward(p);
    CHECK(a.adjoint()(0, 0) == 4.0);
    CHECK(b.adjoint()(0, 0) == 3.0);

    auto m = matmul(t.constant(Matrix::Ones(2, 3)), t.constant(Matrix::Ones(3, 1)));
    CHECK(m.rows() == 2);
    CHECK(m.value()(0, 0) == 3.0);
    CHECK(m.value()(1, 0) == 3.0);
}

TEST_CASE("shape errors name both shapes") {
    Tape t;
    auto a = t.constant(Matrix::Ones(2, 3));
    auto b = t.constant(Matrix::Ones(4, 3));
    try {
        (void)add(a, b);
        FAIL("expected throw");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("4x3") != std::string::npos);
    }
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
    CHECK_THROWS_AS(t.backward(a), ArgumentError);
}

TEST_CASE("backward basics") {
    ParameterStore s;
    s.add("p", Matrix::Constant(2, 2, 1.5));
    s.add("q", Matrix::Constant(1, 1, 3.0));
    Tape t;
    auto root = sum(t.parameter(s, "p"));
    t.backward(root);
    auto g = t.gradients();
    CHECK(g.at("p") == Matrix::Ones(2, 2));

    Tape t2;
    auto q = t2.parameter(s, "q");
    auto r = square(q);
    t2.backward(r);
    CHECK(t2.gradients().at("q")(0, 0) == 6.0);
    // Repeated calls accumulate.
    t2.backward(r);
    CHECK(t2.gradients().at("q")(0, 0) == 12.0);
    t2.zero_adjoints();
    CHECK(t2.gradients().at("q")(0, 0) == 0.0);
}

TEST_CASE("every primitive passes a finite-difference check") {
    std::mt19937_64 rng(1234);
    ParameterStore s;
    s.add("a", random_matrix(rng, 3, 4));
    s.add("b", random_matrix(rng, 3, 4));
    s.add("row", random_matrix(rng, 1, 4));
    s.add("col", random_matrix(rng, 3, 1));
    s.add("one", random_matrix(rng, 1, 1));
    s.add("pos", random_matrix(rng, 3, 4, 0.5, 2.0));
    s.add("w", random_matrix(rng, 4, 2));
    s.add("cw", random_matrix(rng, 3 * 4, 2));  // kernel 3, 4 input channels

    std::vector<std::pair<std::string, std::function<Var(Tape&, const ParameterStore&)>>> cases = {
        {"add", [](Tape& t, const ParameterStore& p) { return t.parameter(p, "a") + t.parameter(p, "b"); }},
        {"add_row", [](Tape& t, const ParameterStore& p) { return t.parameter(p, "a") + t.parameter(p, "row"); }},
        {"sub_col", [](Tape& t, const ParameterStore& p) { return t.parameter(p, "a") - t.parameter(p, "col"); }},
        {"mul_scalar", [](Tape& t, const ParameterStore& p) { return t.parameter(p, "one") * t.parameter(p, "a"); }},
        {"mul", [](Tape& t, const ParameterStore& p) { return t.parameter(p, "a") * t.parameter(p, "b"); }},
        {"div", [](Tape& t, const ParameterStore& p) { return t.parameter(p, "a") / t.parameter(p, "pos"); }},
        {"div_row", [](Tape& t, const ParameterStore& p) { return t.parameter(p, "pos") / (t.parameter(p, "row") + 3.0); }},
        {"neg", [](Tape& t, const ParameterStore& p) { return -t.parameter(p, "a"); }},
        {"scale", [](Tape& t, const ParameterStore& p) { return 2.5 * t.parameter(p, "a") - 1.0; }},
        {"exp", [](Tape& t, const ParameterStore& p) { return exp(t.parameter(p, "a")); }},
        {"log", [](Tape& t, const ParameterStore& p) { return log(t.parameter(p, "pos")); }},
        {"tanh", [](Tape& t, const ParameterStore& p) { return tanh(t.parameter(p, "a")); }},
        {"sigmoid", [](Tape& t, const ParameterStore& p) { return sigmoid(3.0 * t.parameter(p, "a")); }},
        {"softplus", [](Tape& t, const ParameterStore& p) { return softplus(3.0 * t.parameter(p, "a")); }},
        {"relu", [](Tape& t, const ParameterStore& p) { return relu(t.parameter(p, "a")); }},
        {"square", [](Tape& t, const ParameterStore& p) { return square(t.parameter(p, "a")); }},
        {"soft_cap", [](Tape& t, const ParameterStore& p) { return soft_cap(5.0 * t.parameter(p, "pos"), 4.0); }},
        {"matmul", [](Tape& t, const ParameterStore& p) { return matmul(t.parameter(p, "a"), t.parameter(p, "w")); }},
        {"sum", [](Tape& t, const ParameterStore& p) { return sum(t.parameter(p, "a")) * t.parameter(p, "one"); }},
        {"mean", [](Tape& t, const ParameterStore& p) { return mean(square(t.parameter(p, "a"))); }},
        {"broadcast", [](Tape& t, const ParameterStore& p) { return broadcast(t.parameter(p, "col"), 3, 5); }},
        {"slice", [](Tape& t, const ParameterStore& p) { return slice_cols(t.parameter(p, "a"), 1, 2); }},
        {"concat_cols", [](Tape& t, const ParameterStore& p) {
             return concat_cols({t.parameter(p, "a"), t.parameter(p, "col"), t.parameter(p, "a")});
         }},
        {"concat_rows", [](Tape& t, const ParameterStore& p) {
             return concat_rows({t.parameter(p, "a"), t.parameter(p, "row")});
         }},
        {"take_rows", [](Tape& t, const ParameterStore& p) { return take_rows(t.parameter(p, "a"), {2, 0, 2, 1}); }},
        {"conv1d", [](Tape& t, const ParameterStore& p) {
             // 3 rows of "a" treated as one sequence of 3 steps.
             return conv1d(t.parameter(p, "a"), t.parameter(p, "cw"), 3, 3);
         }},
    };
    for (std::size_t i = 0; i < cases.size(); ++i) {
        SUBCASE(cases[i].first.c_str()) {
            auto build = cases[i].second;
            check_graph([&, i](Tape& t, const ParameterStore& p) { return contract(t, build(t, p), 99 + i); }, s);
        }
    }
}

TEST_CASE("conv1d matches a direct loop") {
    std::mt19937_64 rng(5);
    const Index B = 2, T = 6, C = 3, K = 5, O = 2;
    Matrix x = random_matrix(rng, B * T, C);
    Matrix w = random_matrix(rng, K * C, O);
    Tape t;
    auto y = conv1d(t.constant(x), t.constant(w), T, K);
    for (Index b = 0; b < B; ++b)
        for (Index s = 0; s < T; ++s)
            for (Index o = 0; o < O; ++o) {
                double acc = 0;
                for (Index k = 0; k < K; ++k) {
                    const Index src = s + k - K / 2;
                    if (src < 0 || src >= T) continue;
                    for (Index c = 0; c < C; ++c) acc += x(b * T + src, c) * w(k * C + c, o);
                }
                CHECK(y.value()(b * T + s, o) == doctest::Approx(acc).epsilon(1e-14));
            }
}

TEST_CASE("linearity of backward") {
    std::mt19937_64 rng(8);
    ParameterStore s;
    s.add("x", random_matrix(rng, 2, 3));
    auto f = [](Tape& t, const ParameterStore& p) { return sum(tanh(t.parameter(p, "x"))); };
    auto g = [](Tape& t, const ParameterStore& p) { return mean(exp(t.parameter(p, "x"))); };
    auto [_, gf] = value_and_grad(f, s);
    auto [__, gg] = value_and_grad(g, s);
    auto [___, gc] = value_and_grad([&](Tape& t, const ParameterStore& p) { return 2.0 * f(t, p) + (-3.0) * g(t, p); }, s);
    CHECK((gc.at("x") - (2.0 * gf.at("x") - 3.0 * gg.at("x"))).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("grad_check contract") {
    ParameterStore s;
    s.add("x", Matrix::Constant(1, 3, 0.7));
    auto quad = [](Tape& t, const ParameterStore& p) { return sum(square(t.parameter(p, "x") - 0.2)); };
    CHECK(grad_check(quad, s, 1e-5).max_rel_error < 1e-6);
    auto flat = [](Tape& t, const ParameterStore&) { return t.constant(4.0); };
    CHECK(grad_check(flat, s, 1e-5).max_rel_error == 0.0);
    CHECK_THROWS_AS(grad_check(quad, s, 1e-2), ArgumentError);
    auto bad = [](Tape& t, const ParameterStore& p) { return sum(log(t.parameter(p, "x") - 5.0)); };
    CHECK_THROWS_AS(grad_check(bad, s, 1e-5), NumericError);
}

TEST_CASE("growth increment adjoints equal the elasticities") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 200; ++i) {
        LatentState st{8 * u(rng), 0.1 + 20 * u(rng), 0.5 + 3.5 * u(rng), u(rng)};
        Tape t;
        auto lai = t.leaf(Matrix::Constant(1, 1, st.lai));
        auto par = t.leaf(Matrix::Constant(1, 1, st.par));
        auto phi = t.constant(st.rue) * par * (1.0 - exp(-0.6 * lai)) * t.constant(st.fw);
        t.backward(phi);
        const double el = elasticity_lai(st, 0.6);
        const double ep = elasticity_log_par(st, 0.6);
        CHECK(std::abs(lai.adjoint()(0, 0) - el) <= 1e-6 * std::max(1e-12, std::abs(el)) + 1e-300);
        CHECK(std::abs(st.par * par.adjoint()(0, 0) - ep) <= 1e-6 * std::abs(ep) + 1e-300);
    }
}

TEST_CASE("dropout") {
    std::mt19937_64 r1(42), r2(42);
    Tape t;
    auto x = t.leaf(Matrix::Ones(20, 10));
    CHECK(dropout(x, 0.0, r1).id() == x.id());
    auto a = dropout(x, 0.3, r1);
    auto b = dropout(x, 0.3, r2);
    CHECK(a.value() == b.value());
    const double kept = (a.value().array() > 0).cast<double>().mean();
    CHECK(kept > 0.5);
    CHECK(kept < 0.9);
    t.backward(sum(a));
    CHECK(x.adjoint() == a.value());
}

TEST_CASE("determinism and checkpoints") {
    std::mt19937_64 rng(77);
    ParameterStore s;
    s.add("layer0.w", random_matrix(rng, 3, 2));
    s.add("layer0.b", Matrix::Zero(1, 2));
    s.add("tiny", Matrix::Constant(1, 1, 1e-300));
    s.step = 17;
    const auto dir = std::filesystem::temp_directory_path() / "agripinn_test_ckpt";
    const auto path = (dir / "p.ckpt").string();
    save_checkpoint(path, s);
    auto back = load_checkpoint(path);
    CHECK(back == s);
    CHECK(back.names() == s.names());
    std::filesystem::remove_all(dir);

    auto f = [](Tape& t, const ParameterStore& p) {
        return mean(square(tanh(matmul(t.constant(Matrix::Ones(4, 3)), t.parameter(p, "layer0.w")))));
    };
    auto [v1, g1] = value_and_grad(f, s);
    auto [v2, g2] = value_and_grad(f, s);
    CHECK(v1 == v2);
    CHECK(g1.at("layer0.w") == g2.at("layer0.w"));
    CHECK(g1.at("tiny") == Matrix::Zero(1, 1));
}
