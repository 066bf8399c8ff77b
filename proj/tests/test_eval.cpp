#include "doctest.h"

#include "agripinn/eval.hpp"

#include <cmath>
#include <random>

using namespace agripinn;
using namespace agripinn::eval;
using V = std::vector<double>;

namespace {

// Direct textbook formulas, written independently of the library.
double naive_rmse(const V& y, const V& h) {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::pow(y[i] - h[i], 2);
    return std::sqrt(s / y.size());
}
double naive_mae(const V& y, const V& h) {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::fabs(y[i] - h[i]);
    return s / y.size();
}
double naive_mean(const V& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / v.size();
}
double naive_cc(const V& y, const V& h) {
    const double my = naive_mean(y), mh = naive_mean(h);
    double num = 0, dy = 0, dh = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        num += (y[i] - my) * (h[i] - mh);
        dy += (y[i] - my) * (y[i] - my);
        dh += (h[i] - mh) * (h[i] - mh);
    }
    return num / (std::sqrt(dy) * std::sqrt(dh));
}
double naive_r2(const V& y, const V& h) {
    const double my = naive_mean(y);
    double res = 0, tot = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        res += (y[i] - h[i]) * (y[i] - h[i]);
        tot += (y[i] - my) * (y[i] - my);
    }
    return 1 - res / tot;
}
double naive_rmspe(const V& y, const V& h) {
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::pow((y[i] - h[i]) / y[i], 2);
    return 100 * std::sqrt(s / y.size());
}

// Full enumeration of the 2^n sign patterns.
double enumerated_p(const V& ranks, double w) {
    const std::size_t n = ranks.size();
    double lower = 0, upper = 0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1u << i)) s += ranks[i];
        if (s <= w + 1e-9) lower += 1;
        if (s >= w - 1e-9) upper += 1;
    }
    return std::min(1.0, 2 * std::min(lower, upper) / std::ldexp(1.0, static_cast<int>(n)));
}

}  // namespace

TEST_CASE("metric examples") {
    CHECK(rmse(V{1, 2, 3}, V{1, 2, 3}) == 0.0);
    CHECK(rmse(V{0, 0}, V{3, 4}) == doctest::Approx(3.53553).epsilon(1e-6));
    CHECK(rmse(V{2}, V{5}) == 3.0);
    CHECK_THROWS_AS(rmse(V{}, V{}), ArgumentError);
    CHECK_THROWS_AS(rmse(V{1}, V{1, 2}), ArgumentError);

    const V y{1, 2, 3, 4.5};
    V affine, neg;
    for (double v : y) {
        affine.push_back(2 * v + 3);
        neg.push_back(-v);
    }
    CHECK(cc(y, affine) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cc(y, neg) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(cc(V{1, 2, 3}, V{1, 3, 2}) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(cc(V{1, 1, 1}, V{1, 2, 3}), UndefinedMetricError);
    CHECK_THROWS_AS(cc(V{1}, V{1}), ArgumentError);

    CHECK(r2(y, y) == 1.0);
    CHECK(r2(y, V(4, naive_mean(y))) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(r2(V{1, 2, 3}, V{1, 2, 4}) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(r2(V{2, 2}, V{1, 2}), UndefinedMetricError);

    CHECK(rmspe(y, y).percent == 0.0);
    CHECK(rmspe(V{10}, V{11}).percent == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(rmspe(V{10, 20}, V{11, 18}).percent == doctest::Approx(10.0).epsilon(1e-12));
    auto z = rmspe(V{0, 10, 0}, V{1, 11, 2});
    CHECK(z.excluded == 2);
    CHECK(z.percent == doctest::Approx(10.0).epsilon(1e-12));
    CHECK_THROWS_AS(rmspe(V{0}, V{1}), InsufficientDataError);

    CHECK(mae(V{0, 0}, V{3, -4}) == 3.5);
}

TEST_CASE("metrics match naive formulas on random series") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> len(2, 30);
    std::normal_distribution<double> n(0, 1);
    std::uniform_real_distribution<double> pos(0.5, 50);
    for (int trial = 0; trial < 1000; ++trial) {
        const int L = len(rng);
        V y(L), h(L);
        for (int i = 0; i < L; ++i) {
            y[i] = pos(rng);
            h[i] = y[i] + 5 * n(rng);
        }
        const auto near = [](double a, double b) { return std::abs(a - b) <= 1e-10 * std::max(1.0, std::abs(b)); };
        CHECK(near(rmse(y, h), naive_rmse(y, h)));
        CHECK(near(mae(y, h), naive_mae(y, h)));
        CHECK(near(cc(y, h), naive_cc(y, h)));
        CHECK(near(r2(y, h), naive_r2(y, h)));
        CHECK(near(rmspe(y, h).percent, naive_rmspe(y, h)));
    }
}

TEST_CASE("scale behaviour") {
    const V y{1, 4, 2, 8, 5}, h{2, 3, 2.5, 7, 6};
    V ys, hs, ha;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ys.push_back(3 * y[i]);
        hs.push_back(3 * h[i]);
        ha.push_back(2 * h[i] + 1);
    }
    CHECK(rmse(ys, hs) == doctest::Approx(3 * rmse(y, h)).epsilon(1e-14));
    CHECK(cc(y, ha) == doctest::Approx(cc(y, h)).epsilon(1e-14));
    CHECK(r2(y, ha) != doctest::Approx(r2(y, h)));  // r2 is not affine invariant
}

TEST_CASE("wilcoxon examples") {
    const V a{1, 2, 3, 4, 5, 6}, zero(6, 0.0);
    auto r = wilcoxon_signed_rank(a, zero);
    CHECK(r.w == 21.0);
    CHECK(r.n == 6);
    CHECK(r.exact);
    CHECK(r.p == 0.03125);
    auto flipped = wilcoxon_signed_rank(zero, a);
    CHECK(flipped.w == 0.0);
    CHECK(flipped.p == r.p);
    CHECK_THROWS_AS(wilcoxon_signed_rank(a, a), InsufficientDataError);
    CHECK_THROWS_AS(wilcoxon_signed_rank(V{1, 2, 3, 4}, V{0, 0, 0, 0}), InsufficientDataError);
    // Zero differences are dropped before ranking.
    auto dropped = wilcoxon_signed_rank(V{1, 2, 3, 4, 5, 6, 7}, V{0, 0, 0, 0, 0, 0, 7});
    CHECK(dropped.n == 6);
    CHECK(dropped.p == 0.03125);
}

TEST_CASE("wilcoxon exact branch equals full enumeration") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> small(-4, 4);
    std::normal_distribution<double> n(0, 1);
    for (int size = 5; size <= 10; ++size) {
        for (int trial = 0; trial < 40; ++trial) {
            V a(size), b(size, 0.0);
            const bool ties = trial % 2 == 0;
            for (int i = 0; i < size; ++i) {
                do {
                    a[i] = ties ? small(rng) : n(rng);
                } while (a[i] == 0.0);
            }
            auto r = wilcoxon_signed_rank(a, b);
            // Rebuild mid-ranks of |d| independently.
            V ranks(size);
            for (int i = 0; i < size; ++i) {
                double less = 0, eq = 0;
                for (int j = 0; j < size; ++j) {
                    if (std::abs(a[j]) < std::abs(a[i])) ++less;
                    if (std::abs(a[j]) == std::abs(a[i])) ++eq;
                }
                ranks[i] = less + (eq + 1) / 2;
            }
            double w = 0;
            for (int i = 0; i < size; ++i)
                if (a[i] > 0) w += ranks[i];
            CHECK(r.w == w);
            CHECK(r.p == doctest::Approx(enumerated_p(ranks, w)).epsilon(1e-14));
        }
    }
}

TEST_CASE("wilcoxon normal approximation is close to exact at n = 20") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.3, 1);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
        V a(21), b(21, 0.0);
        for (auto& v : a) v = n(rng);
        // n = 21 uses the approximation; compare with the exact p of the first 20.
        V a20(a.begin(), a.begin() + 20), b20(20, 0.0);
        auto exact = wilcoxon_signed_rank(a20, b20);
        REQUIRE(exact.exact);
        // Same 20 differences through the approximation formula.
        const double mu = 20 * 21 / 4.0, sd = std::sqrt(20 * 21 * 41 / 24.0);
        const double z = std::max(0.0, std::abs(exact.w - mu) - 0.5) / sd;
        worst = std::max(worst, std::abs(std::erfc(z / std::sqrt(2.0)) - exact.p));
        auto approx = wilcoxon_signed_rank(a, b);
        CHECK_FALSE(approx.exact);
        CHECK(approx.p >= 0.0);
        CHECK(approx.p <= 1.0);
    }
    CHECK(worst < 0.01);
}

TEST_CASE("latent recovery") {
    std::vector<LatentState> t{{1, 8, 2, 0.5}, {2, 9, 2.5, 0.7}, {3, 7, 3, 0.55}};
    auto same = latent_recovery(t, t);
    REQUIRE(same.variables.size() == 4);
    for (const auto& v : same.variables) {
        CHECK(v.rmspe.percent == 0.0);
        REQUIRE(v.cc.has_value());
        CHECK(*v.cc == doctest::Approx(1.0));
    }
    CHECK(same.drought_days_truth == 2);
    CHECK(drought_days(V{0.5, 0.7, 0.55}) == 2);

    auto flat = t;
    for (auto& l : flat) l.lai = 2.0;
    auto r = latent_recovery(flat, t);
    CHECK_FALSE(r.variables[0].cc.has_value());
    CHECK_FALSE(r.variables[0].cc_error.empty());
    CHECK(r.variables[0].rmspe.percent > 0.0);

    std::vector<LatentState> shorter(t.begin(), t.begin() + 2);
    CHECK_THROWS_AS(latent_recovery(shorter, t), ShapeError);
}

TEST_CASE("report serialisation and invariants") {
    EvalReport rep;
    rep.label = "ERM";
    rep.metrics.push_back({"rmse", "agb", "all", 12.5, "g/m2"});
    rep.metrics.push_back({"cc", "fw", "shelter", 0.8, ""});
    rep.significance.push_back({"hybrid_vs_erm", wilcoxon_signed_rank(V{1, 2, 3, 4, 5, 6}, V(6, 0.0))});
    CHECK_NOTHROW(rep.validate());
    CHECK(rep.csv_text() ==
          "metric,variable,treatment,value\nrmse,agb,all,12.5\ncc,fw,shelter,0.8\n"
          "wilcoxon_w,hybrid_vs_erm,all,21\nwilcoxon_p,hybrid_vs_erm,all,0.03125\n");
    CHECK(rep.json_text().find("\"label\": \"ERM\"") != std::string::npos);
    CHECK(rep.json_text() == rep.json_text());

    auto bad = rep;
    bad.metrics[1].value = 1.5;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = rep;
    bad.metrics[0].value = -1;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = rep;
    bad.metrics.push_back({"r2", "agb", "all", 1.2, ""});
    CHECK_THROWS_AS(bad.validate(), DomainError);
}
