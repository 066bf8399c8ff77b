#include "agripinn/eval.hpp"

#include "agripinn/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace agripinn::eval {

namespace {

void check_pair(Values y, Values y_hat, std::size_t min_len, const char* what) {
    if (y.size() != y_hat.size())
        throw ArgumentError(std::string(what) + ": length mismatch " + std::to_string(y.size()) + " vs " +
                            std::to_string(y_hat.size()));
    if (y.size() < min_len)
        throw ArgumentError(std::string(what) + ": needs at least " + std::to_string(min_len) + " values");
    for (std::size_t i = 0; i < y.size(); ++i)
        if (!std::isfinite(y[i]) || !std::isfinite(y_hat[i]))
            throw ArgumentError(std::string(what) + ": non-finite value at index " + std::to_string(i));
}

double mean(Values v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double centered_ss(Values v, double m) {
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s;
}

}  // namespace

double rmse(Values y, Values y_hat) {
    check_pair(y, y_hat, 1, "rmse");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    return std::sqrt(s / static_cast<double>(y.size()));
}

double mae(Values y, Values y_hat) {
    check_pair(y, y_hat, 1, "mae");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - y_hat[i]);
    return s / static_cast<double>(y.size());
}

double r2(Values y, Values y_hat) {
    check_pair(y, y_hat, 2, "r2");
    const double ss_tot = centered_ss(y, mean(y));
    if (ss_tot == 0.0) throw UndefinedMetricError("r2: observed series is constant");
    double ss_res = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    return 1.0 - ss_res / ss_tot;
}

double cc(Values y, Values y_hat) {
    check_pair(y, y_hat, 2, "cc");
    const double my = mean(y), mh = mean(y_hat);
    const double sy = centered_ss(y, my), sh = centered_ss(y_hat, mh);
    if (sy == 0.0 || sh == 0.0) throw UndefinedMetricError("cc: constant series");
    double cross = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) cross += (y[i] - my) * (y_hat[i] - mh);
    return std::clamp(cross / std::sqrt(sy * sh), -1.0, 1.0);
}

Rmspe rmspe(Values y, Values y_hat) {
    check_pair(y, y_hat, 1, "rmspe");
    Rmspe r;
    double s = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == 0.0) {
            ++r.excluded;
            continue;
        }
        const double e = (y[i] - y_hat[i]) / y[i];
        s += e * e;
        ++used;
    }
    if (used == 0) throw InsufficientDataError("rmspe: every observation is zero");
    r.percent = 100.0 * std::sqrt(s / static_cast<double>(used));
    return r;
}

double wilcoxon_exact_p(double w_plus, std::span<const double> ranks) {
    // Doubled ranks are integers even with mid-ranks, so the null distribution
    // of 2*W+ is a subset-sum count over 2^n equally likely sign patterns.
    std::vector<int> r2x;
    r2x.reserve(ranks.size());
    int total = 0;
    for (double r : ranks) {
        r2x.push_back(static_cast<int>(std::lround(2.0 * r)));
        total += r2x.back();
    }
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    int reach = 0;
    for (int r : r2x) {
        for (int s = reach; s >= 0; --s)
            if (count[static_cast<std::size_t>(s)] != 0.0) count[static_cast<std::size_t>(s + r)] += count[static_cast<std::size_t>(s)];
        reach += r;
    }
    const long target = std::lround(2.0 * w_plus);
    double lower = 0.0, upper = 0.0;
    for (int s = 0; s <= total; ++s) {
        if (s <= target) lower += count[static_cast<std::size_t>(s)];
        if (s >= target) upper += count[static_cast<std::size_t>(s)];
    }
    const double patterns = std::ldexp(1.0, static_cast<int>(ranks.size()));
    return std::min(1.0, 2.0 * std::min(lower, upper) / patterns);
}

WilcoxonResult wilcoxon_signed_rank(Values a, Values b) {
    if (a.size() != b.size()) throw ArgumentError("wilcoxon: length mismatch");
    std::vector<double> d;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double v = a[i] - b[i];
        if (!std::isfinite(v)) throw ArgumentError("wilcoxon: non-finite difference at index " + std::to_string(i));
        if (v != 0.0) d.push_back(v);
    }
    const std::size_t n = d.size();
    if (n < 5) throw InsufficientDataError("wilcoxon: " + std::to_string(n) + " non-zero differences, need at least 5");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
    std::vector<double> rank(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }

    WilcoxonResult res;
    res.n = n;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0) res.w += rank[i];

    if (n <= 20) {
        res.exact = true;
        res.p = wilcoxon_exact_p(res.w, rank);
        return res;
    }
    const double nn = static_cast<double>(n);
    const double mu = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double dev = std::max(0.0, std::abs(res.w - mu) - 0.5);
    res.p = var > 0.0 ? std::min(1.0, std::erfc(dev / std::sqrt(var) / std::sqrt(2.0))) : 1.0;
    return res;
}

int drought_days(Values fw, double threshold) {
    return static_cast<int>(std::count_if(fw.begin(), fw.end(), [&](double v) { return v < threshold; }));
}

LatentRecovery latent_recovery(std::span<const LatentState> pred, std::span<const LatentState> truth) {
    if (pred.size() != truth.size())
        throw ShapeError("latent_recovery: " + std::to_string(pred.size()) + " predicted days vs " +
                         std::to_string(truth.size()) + " truth days");
    if (pred.empty()) throw ArgumentError("latent_recovery: empty series");
    LatentRecovery out;
    const auto column = [](std::span<const LatentState> s, double LatentState::*field) {
        std::vector<double> v;
        v.reserve(s.size());
        for (const auto& l : s) v.push_back(l.*field);
        return v;
    };
    const std::pair<const char*, double LatentState::*> fields[] = {
        {"lai", &LatentState::lai}, {"par", &LatentState::par}, {"rue", &LatentState::rue}, {"fw", &LatentState::fw}};
    for (const auto& [name, field] : fields) {
        const auto t = column(truth, field), p = column(pred, field);
        LatentMetric m;
        m.variable = name;
        m.rmspe = rmspe(t, p);
        if (t.size() >= 2) {
            try {
                m.cc = cc(t, p);
            } catch (const UndefinedMetricError& e) {
                m.cc_error = e.what();
            }
        } else {
            m.cc_error = "cc: needs at least 2 values";
        }
        out.variables.push_back(std::move(m));
        if (std::string_view(name) == "fw") {
            out.drought_days_truth = drought_days(t);
            out.drought_days_pred = drought_days(p);
        }
    }
    return out;
}

void EvalReport::validate() const {
    for (const auto& m : metrics) {
        const std::string field = "metrics." + m.metric + "." + m.variable + "." + m.treatment;
        if (!std::isfinite(m.value)) throw DomainError(field, "non-finite value");
        if ((m.metric == "rmse" || m.metric == "mae" || m.metric == "rmspe") && m.value < 0.0)
            throw DomainError(field, "must be >= 0");
        if (m.metric == "cc" && std::abs(m.value) > 1.0) throw DomainError(field, "must lie in [-1, 1]");
        if (m.metric == "r2" && m.value > 1.0) throw DomainError(field, "must be <= 1");
    }
    for (const auto& s : significance)
        if (!(s.result.p >= 0.0 && s.result.p <= 1.0))
            throw DomainError("significance." + s.comparison, "p-value outside [0, 1]");
}

std::string EvalReport::json_text() const {
    nlohmann::ordered_json j;
    j["label"] = label;
    j["lambda"] = lambda;
    auto& ms = j["metrics"] = nlohmann::ordered_json::array();
    for (const auto& m : metrics)
        ms.push_back({{"metric", m.metric}, {"variable", m.variable}, {"treatment", m.treatment}, {"value", m.value},
                      {"unit", m.unit}});
    auto& ss = j["significance"] = nlohmann::ordered_json::array();
    for (const auto& s : significance)
        ss.push_back({{"comparison", s.comparison}, {"w", s.result.w}, {"p", s.result.p}, {"n", s.result.n},
                      {"exact", s.result.exact}});
    j["notes"] = notes;
    return j.dump(2) + "\n";
}

std::string EvalReport::csv_text() const {
    std::ostringstream out;
    out << "metric,variable,treatment,value\n";
    for (const auto& m : metrics)
        out << m.metric << ',' << m.variable << ',' << m.treatment << ',' << csv::format_double(m.value) << '\n';
    for (const auto& s : significance) {
        out << "wilcoxon_w," << s.comparison << ",all," << csv::format_double(s.result.w) << '\n';
        out << "wilcoxon_p," << s.comparison << ",all," << csv::format_double(s.result.p) << '\n';
    }
    return out.str();
}

}  // namespace agripinn::eval
