#include "biofact/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "biofact/core/errors.hpp"

namespace biofact::eval {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* where)
{
    if (a != b)
        throw InputError(std::string(where) + ": length mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
}

std::vector<std::size_t> order_by_time(const std::vector<double>& times)
{
    std::vector<std::size_t> idx(times.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
    return idx;
}

} // namespace

double KMCurve::at(double t) const
{
    double s = 1.0;
    for (std::size_t k = 0; k < event_times.size() && event_times[k] <= t; ++k) s = survival_probs[k];
    return s;
}

KMCurve kaplan_meier(const std::vector<double>& times, const std::vector<bool>& events)
{
    check_lengths(times.size(), events.size(), "kaplan_meier");
    if (times.empty()) throw InputError("kaplan_meier: no observations");
    const auto idx = order_by_time(times);
    KMCurve c;
    double s = 1.0;
    std::size_t at_risk = times.size();
    for (std::size_t k = 0; k < idx.size();) {
        const double t = times[idx[k]];
        int d = 0;
        std::size_t m = 0;
        while (k + m < idx.size() && times[idx[k + m]] == t) {
            d += events[idx[k + m]] ? 1 : 0;
            ++m;
        }
        if (d > 0) {
            s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
            c.event_times.push_back(t);
            c.survival_probs.push_back(s);
            c.at_risk.push_back(static_cast<int>(at_risk));
            c.n_events.push_back(d);
        }
        at_risk -= m;
        k += m;
    }
    return c;
}

double chi2_1df_sf(double x)
{
    if (!(x > 0.0)) return 1.0;
    return std::erfc(std::sqrt(x / 2.0));
}

LogRankResult log_rank_test(const std::vector<double>& times_a, const std::vector<bool>& events_a,
                            const std::vector<double>& times_b, const std::vector<bool>& events_b)
{
    check_lengths(times_a.size(), events_a.size(), "log_rank_test");
    check_lengths(times_b.size(), events_b.size(), "log_rank_test");
    if (times_a.empty() || times_b.empty()) throw InputError("log_rank_test: both groups must be non-empty");

    struct Obs {
        double t;
        bool event;
        bool in_a;
    };
    std::vector<Obs> all;
    all.reserve(times_a.size() + times_b.size());
    for (std::size_t i = 0; i < times_a.size(); ++i) all.push_back({times_a[i], events_a[i], true});
    for (std::size_t i = 0; i < times_b.size(); ++i) all.push_back({times_b[i], events_b[i], false});
    std::stable_sort(all.begin(), all.end(), [](const Obs& x, const Obs& y) { return x.t < y.t; });

    double n = static_cast<double>(all.size());
    double n_a = static_cast<double>(times_a.size());
    double obs = 0.0, expected = 0.0, var = 0.0;
    int total_events = 0;
    for (std::size_t k = 0; k < all.size();) {
        const double t = all[k].t;
        double d = 0.0, d_a = 0.0, m = 0.0, m_a = 0.0;
        while (k < all.size() && all[k].t == t) {
            if (all[k].event) {
                d += 1.0;
                if (all[k].in_a) d_a += 1.0;
            }
            m += 1.0;
            if (all[k].in_a) m_a += 1.0;
            ++k;
        }
        if (d > 0.0) {
            total_events += static_cast<int>(d);
            obs += d_a;
            expected += d * n_a / n;
            if (n > 1.0) var += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
        }
        n -= m;
        n_a -= m_a;
    }
    if (total_events == 0) throw UndefinedError("log_rank_test: no events in either group");

    LogRankResult r;
    r.observed_a = obs;
    r.expected_a = expected;
    r.chi_square = var > 0.0 ? (obs - expected) * (obs - expected) / var : 0.0;
    r.p_value = chi2_1df_sf(r.chi_square);
    return r;
}

std::vector<double> censoring_survival_before(const std::vector<double>& times, const std::vector<bool>& events,
                                              const std::vector<double>& query)
{
    check_lengths(times.size(), events.size(), "censoring_survival_before");
    const auto idx = order_by_time(times);
    // Steps of the reverse KM: censorings are the "events".
    std::vector<double> step_t, step_s;
    double s = 1.0;
    std::size_t at_risk = times.size();
    for (std::size_t k = 0; k < idx.size();) {
        const double t = times[idx[k]];
        int c = 0;
        std::size_t m = 0;
        while (k + m < idx.size() && times[idx[k + m]] == t) {
            c += events[idx[k + m]] ? 0 : 1;
            ++m;
        }
        if (c > 0) {
            s *= 1.0 - static_cast<double>(c) / static_cast<double>(at_risk);
            step_t.push_back(t);
            step_s.push_back(s);
        }
        at_risk -= m;
        k += m;
    }
    std::vector<double> out(query.size());
    for (std::size_t q = 0; q < query.size(); ++q) {
        // Number of steps strictly before the query time.
        const auto pos = std::lower_bound(step_t.begin(), step_t.end(), query[q]) - step_t.begin();
        out[q] = pos == 0 ? 1.0 : step_s[static_cast<std::size_t>(pos - 1)];
    }
    return out;
}

double time_dependent_auc(const Vector& risks, const std::vector<double>& times, const std::vector<bool>& events,
                          double horizon)
{
    const auto n = static_cast<std::size_t>(risks.size());
    check_lengths(n, times.size(), "time_dependent_auc");
    check_lengths(n, events.size(), "time_dependent_auc");
    std::vector<std::size_t> cases, controls;
    for (std::size_t i = 0; i < n; ++i) {
        if (times[i] <= horizon && events[i]) cases.push_back(i);
        else if (times[i] > horizon) controls.push_back(i);
    }
    if (cases.empty())
        throw UndefinedError("time_dependent_auc: no events at or before horizon " + std::to_string(horizon));
    if (controls.empty())
        throw UndefinedError("time_dependent_auc: nobody followed beyond horizon " + std::to_string(horizon));

    std::vector<double> case_times(cases.size());
    for (std::size_t k = 0; k < cases.size(); ++k) case_times[k] = times[cases[k]];
    const std::vector<double> g = censoring_survival_before(times, events, case_times);
    std::vector<double> w(cases.size());
    for (std::size_t k = 0; k < cases.size(); ++k) {
        if (!(g[k] > 0.0)) throw UndefinedError("time_dependent_auc: censoring survival reaches zero");
        w[k] = 1.0 / g[k];
    }
    std::vector<double> sorted = w;
    std::sort(sorted.begin(), sorted.end());
    const auto cap_idx = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(sorted.size()))) - 1;
    const double cap = sorted[std::min(cap_idx, sorted.size() - 1)];
    for (double& x : w) x = std::min(x, cap);

    std::vector<double> control_risks(controls.size());
    for (std::size_t k = 0; k < controls.size(); ++k) control_risks[k] = risks[static_cast<Eigen::Index>(controls[k])];
    std::sort(control_risks.begin(), control_risks.end());

    double num = 0.0, den = 0.0;
    const double n_controls = static_cast<double>(controls.size());
    for (std::size_t k = 0; k < cases.size(); ++k) {
        const double r = risks[static_cast<Eigen::Index>(cases[k])];
        const auto lo = std::lower_bound(control_risks.begin(), control_risks.end(), r);
        const auto hi = std::upper_bound(lo, control_risks.end(), r);
        const double below = static_cast<double>(lo - control_risks.begin());
        const double tied = static_cast<double>(hi - lo);
        num += w[k] * (below + 0.5 * tied);
        den += w[k] * n_controls;
    }
    return num / den;
}

double concordance_index(const Vector& risks, const std::vector<double>& times, const std::vector<bool>& events)
{
    const auto n = static_cast<std::size_t>(risks.size());
    check_lengths(n, times.size(), "concordance_index");
    check_lengths(n, events.size(), "concordance_index");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!events[i]) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (!(times[i] < times[j])) continue;
            den += 1.0;
            const double ri = risks[static_cast<Eigen::Index>(i)];
            const double rj = risks[static_cast<Eigen::Index>(j)];
            num += ri > rj ? 1.0 : (ri == rj ? 0.5 : 0.0);
        }
    }
    if (den == 0.0) throw UndefinedError("concordance_index: no comparable pairs");
    return num / den;
}

double binary_auc(const Vector& scores, const std::vector<bool>& positive)
{
    const auto n = static_cast<std::size_t>(scores.size());
    check_lengths(n, positive.size(), "binary_auc");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return scores[static_cast<Eigen::Index>(a)] < scores[static_cast<Eigen::Index>(b)];
    });
    // Mid-ranks handle ties.
    double rank_sum = 0.0;
    double n_pos = 0.0;
    for (std::size_t k = 0; k < n;) {
        std::size_t m = k;
        while (m < n && scores[static_cast<Eigen::Index>(idx[m])] == scores[static_cast<Eigen::Index>(idx[k])]) ++m;
        const double mid = 0.5 * static_cast<double>(k + 1 + m);
        for (std::size_t q = k; q < m; ++q)
            if (positive[idx[q]]) {
                rank_sum += mid;
                n_pos += 1.0;
            }
        k = m;
    }
    const double n_neg = static_cast<double>(n) - n_pos;
    if (n_pos == 0.0 || n_neg == 0.0) throw UndefinedError("binary_auc: need both positive and negative samples");
    return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

} // namespace biofact::eval
