#include "biofact/eval/subgroups.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "biofact/core/errors.hpp"
#include "biofact/core/text.hpp"

namespace biofact::eval {

StumpResult risk_threshold_stratify(const Vector& risks, const std::vector<double>& times,
                                    const std::vector<bool>& events, double min_leaf_fraction)
{
    const auto n = static_cast<std::size_t>(risks.size());
    if (times.size() != n || events.size() != n) throw InputError("risk_threshold_stratify: length mismatch");
    if (std::count(events.begin(), events.end(), true) < 2)
        throw InputError("risk_threshold_stratify: need at least two events");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return risks[static_cast<Eigen::Index>(a)] < risks[static_cast<Eigen::Index>(b)];
    });
    auto risk_at = [&](std::size_t k) { return risks[static_cast<Eigen::Index>(order[k])]; };

    StumpResult best;
    if (risk_at(0) == risk_at(n - 1)) {
        best.threshold = risk_at(0);
        best.degenerate = true;
        best.warning = "all risks are equal; every patient falls in a single group";
        return best;
    }
    const auto min_leaf = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(min_leaf_fraction * static_cast<double>(n))));
    const double median_rank = static_cast<double>(n) / 2.0;
    bool found = false;
    double best_dist = 0.0;
    for (std::size_t k = 1; k < n; ++k) {
        // Split between sorted positions k-1 and k; the low group has k members.
        if (risk_at(k) == risk_at(k - 1)) continue;
        if (k < min_leaf || n - k < min_leaf) continue;
        std::vector<double> ta, tb;
        std::vector<bool> ea, eb;
        for (std::size_t q = 0; q < n; ++q) {
            const std::size_t i = order[q];
            (q < k ? ta : tb).push_back(times[i]);
            (q < k ? ea : eb).push_back(events[i]);
        }
        double chi = 0.0;
        try {
            chi = log_rank_test(ta, ea, tb, eb).chi_square;
        } catch (const UndefinedError&) {
            continue;
        }
        const double dist = std::abs(static_cast<double>(k) - median_rank);
        if (!found || chi > best.chi_square || (chi == best.chi_square && dist < best_dist)) {
            found = true;
            best.chi_square = chi;
            best.threshold = 0.5 * (risk_at(k - 1) + risk_at(k));
            best_dist = dist;
        }
    }
    if (!found) {
        // Too few distinct values for the leaf constraint; split at the median.
        const std::size_t k = n / 2;
        best.threshold = risk_at(std::max<std::size_t>(k, 1) - 1);
        best.warning = "no admissible split; threshold set at the median risk";
    }
    return best;
}

namespace {

ArmSummary summarize(const std::vector<double>& t, const std::vector<bool>& e)
{
    ArmSummary a;
    a.n = static_cast<int>(t.size());
    a.events = static_cast<int>(std::count(e.begin(), e.end(), true));
    if (!t.empty()) a.km = kaplan_meier(t, e);
    return a;
}

SubgroupRow compare_arms(const std::string& name, const std::vector<cohort::SurvivalRecord>& records,
                         const std::vector<std::size_t>& members)
{
    std::vector<double> tt, tu;
    std::vector<bool> et, eu;
    for (std::size_t i : members) {
        const auto& r = records[i];
        (r.treated ? tt : tu).push_back(r.time_months);
        (r.treated ? et : eu).push_back(r.event);
    }
    SubgroupRow row;
    row.name = name;
    row.n = static_cast<int>(members.size());
    row.treated = summarize(tt, et);
    row.untreated = summarize(tu, eu);
    row.low_power = row.treated.n <= 12 || row.untreated.n <= 12;
    if (tt.empty() || tu.empty()) {
        row.empty = true;
        row.note = "empty";
        return row;
    }
    try {
        row.test = log_rank_test(tt, et, tu, eu);
    } catch (const UndefinedError& e) {
        row.note = e.what();
    }
    return row;
}

} // namespace

std::vector<SubgroupRow> treatment_subgroup_analysis(const std::vector<cohort::SurvivalRecord>& records,
                                                     const std::vector<survival::Phenotype>& phenotypes,
                                                     const Vector& risks, double risk_threshold)
{
    const std::size_t n = records.size();
    if (phenotypes.size() != n || static_cast<std::size_t>(risks.size()) != n)
        throw InputError("treatment_subgroup_analysis: records, phenotypes and risks differ in length");
    std::vector<SubgroupRow> rows;
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    rows.push_back(compare_arms("all", records, all));
    for (survival::Phenotype ph : {survival::Phenotype::liver_driven, survival::Phenotype::tumor_driven}) {
        std::vector<std::size_t> members, low, high;
        for (std::size_t i = 0; i < n; ++i) {
            if (phenotypes[i] != ph) continue;
            members.push_back(i);
            (risks[static_cast<Eigen::Index>(i)] > risk_threshold ? high : low).push_back(i);
        }
        const std::string base = survival::to_string(ph);
        rows.push_back(compare_arms(base, records, members));
        rows.push_back(compare_arms(base + "/low_risk", records, low));
        rows.push_back(compare_arms(base + "/high_risk", records, high));
    }
    return rows;
}

std::vector<StratificationRow> stratification_tests(const std::vector<cohort::SurvivalRecord>& records,
                                                    const std::vector<survival::Phenotype>& phenotypes,
                                                    const Vector& risks, double risk_threshold)
{
    const std::size_t n = records.size();
    if (phenotypes.size() != n || static_cast<std::size_t>(risks.size()) != n)
        throw InputError("stratification_tests: records, phenotypes and risks differ in length");
    auto run = [&](const std::string& name, auto in_a) {
        std::vector<double> ta, tb;
        std::vector<bool> ea, eb;
        for (std::size_t i = 0; i < n; ++i) {
            const bool a = in_a(i);
            (a ? ta : tb).push_back(records[i].time_months);
            (a ? ea : eb).push_back(records[i].event);
        }
        StratificationRow row;
        row.name = name;
        row.n_a = static_cast<int>(ta.size());
        row.n_b = static_cast<int>(tb.size());
        if (ta.empty() || tb.empty()) {
            row.note = "empty";
            return row;
        }
        try {
            row.test = log_rank_test(ta, ea, tb, eb);
        } catch (const UndefinedError& e) {
            row.note = e.what();
        }
        return row;
    };
    return {run("phenotype", [&](std::size_t i) { return phenotypes[i] == survival::Phenotype::liver_driven; }),
            run("risk_group", [&](std::size_t i) { return risks[static_cast<Eigen::Index>(i)] > risk_threshold; })};
}

std::string km_svg(const std::string& title, const std::vector<std::pair<std::string, KMCurve>>& curves,
                   double max_time)
{
    constexpr double w = 480, h = 320, left = 50, right = 20, top = 30, bottom = 40;
    const double pw = w - left - right, ph = h - top - bottom;
    if (!(max_time > 0.0)) max_time = 1.0;
    auto x = [&](double t) { return format_double(left + pw * std::min(t, max_time) / max_time); };
    auto y = [&](double s) { return format_double(top + ph * (1.0 - s)); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    o << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";
    o << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#888\"/>\n";
    o << "<text x=\"" << left << "\" y=\"" << h - 10 << "\" font-size=\"11\">0</text>\n";
    o << "<text x=\"" << left + pw - 40 << "\" y=\"" << h - 10 << "\" font-size=\"11\">" << format_double(max_time)
      << " mo</text>\n";
    for (std::size_t c = 0; c < curves.size(); ++c) {
        const KMCurve& km = curves[c].second;
        std::ostringstream d;
        d << "M" << x(0) << "," << y(1);
        for (std::size_t k = 0; k < km.event_times.size() && km.event_times[k] <= max_time; ++k)
            d << " H" << x(km.event_times[k]) << " V" << y(km.survival_probs[k]);
        d << " H" << x(max_time);
        const char* color = colors[c % 4];
        o << "<path d=\"" << d.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
        o << "<text x=\"" << left + pw - 150 << "\" y=\"" << top + 15 + 14 * static_cast<double>(c)
          << "\" font-size=\"11\" fill=\"" << color << "\">" << curves[c].first << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

} // namespace biofact::eval
