#pragma once

#include <vector>

#include "biofact/core/matrix.hpp"

namespace biofact::eval {

struct KMCurve {
    std::vector<double> event_times;    // distinct times with at least one event, ascending
    std::vector<double> survival_probs; // S just after each event time
    std::vector<int> at_risk;
    std::vector<int> n_events;

    /// Right-continuous step value S(t); 1 before the first event.
    double at(double t) const;
};

KMCurve kaplan_meier(const std::vector<double>& times, const std::vector<bool>& events);

struct LogRankResult {
    double chi_square = 0.0;
    double p_value = 1.0;
    double observed_a = 0.0;
    double expected_a = 0.0;
};

/// Two-sample log-rank test, chi-square with 1 df. Throws InputError on an
/// empty group and UndefinedError when neither group has an event.
LogRankResult log_rank_test(const std::vector<double>& times_a, const std::vector<bool>& events_a,
                            const std::vector<double>& times_b, const std::vector<bool>& events_b);

/// Upper tail of chi-square with one degree of freedom.
double chi2_1df_sf(double x);

/// Reverse Kaplan-Meier G(t-) = P(C >= t), evaluated at each query time.
std::vector<double> censoring_survival_before(const std::vector<double>& times, const std::vector<bool>& events,
                                              const std::vector<double>& query);

/// Cumulative/dynamic AUC at `horizon`: cases are events at or before the
/// horizon, controls survive past it. Case weights 1/G(T_i-) are truncated at
/// their 99th percentile. Risk ties count one half. Throws UndefinedError when
/// there are no cases or no controls.
double time_dependent_auc(const Vector& risks, const std::vector<double>& times, const std::vector<bool>& events,
                          double horizon);

/// Harrell's C over comparable pairs; risk ties count one half.
double concordance_index(const Vector& risks, const std::vector<double>& times, const std::vector<bool>& events);

/// Binary AUC of `scores` against `positive` labels (Mann-Whitney, ties one half).
double binary_auc(const Vector& scores, const std::vector<bool>& positive);

} // namespace biofact::eval
