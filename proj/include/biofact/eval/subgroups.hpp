#pragma once

#include <optional>
#include <string>
#include <vector>

#include "biofact/cohort/cohort.hpp"
#include "biofact/eval/metrics.hpp"
#include "biofact/survival/head.hpp"

namespace biofact::eval {

struct StumpResult {
    double threshold = 0.0; // high risk iff risk > threshold
    double chi_square = 0.0;
    bool degenerate = false; // all risks equal: a single group
    std::string warning;
};

/// Depth-1 decision stump on a scalar risk: scans midpoints between distinct
/// sorted risks, keeps splits with at least `min_leaf_fraction` of patients on
/// each side, and maximizes the log-rank chi-square. Ties go to the candidate
/// closest to the median rank. Throws InputError with fewer than two events.
StumpResult risk_threshold_stratify(const Vector& risks, const std::vector<double>& times,
                                    const std::vector<bool>& events, double min_leaf_fraction = 0.1);

struct ArmSummary {
    int n = 0;
    int events = 0;
    KMCurve km;
};

struct SubgroupRow {
    std::string name;
    int n = 0;
    ArmSummary treated;
    ArmSummary untreated;
    bool empty = false;     // an arm has no patients; no test was run
    bool low_power = false; // some arm has n <= 12
    std::optional<LogRankResult> test;
    std::string note;
};

/// Treated versus untreated within: all patients, each phenotype, and each
/// phenotype x risk-group cell (risk > threshold is high risk).
std::vector<SubgroupRow> treatment_subgroup_analysis(const std::vector<cohort::SurvivalRecord>& records,
                                                     const std::vector<survival::Phenotype>& phenotypes,
                                                     const Vector& risks, double risk_threshold);

struct StratificationRow {
    std::string name; // "phenotype" or "risk_group"
    int n_a = 0;
    int n_b = 0;
    std::optional<LogRankResult> test;
    std::string note;
};

/// Liver-driven vs tumor-driven, and high vs low risk, log-rank comparisons.
std::vector<StratificationRow> stratification_tests(const std::vector<cohort::SurvivalRecord>& records,
                                                    const std::vector<survival::Phenotype>& phenotypes,
                                                    const Vector& risks, double risk_threshold);

/// Step plot of one or more KM curves as a standalone SVG document.
std::string km_svg(const std::string& title, const std::vector<std::pair<std::string, KMCurve>>& curves,
                   double max_time);

} // namespace biofact::eval
