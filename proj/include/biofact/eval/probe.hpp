#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "biofact/core/matrix.hpp"

namespace biofact::eval {

struct EvalConfig {
    std::vector<double> horizons_months{12.0, 18.0, 24.0};
    int n_folds = 5;
    int permutations = 1000;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const nlohmann::json& j);

/// Seeded stratified fold index per sample. Each class is shuffled and dealt
/// round-robin, continuing the rotation across classes. Throws InputError when
/// fewer than two classes exist or a class has fewer than `n_folds` members.
std::vector<int> stratified_folds(const std::vector<int>& labels, int n_folds, std::uint64_t seed);

struct ProbeResult {
    double macro_auc = 0.0;        // mean of fold_aucs
    std::vector<double> fold_aucs; // macro one-vs-rest AUC of each held-out fold
    std::vector<int> folds;
};

/// Cross-validated one-vs-rest logistic regression on standardized features,
/// fit by full-batch gradient descent. Binary labels use a single model.
ProbeResult linear_probe(const Matrix& embeddings, const std::vector<int>& labels, const EvalConfig& cfg);

struct SpecializationResult {
    ProbeResult liver;
    ProbeResult tumor;
    double auc_liver = 0.0;
    double auc_tumor = 0.0;
    double delta = 0.0;
    double p_value = 1.0;
    bool exact = false; // all sign patterns enumerated
};

/// Paired sign-flip permutation test over fold-wise AUC differences. Both
/// probes share one fold assignment. The p-value is one-sided in the
/// direction of the observed delta; all 2^k patterns are enumerated when
/// 2^k <= cfg.permutations, otherwise cfg.permutations seeded draws are used.
SpecializationResult probe_specialization_test(const Matrix& liver_embs, const Matrix& tumor_embs,
                                               const std::vector<int>& labels, const EvalConfig& cfg);

/// The sign-flip p-value on its own (exposed for testing).
double sign_flip_p_value(const std::vector<double>& diffs, int permutations, std::uint64_t seed, bool* exact = nullptr);

} // namespace biofact::eval
