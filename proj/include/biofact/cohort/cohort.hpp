#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "biofact/core/matrix.hpp"

namespace biofact::cohort {

enum class Organ : int { liver = 0, spleen = 1, portal_vein = 2, ivc = 3, background = 4 };
inline constexpr int kOrganCount = 5;
inline constexpr std::array<std::string_view, kOrganCount> kOrganNames{"liver", "spleen", "portal_vein", "ivc",
                                                                        "background"};

struct LatentPatient {
    std::string patient_id;
    Vector liver_factor;
    Vector tumor_factor;
    Vector neutral_context;
};

/// One synthetic "volume": S slices, each a grid of P patch tokens.
struct SyntheticStudy {
    std::vector<Matrix> patch_tokens; // S entries of [P x d_tok]
    std::vector<Matrix> occupancy;    // S entries of [P x kOrganCount], entries in [0, 1]

    Eigen::Index slices() const { return static_cast<Eigen::Index>(patch_tokens.size()); }
    Eigen::Index patches() const { return patch_tokens.empty() ? 0 : patch_tokens.front().rows(); }
    Eigen::Index token_dim() const { return patch_tokens.empty() ? 0 : patch_tokens.front().cols(); }
    bool operator==(const SyntheticStudy&) const = default;
};

using TokenSeq = std::vector<int>;

struct ReportSegments {
    TokenSeq liver;
    TokenSeq tumor;
    TokenSeq neutral;
    bool operator==(const ReportSegments&) const = default;
};

struct SurvivalRecord {
    double time_months = 0.0;
    bool event = false;
    bool treated = false;
    int palbi_class = 0;       // 0..2, from liver_factor
    bool bilobar = false;      // from tumor_factor
    int immunoscore_class = 0; // 0..3, from tumor_factor
    bool operator==(const SurvivalRecord&) const = default;
};

struct Patient {
    LatentPatient latent;
    SyntheticStudy study;
    ReportSegments report;
    SurvivalRecord record;
};

/// Report vocabulary layout. Sub-vocabularies are disjoint contiguous ranges.
struct Vocabulary {
    int size = 256;
    int bins = 2;           // quantization levels per latent coordinate
    double bin_width = 1.0; // bins cover [-bins*w/2, bins*w/2], edges clamp
    int liver_offset = 0;
    int tumor_offset = 64;
    int neutral_offset = 128;
    int sub_size = 64;

    bool in_liver(int t) const { return t >= liver_offset && t < liver_offset + sub_size; }
    bool in_tumor(int t) const { return t >= tumor_offset && t < tumor_offset + sub_size; }
    bool in_neutral(int t) const { return t >= neutral_offset && t < neutral_offset + sub_size; }
};

struct CohortConfig {
    int n_patients = 588;
    double train_fraction = 400.0 / 588.0;

    // Hazard model: eta = 2 [pi * beta_liver f(L) + (1 - pi) * beta_tumor g(T)],
    // pi = sigmoid(dominance * (beta_liver f(L) - beta_tumor g(T))).
    // dominance = 0 gives the additive model eta = beta_liver f + beta_tumor g.
    double beta_liver = 1.0;
    double beta_tumor = 1.0;
    double dominance = 2.0;
    double baseline_hazard = 0.03; // per month
    double censoring_rate = 0.01;  // per month; 0 disables censoring
    double treatment_fraction = 0.5;
    double treatment_effect_liver_lowrisk = 0.4; // hazard ratio for treated patients with f(L) < 0

    double noise_std = 0.1;        // per-patch image noise
    double report_noise_std = 0.1; // reading noise added before a report quantizes a factor
    double background_std = 1.0;  // per-study nuisance rendered in background anatomy
    double cross_leak = 0.0;      // fraction of the other factor mixed into each organ's content

    int liver_dim = 4;
    int tumor_dim = 4;
    int neutral_dim = 4;
    int slices = 6;
    int patches_per_slice = 16; // 4 x 4 grid
    int token_dim = 16;

    std::uint64_t seed = 588;

    /// Throws ConfigError on invalid values.
    void validate() const;
    int n_train() const;
};

struct Cohort {
    CohortConfig config;
    Vocabulary vocab;
    std::vector<Patient> patients;
    std::vector<std::size_t> train; // indices into patients
    std::vector<std::size_t> test;
};

/// Documented scalar summaries of the latent axes (affine in the first coordinate).
double liver_score(const LatentPatient& p);
double tumor_score(const LatentPatient& p);
/// Generator's probability that the liver axis dominates the patient's hazard.
double liver_dominance(const LatentPatient& p, const CohortConfig& cfg);
/// True log-hazard eta (before any treatment effect).
double true_log_hazard(const LatentPatient& p, const CohortConfig& cfg);
/// True hazard per month including the treatment effect.
double true_hazard(const LatentPatient& p, bool treated, const CohortConfig& cfg);

int palbi_class_of(const Vector& liver_factor);
bool bilobar_of(const Vector& tumor_factor);
int immunoscore_class_of(const Vector& tumor_factor);

/// Fixed organ occupancy template of slice `s`: [P x kOrganCount].
Matrix occupancy_template(int slice, int patches_per_slice);
/// Patches (within the liver) that can host the lesion on slice `s`.
std::vector<int> lesion_candidates(int slice);

LatentPatient sample_latent(const CohortConfig& cfg, int index);
SyntheticStudy render_image_tokens(const LatentPatient& p, const CohortConfig& cfg);
SyntheticStudy render_image_tokens(const LatentPatient& p, const CohortConfig& cfg, std::uint64_t noise_seed);
ReportSegments render_report(const LatentPatient& p, const CohortConfig& cfg, const Vocabulary& vocab = {});
SurvivalRecord sample_survival(const LatentPatient& p, const CohortConfig& cfg);
/// Same draw from an explicit outcome stream: redraws follow-up and treatment
/// while the latent factors (and hence images and reports) stay fixed.
SurvivalRecord sample_survival(const LatentPatient& p, const CohortConfig& cfg, std::uint64_t stream_seed);

Cohort generate_cohort(const CohortConfig& cfg);

/// Stable content hash of a cohort config (hex).
std::string config_hash(const CohortConfig& cfg);

} // namespace biofact::cohort
