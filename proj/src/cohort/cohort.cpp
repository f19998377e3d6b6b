#include "biofact/cohort/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "biofact/core/rng.hpp"

namespace biofact::cohort {

namespace {

// Organ appearance model. Fixed for every cohort so that cohorts drawn with
// different seeds share one "imaging physics".
constexpr std::uint64_t kAnatomySeed = 0x0b10fac7ULL;
constexpr double kLesionFraction = 0.6;
constexpr int kLesionSlices = 2;

struct Appearance {
    Matrix liver, spleen, lesion, portal_vein, ivc; // [d_tok x factor_dim]
};

Appearance appearance_for(const CohortConfig& cfg)
{
    Rng rng(kAnatomySeed);
    const double s_l = 1.0 / std::sqrt(static_cast<double>(cfg.liver_dim));
    const double s_t = 1.0 / std::sqrt(static_cast<double>(cfg.tumor_dim));
    Appearance a;
    a.liver = rng.normal_matrix(cfg.token_dim, cfg.liver_dim, s_l);
    a.spleen = rng.normal_matrix(cfg.token_dim, cfg.liver_dim, s_l);
    a.lesion = rng.normal_matrix(cfg.token_dim, cfg.tumor_dim, s_t);
    a.portal_vein = rng.normal_matrix(cfg.token_dim, cfg.tumor_dim, s_t);
    a.ivc = rng.normal_matrix(cfg.token_dim, cfg.tumor_dim, s_t);
    return a;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

int quantize(double x, const Vocabulary& vocab)
{
    const double lo = -0.5 * vocab.bins * vocab.bin_width;
    const int bin = static_cast<int>(std::floor((x - lo) / vocab.bin_width));
    return std::clamp(bin, 0, vocab.bins - 1);
}

TokenSeq quantize_factor(const Vector& factor, int offset, const Vocabulary& vocab, double noise, Rng& rng)
{
    TokenSeq out;
    out.reserve(static_cast<std::size_t>(factor.size()));
    for (Eigen::Index k = 0; k < factor.size(); ++k) {
        const double reading = factor[k] + (noise > 0.0 ? noise * rng.normal() : 0.0);
        out.push_back(offset + static_cast<int>(k) * vocab.bins + quantize(reading, vocab));
    }
    return out;
}

std::string make_id(int index)
{
    std::string digits = std::to_string(index + 1);
    return "P" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

} // namespace

void CohortConfig::validate() const
{
    if (n_patients <= 0) throw ConfigError("cohort: n_patients must be > 0");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("cohort: train_fraction must lie in (0, 1)");
    if (!(baseline_hazard > 0.0)) throw ConfigError("cohort: baseline_hazard must be > 0");
    if (censoring_rate < 0.0) throw ConfigError("cohort: censoring_rate must be >= 0");
    if (!(treatment_effect_liver_lowrisk > 0.0)) throw ConfigError("cohort: treatment effect must be > 0");
    if (treatment_fraction < 0.0 || treatment_fraction > 1.0) throw ConfigError("cohort: treatment_fraction in [0, 1]");
    if (noise_std < 0.0 || report_noise_std < 0.0 || background_std < 0.0) throw ConfigError("cohort: noise levels must be >= 0");
    if (liver_dim < 1 || tumor_dim < 1 || neutral_dim < 1) throw ConfigError("cohort: factor dims must be >= 1");
    if (liver_dim > 8 || tumor_dim > 8 || neutral_dim > 8)
        throw ConfigError("cohort: factor dims above 8 overflow the report sub-vocabularies");
    if (tumor_dim != liver_dim && cross_leak != 0.0) throw ConfigError("cohort: cross_leak needs equal factor dims");
    if (slices < 1) throw ConfigError("cohort: slices must be >= 1");
    if (patches_per_slice != 16) throw ConfigError("cohort: the anatomy template is a 4x4 grid (16 patches)");
    if (token_dim < 1) throw ConfigError("cohort: token_dim must be >= 1");
}

int CohortConfig::n_train() const
{
    return static_cast<int>(std::lround(static_cast<double>(n_patients) * train_fraction));
}

double liver_score(const LatentPatient& p) { return p.liver_factor[0]; }
double tumor_score(const LatentPatient& p) { return p.tumor_factor[0]; }

double liver_dominance(const LatentPatient& p, const CohortConfig& cfg)
{
    return sigmoid(cfg.dominance * (cfg.beta_liver * liver_score(p) - cfg.beta_tumor * tumor_score(p)));
}

double true_log_hazard(const LatentPatient& p, const CohortConfig& cfg)
{
    const double pi = liver_dominance(p, cfg);
    return 2.0 * (pi * cfg.beta_liver * liver_score(p) + (1.0 - pi) * cfg.beta_tumor * tumor_score(p));
}

double true_hazard(const LatentPatient& p, bool treated, const CohortConfig& cfg)
{
    double h = cfg.baseline_hazard * std::exp(true_log_hazard(p, cfg));
    if (treated && liver_score(p) < 0.0) h *= cfg.treatment_effect_liver_lowrisk;
    return h;
}

int palbi_class_of(const Vector& l)
{
    const double s = l[0] + 0.5 * (l.size() > 1 ? l[1] : 0.0);
    return s < -0.48 ? 0 : (s > 0.48 ? 2 : 1);
}

bool bilobar_of(const Vector& t)
{
    return (t.size() > 1 ? t[1] : 0.0) + 0.5 * t[0] > 0.0;
}

int immunoscore_class_of(const Vector& t)
{
    const double s = (t.size() > 2 ? t[2] : 0.0) - 0.5 * t[0];
    if (s < -0.754) return 0;
    if (s < 0.0) return 1;
    if (s < 0.754) return 2;
    return 3;
}

Matrix occupancy_template(int slice, int patches_per_slice)
{
    if (patches_per_slice != 16) throw ConfigError("occupancy_template: only the 4x4 grid is defined");
    constexpr int L = 0, SP = 1, PV = 2, IVC = 3, BG = 4;
    Matrix occ = Matrix::Zero(16, kOrganCount);
    auto set = [&](int patch, std::initializer_list<std::pair<int, double>> parts) {
        for (auto [organ, frac] : parts) occ(patch, organ) = frac;
    };
    // Row 0
    const double dome = std::max(0.4, 1.0 - 0.1 * slice);
    set(0, {{L, dome}, {BG, 1.0 - dome}});
    set(1, {{L, 1.0}});
    set(2, {{L, 0.6}, {BG, 0.4}});
    set(3, {{BG, 1.0}});
    // Row 1
    set(4, {{L, 1.0}});
    set(5, {{L, 1.0}});
    if (slice >= 1 && slice <= 4)
        set(6, {{L, 0.5}, {PV, 0.3}, {BG, 0.2}});
    else
        set(6, {{L, 0.5}, {BG, 0.5}});
    set(7, {{SP, 0.8}, {BG, 0.2}});
    // Row 2
    set(8, {{L, 1.0}});
    set(9, {{L, 0.7}, {IVC, 0.3}});
    set(10, {{L, 0.3}, {SP, 0.2}, {BG, 0.5}});
    if (slice >= 1)
        set(11, {{SP, 1.0}});
    else
        set(11, {{BG, 1.0}});
    // Row 3
    set(12, {{BG, 1.0}});
    set(13, {{IVC, 0.6}, {BG, 0.4}});
    set(14, {{BG, 1.0}});
    set(15, {{BG, 1.0}});
    return occ;
}

std::vector<int> lesion_candidates(int /*slice*/)
{
    return {1, 4, 5, 8};
}

LatentPatient sample_latent(const CohortConfig& cfg, int index)
{
    Rng rng(derive_seed(derive_seed(cfg.seed, "latent"), static_cast<std::uint64_t>(index)));
    LatentPatient p;
    p.patient_id = make_id(index);
    p.liver_factor = Vector(cfg.liver_dim);
    p.tumor_factor = Vector(cfg.tumor_dim);
    p.neutral_context = Vector(cfg.neutral_dim);
    for (auto& x : p.liver_factor) x = rng.normal();
    for (auto& x : p.tumor_factor) x = rng.normal();
    for (auto& x : p.neutral_context) x = rng.normal();
    return p;
}

SyntheticStudy render_image_tokens(const LatentPatient& p, const CohortConfig& cfg)
{
    return render_image_tokens(p, cfg, derive_seed(derive_seed(cfg.seed, "render"), p.patient_id));
}

SyntheticStudy render_image_tokens(const LatentPatient& p, const CohortConfig& cfg, std::uint64_t noise_seed)
{
    const Appearance look = appearance_for(cfg);
    Rng rng(noise_seed);
    const Vector liver_signal = cfg.cross_leak == 0.0 ? p.liver_factor
                                                      : Vector(p.liver_factor + cfg.cross_leak * p.tumor_factor);
    const Vector tumor_signal = cfg.cross_leak == 0.0 ? p.tumor_factor
                                                      : Vector(p.tumor_factor + cfg.cross_leak * p.liver_factor);
    const Vector liver_c = look.liver * liver_signal;
    const Vector spleen_c = look.spleen * liver_signal;
    const Vector lesion_c = look.lesion * tumor_signal;
    const Vector pv_c = look.portal_vein * tumor_signal;
    const Vector ivc_c = look.ivc * tumor_signal;

    Vector nuisance(cfg.token_dim);
    for (auto& x : nuisance) x = cfg.background_std * rng.normal();

    // Lesion: one in-liver patch position, spanning kLesionSlices consecutive slices.
    const auto candidates = lesion_candidates(0);
    const int lesion_patch = candidates[rng.below(candidates.size())];
    const int first_slice_max = std::max(0, cfg.slices - kLesionSlices);
    const int lesion_start = static_cast<int>(rng.below(static_cast<std::uint64_t>(first_slice_max + 1)));

    SyntheticStudy study;
    for (int s = 0; s < cfg.slices; ++s) {
        Matrix occ = occupancy_template(s, cfg.patches_per_slice);
        Matrix tokens(cfg.patches_per_slice, cfg.token_dim);
        const bool lesion_slice = s >= lesion_start && s < lesion_start + kLesionSlices;
        for (int i = 0; i < cfg.patches_per_slice; ++i) {
            Vector liver_content = liver_c;
            if (lesion_slice && i == lesion_patch)
                liver_content = (1.0 - kLesionFraction) * liver_c + kLesionFraction * lesion_c;
            Vector t = occ(i, 0) * liver_content + occ(i, 1) * spleen_c + occ(i, 2) * pv_c + occ(i, 3) * ivc_c +
                       occ(i, 4) * nuisance;
            for (Eigen::Index j = 0; j < t.size(); ++j) t[j] += cfg.noise_std * rng.normal();
            tokens.row(i) = t.transpose();
        }
        study.patch_tokens.push_back(std::move(tokens));
        study.occupancy.push_back(std::move(occ));
    }
    return study;
}

ReportSegments render_report(const LatentPatient& p, const CohortConfig& cfg, const Vocabulary& vocab)
{
    Rng rng(derive_seed(derive_seed(cfg.seed, "report"), p.patient_id));
    ReportSegments r;
    r.liver = quantize_factor(p.liver_factor, vocab.liver_offset, vocab, cfg.report_noise_std, rng);
    r.tumor = quantize_factor(p.tumor_factor, vocab.tumor_offset, vocab, cfg.report_noise_std, rng);
    r.neutral = quantize_factor(p.neutral_context, vocab.neutral_offset, vocab, cfg.report_noise_std, rng);
    return r;
}

SurvivalRecord sample_survival(const LatentPatient& p, const CohortConfig& cfg)
{
    return sample_survival(p, cfg, derive_seed(cfg.seed, "survival"));
}

SurvivalRecord sample_survival(const LatentPatient& p, const CohortConfig& cfg, std::uint64_t stream_seed)
{
    Rng rng(derive_seed(stream_seed, p.patient_id));
    SurvivalRecord rec;
    rec.treated = rng.uniform() < cfg.treatment_fraction;
    const double event_time = rng.exponential(true_hazard(p, rec.treated, cfg));
    const double censor_time = cfg.censoring_rate > 0.0 ? rng.exponential(cfg.censoring_rate)
                                                        : std::numeric_limits<double>::infinity();
    rec.event = event_time < censor_time;
    rec.time_months = rec.event ? event_time : censor_time;
    rec.palbi_class = palbi_class_of(p.liver_factor);
    rec.bilobar = bilobar_of(p.tumor_factor);
    rec.immunoscore_class = immunoscore_class_of(p.tumor_factor);
    return rec;
}

Cohort generate_cohort(const CohortConfig& cfg)
{
    cfg.validate();
    Cohort c;
    c.config = cfg;
    c.patients.reserve(static_cast<std::size_t>(cfg.n_patients));
    for (int i = 0; i < cfg.n_patients; ++i) {
        Patient pt;
        pt.latent = sample_latent(cfg, i);
        pt.study = render_image_tokens(pt.latent, cfg);
        pt.report = render_report(pt.latent, cfg, c.vocab);
        pt.record = sample_survival(pt.latent, cfg);
        c.patients.push_back(std::move(pt));
    }
    std::vector<std::size_t> order(c.patients.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng split_rng(derive_seed(cfg.seed, "split"));
    split_rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(std::clamp(cfg.n_train(), 1, std::max(1, cfg.n_patients - 1)));
    c.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, order.size())));
    c.test.assign(order.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, order.size())), order.end());
    std::sort(c.train.begin(), c.train.end());
    std::sort(c.test.begin(), c.test.end());
    return c;
}

} // namespace biofact::cohort
