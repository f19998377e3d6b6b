#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <Eigen/QR>

#include "biofact/cohort/cohort.hpp"
#include "biofact/cohort/io.hpp"
#include "biofact/core/errors.hpp"
#include "biofact/core/rng.hpp"
#include "biofact/eval/metrics.hpp"

using namespace biofact;
using namespace biofact::cohort;

namespace {

std::filesystem::path scratch_dir(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("biofact_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

CohortConfig small(int n, std::uint64_t seed = 5)
{
    CohortConfig c;
    c.n_patients = n;
    c.seed = seed;
    return c;
}

// Plain logistic regression by gradient descent; returns weights with bias last.
Vector fit_logistic(const Matrix& x, const std::vector<bool>& y, int iters = 2000, double lr = 0.5)
{
    const auto n = x.rows(), d = x.cols();
    Vector w = Vector::Zero(d + 1);
    for (int it = 0; it < iters; ++it) {
        Vector g = Vector::Zero(d + 1);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double z = x.row(i).dot(w.head(d)) + w[d];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double e = p - (y[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
            g.head(d) += e * x.row(i).transpose();
            g[d] += e;
        }
        w -= lr * g / static_cast<double>(n);
    }
    return w;
}

} // namespace

TEST_SUITE("cohort")
{
    TEST_CASE("default cohort is 588 patients split 400/188")
    {
        const Cohort c = generate_cohort(CohortConfig{});
        CHECK(c.patients.size() == 588);
        CHECK(c.train.size() == 400);
        CHECK(c.test.size() == 188);
        std::vector<bool> seen(588, false);
        for (auto i : c.train) seen[i] = true;
        for (auto i : c.test) {
            CHECK_FALSE(seen[i]);
            seen[i] = true;
        }
        CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
    }

    TEST_CASE("zero patients is a configuration error")
    {
        CHECK_THROWS_AS(generate_cohort(small(0)), ConfigError);
        CohortConfig c;
        c.censoring_rate = -0.1;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }

    TEST_CASE("null hazard model gives exponential times with the baseline mean")
    {
        CohortConfig c = small(2000, 11);
        c.beta_liver = 0.0;
        c.beta_tumor = 0.0;
        c.censoring_rate = 0.0;
        c.treatment_effect_liver_lowrisk = 1.0;
        c.slices = 1;
        double sum = 0.0;
        for (int i = 0; i < c.n_patients; ++i) {
            const auto rec = sample_survival(sample_latent(c, i), c);
            CHECK(rec.event);
            sum += rec.time_months;
        }
        const double mean = sum / c.n_patients;
        const double expected = 1.0 / c.baseline_hazard;
        const double se = expected / std::sqrt(static_cast<double>(c.n_patients));
        CHECK(std::abs(mean - expected) < 3.0 * se);
    }

    TEST_CASE("no censoring means every event is observed")
    {
        CohortConfig c = small(300);
        c.censoring_rate = 0.0;
        for (const auto& p : generate_cohort(c).patients) CHECK(p.record.event);
    }

    TEST_CASE("censored times follow the censoring distribution")
    {
        // With a vanishing event hazard every record is censored at its censoring draw.
        CohortConfig c = small(2000, 3);
        c.baseline_hazard = 1e-12;
        c.beta_liver = c.beta_tumor = 0.0;
        c.censoring_rate = 0.05;
        double sum = 0.0;
        for (int i = 0; i < c.n_patients; ++i) {
            const auto rec = sample_survival(sample_latent(c, i), c);
            CHECK_FALSE(rec.event);
            CHECK(rec.time_months > 0.0);
            sum += rec.time_months;
        }
        const double expected = 1.0 / c.censoring_rate;
        CHECK(std::abs(sum / c.n_patients - expected) < 3.0 * expected / std::sqrt(2000.0));
    }

    TEST_CASE("generation is deterministic")
    {
        const Cohort a = generate_cohort(small(40, 9));
        const Cohort b = generate_cohort(small(40, 9));
        CHECK(write_cohort_csv(a) == write_cohort_csv(b));
        CHECK(write_latent_csv(a) == write_latent_csv(b));
        CHECK(write_studies_bin(a) == write_studies_bin(b));
        CHECK(write_reports_json(a) == write_reports_json(b));
        CHECK(config_hash(a.config) == config_hash(b.config));
        CHECK(write_cohort_csv(a) != write_cohort_csv(generate_cohort(small(40, 10))));
    }

    TEST_CASE("latent factors are standard normal")
    {
        const CohortConfig c = small(3000, 21);
        double s = 0.0, s2 = 0.0;
        long n = 0;
        for (int i = 0; i < c.n_patients; ++i) {
            const auto p = sample_latent(c, i);
            for (const Vector* v : {&p.liver_factor, &p.tumor_factor, &p.neutral_context})
                for (double x : *v) {
                    CHECK(std::isfinite(x));
                    s += x;
                    s2 += x * x;
                    ++n;
                }
        }
        const double mean = s / n, var = s2 / n - mean * mean;
        CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
        CHECK(std::abs(var - 1.0) < 0.03);
    }

    TEST_CASE("occupancy template is a valid partition of each patch")
    {
        for (int s = 0; s < 16; ++s) {
            const Matrix occ = occupancy_template(s, 16);
            CHECK(occ.rows() == 16);
            CHECK(occ.cols() == kOrganCount);
            CHECK((occ.array() >= 0.0).all());
            CHECK((occ.array() <= 1.0).all());
            for (Eigen::Index i = 0; i < occ.rows(); ++i) CHECK(occ.row(i).sum() <= 1.0 + 1e-12);
            for (int k : lesion_candidates(s)) CHECK(occ(k, static_cast<int>(Organ::liver)) == 1.0);
        }
        CHECK_THROWS_AS(occupancy_template(0, 9), ConfigError);
    }

    TEST_CASE("equal liver factors give identical liver patches at zero noise")
    {
        CohortConfig c = small(2);
        c.noise_std = 0.0;
        LatentPatient a = sample_latent(c, 0), b = sample_latent(c, 1);
        b.liver_factor = a.liver_factor;
        const auto sa = render_image_tokens(a, c, 1), sb = render_image_tokens(b, c, 1);
        // The same noise seed places the lesion identically; compare liver-only, lesion-free patches.
        int compared = 0;
        for (int s = 0; s < c.slices; ++s)
            for (int i : {1, 4, 5, 8}) {
                // A patch is lesion-free iff it equals another fully-liver patch of the same slice.
                int same = 0;
                for (int j : {1, 4, 5, 8})
                    if (j != i && sa.patch_tokens[s].row(i) == sa.patch_tokens[s].row(j)) ++same;
                if (same == 0) continue;
                CHECK(sa.patch_tokens[s].row(i) == sb.patch_tokens[s].row(i));
                ++compared;
            }
        CHECK(compared > 0);
    }

    TEST_CASE("rendering is deterministic given the noise seed")
    {
        const CohortConfig c = small(1);
        const auto p = sample_latent(c, 0);
        CHECK(render_image_tokens(p, c, 77) == render_image_tokens(p, c, 77));
        CHECK_FALSE(render_image_tokens(p, c, 77) == render_image_tokens(p, c, 78));
    }

    TEST_CASE("liver factor is linearly recoverable from liver patch tokens")
    {
        CohortConfig c = small(400, 17);
        c.noise_std = 0.1;
        Matrix x(c.n_patients, c.token_dim + 1);
        Matrix y(c.n_patients, c.liver_dim);
        for (int i = 0; i < c.n_patients; ++i) {
            const auto p = sample_latent(c, i);
            const auto st = render_image_tokens(p, c);
            Vector mean = Vector::Zero(c.token_dim);
            int k = 0;
            for (int s = 0; s < c.slices; ++s)
                for (Eigen::Index j = 0; j < st.patches(); ++j)
                    if (st.occupancy[s](j, 0) == 1.0) {
                        mean += st.patch_tokens[s].row(j).transpose();
                        ++k;
                    }
            mean /= k;
            x.row(i).head(c.token_dim) = mean.transpose();
            x(i, c.token_dim) = 1.0;
            y.row(i) = p.liver_factor.transpose();
        }
        const Matrix coef = x.colPivHouseholderQr().solve(y);
        const Matrix resid = y - x * coef;
        for (Eigen::Index k = 0; k < y.cols(); ++k) {
            const double mu = y.col(k).mean();
            const double ss_tot = (y.col(k).array() - mu).square().sum();
            const double r2 = 1.0 - resid.col(k).squaredNorm() / ss_tot;
            CHECK(r2 > 0.9);
        }
    }

    TEST_CASE("report tokens stay in their sub-vocabularies")
    {
        const Cohort c = generate_cohort(small(200));
        const Vocabulary& v = c.vocab;
        for (const auto& p : c.patients) {
            CHECK_FALSE(p.report.liver.empty());
            CHECK_FALSE(p.report.tumor.empty());
            CHECK_FALSE(p.report.neutral.empty());
            for (int t : p.report.liver) CHECK(v.in_liver(t));
            for (int t : p.report.tumor) CHECK(v.in_tumor(t));
            for (int t : p.report.neutral) CHECK(v.in_neutral(t));
            for (const auto* seg : {&p.report.liver, &p.report.tumor, &p.report.neutral})
                for (int t : *seg) {
                    CHECK(t >= 0);
                    CHECK(t < v.size);
                }
        }
    }

    TEST_CASE("identical liver factors give identical liver segments at zero report noise")
    {
        CohortConfig c = small(2);
        c.report_noise_std = 0.0;
        LatentPatient a = sample_latent(c, 0), b = sample_latent(c, 1);
        b.liver_factor = a.liver_factor;
        CHECK(render_report(a, c).liver == render_report(b, c).liver);
        CHECK_FALSE(render_report(a, c).tumor == render_report(b, c).tumor);
    }

    TEST_CASE("tumor segment predicts the sign of the tumor score")
    {
        const CohortConfig c = small(1000, 31);
        const Vocabulary v;
        Matrix bag = Matrix::Zero(c.n_patients, v.sub_size);
        std::vector<bool> y;
        for (int i = 0; i < c.n_patients; ++i) {
            const auto p = sample_latent(c, i);
            for (int t : render_report(p, c, v).tumor) bag(i, t - v.tumor_offset) += 1.0;
            y.push_back(tumor_score(p) > 0.0);
        }
        const int n_fit = 600;
        const Vector w = fit_logistic(bag.topRows(n_fit), std::vector<bool>(y.begin(), y.begin() + n_fit));
        int correct = 0;
        for (int i = n_fit; i < c.n_patients; ++i) {
            const double z = bag.row(i).dot(w.head(v.sub_size)) + w[v.sub_size];
            correct += (z > 0.0) == y[static_cast<std::size_t>(i)] ? 1 : 0;
        }
        CHECK(static_cast<double>(correct) / (c.n_patients - n_fit) > 0.9);
    }

    TEST_CASE("biomarkers depend only on their own factor")
    {
        const CohortConfig c = small(50);
        for (int i = 0; i < c.n_patients; ++i) {
            const auto p = sample_latent(c, i);
            LatentPatient q = p;
            q.tumor_factor = sample_latent(c, i + 100).tumor_factor;
            CHECK(sample_survival(p, c).palbi_class == sample_survival(q, c).palbi_class);
            LatentPatient r = p;
            r.liver_factor = sample_latent(c, i + 100).liver_factor;
            CHECK(sample_survival(p, c).bilobar == sample_survival(r, c).bilobar);
            CHECK(sample_survival(p, c).immunoscore_class == sample_survival(r, c).immunoscore_class);
            const auto rec = sample_survival(p, c);
            CHECK(rec.palbi_class >= 0);
            CHECK(rec.palbi_class <= 2);
            CHECK(rec.immunoscore_class >= 0);
            CHECK(rec.immunoscore_class <= 3);
        }
    }

    TEST_CASE("survival does not depend on rendering noise")
    {
        CohortConfig a = small(60, 4), b = a;
        b.noise_std = 0.7;
        b.background_std = 0.2;
        const Cohort ca = generate_cohort(a), cb = generate_cohort(b);
        for (std::size_t i = 0; i < ca.patients.size(); ++i) CHECK(ca.patients[i].record == cb.patients[i].record);
        CHECK_FALSE(ca.patients[0].study == cb.patients[0].study);
    }

    TEST_CASE("hazards are positive and the treatment benefit is detectable")
    {
        CohortConfig c = small(2000, 13);
        c.slices = 1;
        std::vector<double> tt, tu;
        std::vector<bool> et, eu;
        for (int i = 0; i < c.n_patients; ++i) {
            const auto p = sample_latent(c, i);
            CHECK(true_hazard(p, false, c) > 0.0);
            CHECK(true_hazard(p, true, c) > 0.0);
            if (liver_score(p) >= 0.0) continue;
            CHECK(true_hazard(p, true, c) < true_hazard(p, false, c));
            const auto rec = sample_survival(p, c);
            (rec.treated ? tt : tu).push_back(rec.time_months);
            (rec.treated ? et : eu).push_back(rec.event);
        }
        const auto lr = eval::log_rank_test(tt, et, tu, eu);
        CHECK(lr.p_value < 0.01);
        CHECK(lr.observed_a < lr.expected_a);
    }

    TEST_CASE("export and import round trip")
    {
        const Cohort c = generate_cohort(small(30, 8));
        const auto dir = scratch_dir("roundtrip");
        export_cohort(c, dir.string());
        const Cohort d = import_cohort(dir.string());
        REQUIRE(d.patients.size() == c.patients.size());
        CHECK(config_hash(d.config) == config_hash(c.config));
        CHECK(d.train == c.train);
        CHECK(d.test == c.test);
        for (std::size_t i = 0; i < c.patients.size(); ++i) {
            const auto &a = c.patients[i], &b = d.patients[i];
            CHECK(a.latent.patient_id == b.latent.patient_id);
            CHECK(a.latent.liver_factor == b.latent.liver_factor);
            CHECK(a.latent.tumor_factor == b.latent.tumor_factor);
            CHECK(a.latent.neutral_context == b.latent.neutral_context);
            CHECK(a.study == b.study);
            CHECK(a.report == b.report);
            CHECK(a.record == b.record);
        }
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("truncated or malformed files are parse errors")
    {
        const Cohort c = generate_cohort(small(10, 8));
        const auto dir = scratch_dir("truncated");
        for (const std::string file : {"studies.bin", "cohort.csv", "reports.json", "latent.csv"}) {
            export_cohort(c, dir.string());
            const auto path = dir / file;
            const auto size = std::filesystem::file_size(path);
            std::filesystem::resize_file(path, size / 2);
            CAPTURE(file);
            CHECK_THROWS_AS(import_cohort(dir.string()), ParseError);
        }
        export_cohort(c, dir.string());
        {
            std::ofstream f(dir / "cohort.csv", std::ios::app);
            f << "P99999,abc,1,0,0,0,0\n";
        }
        CHECK_THROWS_AS(import_cohort(dir.string()), ParseError);
        export_cohort(c, dir.string());
        std::filesystem::remove(dir / "reports.json");
        CHECK_THROWS_AS(import_cohort(dir.string()), IoError);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("default cohort exports and re-imports in under five seconds")
    {
        const Cohort c = generate_cohort(CohortConfig{});
        const auto dir = scratch_dir("timing");
        const auto t0 = std::chrono::steady_clock::now();
        export_cohort(c, dir.string());
        const Cohort d = import_cohort(dir.string());
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        CHECK(d.patients.size() == 588);
        CHECK(secs < 5.0);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("config json is strict and lossless")
    {
        CohortConfig c = small(77, 3);
        c.dominance = 0.5;
        c.cross_leak = 0.25;
        const CohortConfig d = cohort_config_from_json(to_json(c));
        CHECK(config_hash(c) == config_hash(d));
        auto j = to_json(c);
        j["bogus"] = 1;
        CHECK_THROWS_AS(cohort_config_from_json(j), ConfigError);
    }
}
