#include "biofact/pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "biofact/cohort/io.hpp"
#include "biofact/core/errors.hpp"
#include "biofact/core/rng.hpp"
#include "biofact/core/text.hpp"
#include "biofact/eval/metrics.hpp"
#include "biofact/eval/subgroups.hpp"

namespace biofact::pipeline {

using nlohmann::json;
using pretrain::PathwayId;
using pretrain::SegmentationMode;

namespace {

std::uint64_t pathway_seed(std::uint64_t run_seed, PathwayId p)
{
    return derive_seed(run_seed, "pretrain-" + pretrain::to_string(p));
}

std::string cache_key(const ExperimentConfig& cfg, PathwayId p, SegmentationMode text, bool masking,
                      std::uint64_t run_seed)
{
    const bool general = p == PathwayId::general;
    json k{{"cohort", cohort::config_hash(cfg.cohort)},
           {"pretrain", pretrain::to_json(cfg.pretrain)},
           {"encoder", to_json(cfg).at("encoder")},
           {"pathway", pretrain::to_string(p)},
           {"text", general ? "identity" : pretrain::to_string(text)},
           {"masking", general ? true : masking},
           {"seed", run_seed}};
    return k.dump();
}

} // namespace

cohort::TokenSeq pathway_text(const cohort::Patient& p, PathwayId pathway, SegmentationMode text,
                              std::uint64_t run_seed)
{
    if (pathway == PathwayId::general || text == SegmentationMode::identity)
        return pretrain::pathway_tokens(p.report, pathway);
    const pretrain::SyntheticSegmenter seg(text, derive_seed(run_seed, "segmenter"));
    return pretrain::pathway_tokens(pretrain::segment_report(p.report, seg, p.latent.patient_id), pathway);
}

TrainedEncoders train_encoders(const cohort::Cohort& cohort, const ExperimentConfig& cfg, SegmentationMode text,
                               bool anatomical_masking, std::uint64_t run_seed, PretrainCache* cache,
                               const std::array<bool, 3>& which)
{
    TrainedEncoders out;
    out.backbone_seed = derive_seed(run_seed, "backbone");
    out.stack = pretrain::EncoderStack::init(cfg.encoder, out.backbone_seed, derive_seed(run_seed, "adapters"));
    out.stack.anatomical_masking = anatomical_masking;

    for (PathwayId p : pretrain::kPathways) {
        const auto slot = static_cast<std::size_t>(p);
        PathwayTraining& t = out.pathways[slot];
        t.text = p == PathwayId::general ? SegmentationMode::identity : text;
        if (!which[slot]) continue;
        const std::string key = cache_key(cfg, p, text, anatomical_masking, run_seed);
        if (cache) {
            auto it = cache->find(key);
            if (it != cache->end()) {
                t = it->second;
                out.stack.adapter(p) = t.adapter;
                continue;
            }
        }
        auto pairs_for = [&](const std::vector<std::size_t>& idx) {
            std::vector<pretrain::PretrainPair> pairs;
            pairs.reserve(idx.size());
            for (std::size_t i : idx) {
                const cohort::Patient& pt = cohort.patients[i];
                pairs.push_back(pretrain::make_pair(pt.study, pathway_text(pt, p, text, run_seed), p, out.stack));
            }
            return pairs;
        };
        const auto train = pairs_for(cohort.train);
        const auto heldout = pairs_for(cohort.test);
        t.result = pretrain::pretrain_pathway(out.stack, p, train, heldout, cfg.pretrain, pathway_seed(run_seed, p));
        t.adapter = out.stack.adapter(p);
        if (cache) cache->emplace(key, t);
    }
    return out;
}

std::vector<survival::PathwayEmbeddings> embed_patients(const pretrain::EncoderStack& stack,
                                                        const cohort::Cohort& cohort,
                                                        const std::vector<std::size_t>& indices,
                                                        SegmentationMode text, std::uint64_t run_seed)
{
    std::vector<survival::PathwayEmbeddings> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) {
        const cohort::Patient& pt = cohort.patients[i];
        std::array<Vector, 3> z;
        for (PathwayId p : pretrain::kPathways) {
            const pretrain::PathwayAdapter& a = stack.adapter(p);
            const Vector img =
                pretrain::encode_image_features(pretrain::prepare_study_features(pt.study, p, stack), stack, a);
            const Vector txt = pretrain::encode_text_features(
                pretrain::pooled_text_features(pathway_text(pt, p, text, run_seed), stack), stack, a);
            z[static_cast<std::size_t>(p)] = pretrain::fuse_embeddings(img, txt, stack.dims.report_weight);
        }
        out.push_back({z[0], z[1], z[2]});
    }
    return out;
}

VariantRun run_stage2(const cohort::Cohort& cohort, const ExperimentConfig& cfg, Variant variant,
                      std::uint64_t run_seed, const TrainedEncoders& encoders)
{
    const VariantSpec spec = variant_spec(variant);
    VariantRun run;
    run.variant = variant;
    run.seed = run_seed;
    run.encoders = encoders;

    const auto train_z = embed_patients(encoders.stack, cohort, cohort.train, spec.train_text, run_seed);
    const auto test_z = embed_patients(encoders.stack, cohort, cohort.test, spec.inference_text, run_seed);
    run.embeddings.resize(cohort.patients.size());
    for (std::size_t k = 0; k < cohort.train.size(); ++k) run.embeddings[cohort.train[k]] = train_z[k];
    for (std::size_t k = 0; k < cohort.test.size(); ++k) run.embeddings[cohort.test[k]] = test_z[k];

    std::vector<cohort::SurvivalRecord> train_records;
    for (std::size_t i : cohort.train) train_records.push_back(cohort.patients[i].record);

    run.head = survival::SurvivalHeadParams::init(spec.head, cfg.head, derive_seed(run_seed, "head"));
    run.training = survival::train_survival(run.head, train_z, train_records, cfg.survival,
                                            derive_seed(run_seed, "survival"));
    run.risks = survival::risk_forward_all(run.embeddings, run.head);
    return run;
}

VariantRun run_variant(const cohort::Cohort& cohort, const ExperimentConfig& cfg, Variant variant,
                       std::uint64_t run_seed, PretrainCache* cache)
{
    const VariantSpec spec = variant_spec(variant);
    const TrainedEncoders enc =
        train_encoders(cohort, cfg, spec.pretrain_text, spec.anatomical_masking, run_seed, cache);
    return run_stage2(cohort, cfg, variant, run_seed, enc);
}

std::string horizon_key(double h)
{
    return format_double(h);
}

namespace {

json km_json(const eval::KMCurve& km)
{
    return json{{"event_times", km.event_times},
                {"survival_probs", km.survival_probs},
                {"at_risk", km.at_risk},
                {"n_events", km.n_events}};
}

json logrank_json(const std::optional<eval::LogRankResult>& t)
{
    if (!t) return nullptr;
    return json{{"chi_square", t->chi_square},
                {"p_value", t->p_value},
                {"observed_a", t->observed_a},
                {"expected_a", t->expected_a}};
}

json probe_json(const eval::SpecializationResult& r)
{
    return json{{"auc_liver", r.auc_liver},
                {"auc_tumor", r.auc_tumor},
                {"delta", r.delta},
                {"p_value", r.p_value},
                {"exact", r.exact},
                {"fold_aucs_liver", r.liver.fold_aucs},
                {"fold_aucs_tumor", r.tumor.fold_aucs}};
}

} // namespace

json evaluate_run(const cohort::Cohort& cohort, const ExperimentConfig& cfg, const VariantRun& run)
{
    auto gather = [&](const std::vector<std::size_t>& idx, Vector& risks, std::vector<double>& times,
                      std::vector<bool>& events, Vector* oracle) {
        risks.resize(static_cast<Eigen::Index>(idx.size()));
        if (oracle) oracle->resize(static_cast<Eigen::Index>(idx.size()));
        times.clear();
        events.clear();
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto& pt = cohort.patients[idx[k]];
            risks[static_cast<Eigen::Index>(k)] = run.risks[idx[k]].total_risk;
            if (oracle) (*oracle)[static_cast<Eigen::Index>(k)] = cohort::true_log_hazard(pt.latent, cohort.config);
            times.push_back(pt.record.time_months);
            events.push_back(pt.record.event);
        }
    };
    Vector test_r, train_r, oracle_r;
    std::vector<double> test_t, train_t;
    std::vector<bool> test_e, train_e;
    gather(cohort.test, test_r, test_t, test_e, &oracle_r);
    gather(cohort.train, train_r, train_t, train_e, nullptr);

    json m;
    m["seed"] = run.seed;
    json auc = json::object(), oracle = json::object(), auc_errors = json::object();
    for (double h : cfg.eval.horizons_months) {
        const std::string key = horizon_key(h);
        try {
            auc[key] = eval::time_dependent_auc(test_r, test_t, test_e, h);
            oracle[key] = eval::time_dependent_auc(oracle_r, test_t, test_e, h);
        } catch (const UndefinedError& e) {
            auc[key] = nullptr;
            auc_errors[key] = e.what();
        }
    }
    m["auc"] = auc;
    m["oracle_auc"] = oracle;
    if (!auc_errors.empty()) m["auc_errors"] = auc_errors;
    try {
        m["c_index_test"] = eval::concordance_index(test_r, test_t, test_e);
        m["c_index_train"] = eval::concordance_index(train_r, train_t, train_e);
    } catch (const UndefinedError& e) {
        m["c_index_error"] = e.what();
    }

    json pre = json::object();
    for (PathwayId p : pretrain::kPathways) {
        const auto& t = run.encoders.pathways[static_cast<std::size_t>(p)];
        pre[pretrain::to_string(p)] =
            json{{"final_loss", t.result.epoch_loss.empty() ? json(nullptr) : json(t.result.epoch_loss.back())},
                 {"heldout_loss", t.result.heldout_loss},
                 {"heldout_top1", t.result.heldout_top1},
                 {"heldout_baseline", t.result.heldout_baseline},
                 {"text", pretrain::to_string(t.text)}};
    }
    m["pretrain"] = pre;
    m["survival"] = json{{"final_train_loss",
                          run.training.full_loss.empty() ? json(nullptr) : json(run.training.full_loss.back())}};

    // Phenotypes, risk groups and treatment subgroups on the test split.
    const auto stump = eval::risk_threshold_stratify(train_r, train_t, train_e);
    std::vector<cohort::SurvivalRecord> test_records;
    std::vector<survival::Phenotype> test_pheno;
    int n_liver = 0;
    for (std::size_t i : cohort.test) {
        test_records.push_back(cohort.patients[i].record);
        test_pheno.push_back(survival::stratify_phenotype(run.risks[i].gate));
        n_liver += test_pheno.back() == survival::Phenotype::liver_driven ? 1 : 0;
    }
    m["risk_threshold"] = json{{"threshold", stump.threshold},
                               {"chi_square", stump.chi_square},
                               {"degenerate", stump.degenerate},
                               {"warning", stump.warning}};
    m["phenotypes"] = json{{"liver_driven", n_liver}, {"tumor_driven", static_cast<int>(cohort.test.size()) - n_liver}};
    json strat = json::array();
    for (const auto& row : eval::stratification_tests(test_records, test_pheno, test_r, stump.threshold))
        strat.push_back(json{{"name", row.name},
                             {"n_a", row.n_a},
                             {"n_b", row.n_b},
                             {"test", logrank_json(row.test)},
                             {"note", row.note}});
    m["stratification"] = strat;
    json subs = json::array();
    for (const auto& row : eval::treatment_subgroup_analysis(test_records, test_pheno, test_r, stump.threshold))
        subs.push_back(json{{"subgroup", row.name},
                            {"n", row.n},
                            {"n_treated", row.treated.n},
                            {"n_untreated", row.untreated.n},
                            {"events_treated", row.treated.events},
                            {"events_untreated", row.untreated.events},
                            {"empty", row.empty},
                            {"low_power", row.low_power},
                            {"log_rank", logrank_json(row.test)},
                            {"note", row.note},
                            {"km_treated", km_json(row.treated.km)},
                            {"km_untreated", km_json(row.untreated.km)}});
    m["subgroups"] = subs;

    // Biomarker probes on every patient's frozen pathway embeddings.
    const auto n = static_cast<Eigen::Index>(cohort.patients.size());
    const Eigen::Index d = cfg.encoder.embed_dim;
    Matrix zl(n, d), zt(n, d);
    std::vector<int> palbi, bilobar, immuno;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& e = run.embeddings[static_cast<std::size_t>(i)];
        zl.row(i) = e.z_liver.transpose();
        zt.row(i) = e.z_tumor.transpose();
        const auto& r = cohort.patients[static_cast<std::size_t>(i)].record;
        palbi.push_back(r.palbi_class);
        bilobar.push_back(r.bilobar ? 1 : 0);
        immuno.push_back(r.immunoscore_class);
    }
    json probes = json::object();
    const std::pair<const char*, const std::vector<int>*> labels[] = {
        {"palbi", &palbi}, {"bilobar", &bilobar}, {"immunoscore", &immuno}};
    for (const auto& [name, y] : labels) {
        try {
            probes[name] = probe_json(eval::probe_specialization_test(zl, zt, *y, cfg.eval));
        } catch (const InputError& e) {
            probes[name] = json{{"error", e.what()}};
        }
    }
    m["probes"] = probes;
    return m;
}

double run_auc(const json& run_metrics, double horizon)
{
    const auto& v = run_metrics.at("auc").at(horizon_key(horizon));
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

json metrics_document(const ExperimentConfig& cfg, Variant variant, const std::vector<json>& runs)
{
    json summary = json::object();
    for (double h : cfg.eval.horizons_months) {
        std::vector<double> vals;
        for (const auto& r : runs) {
            const double a = run_auc(r, h);
            if (std::isfinite(a)) vals.push_back(a);
        }
        if (vals.empty()) {
            summary[horizon_key(h)] = nullptr;
            continue;
        }
        double mean = 0.0;
        for (double a : vals) mean += a;
        mean /= static_cast<double>(vals.size());
        double var = 0.0;
        for (double a : vals) var += (a - mean) * (a - mean);
        const double sd = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
        summary[horizon_key(h)] = json{{"mean", mean}, {"std", sd}, {"n", vals.size()}};
    }
    return json{{"format", "biofact-metrics"},
                {"version", 1},
                {"config_hash", experiment_hash(cfg)},
                {"cohort_hash", cohort::config_hash(cfg.cohort)},
                {"variant", to_string(variant)},
                {"seeds", cfg.run_seeds()},
                {"auc_summary", summary},
                {"runs", runs}};
}

std::string risks_csv(const cohort::Cohort& cohort, const VariantRun& run, const std::string& config_hash)
{
    std::string out = "# config_hash=" + config_hash + "\n";
    out += "patient_id,split,base_risk,delta_r_liver,delta_r_tumor,alpha,w_liver,total_risk,phenotype\n";
    for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
        const auto& r = run.risks[i];
        const bool train = std::binary_search(cohort.train.begin(), cohort.train.end(), i);
        out += cohort.patients[i].latent.patient_id + "," + (train ? "train" : "test") + "," +
               format_double(r.base_risk) + "," + format_double(r.delta_r_liver) + "," +
               format_double(r.delta_r_tumor) + "," + format_double(r.alpha) + "," + format_double(r.gate.w_liver) +
               "," + format_double(r.total_risk) + "," + survival::to_string(survival::stratify_phenotype(r.gate)) +
               "\n";
    }
    return out;
}

} // namespace biofact::pipeline
