#include "biofact/pipeline/artifacts.hpp"

#include <algorithm>
#include <filesystem>

#include "biofact/core/errors.hpp"
#include "biofact/core/rng.hpp"
#include "biofact/core/text.hpp"
#include "biofact/eval/subgroups.hpp"

namespace biofact::pipeline {

using nlohmann::json;
using pretrain::PathwayId;

void write_output(const std::string& path, const std::string& content)
{
    const std::filesystem::path p(path);
    std::error_code ec;
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
    }
    write_file(path, content);
}

json read_json_file(const std::string& path)
{
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
}

std::string pretrain_run_hash(const ExperimentConfig& cfg, PathwayId p, pretrain::SegmentationMode text,
                              bool anatomical_masking, std::uint64_t run_seed)
{
    const bool general = p == PathwayId::general;
    json k{{"cohort", cohort::config_hash(cfg.cohort)},
           {"pretrain", pretrain::to_json(cfg.pretrain)},
           {"encoder", to_json(cfg).at("encoder")},
           {"pathway", pretrain::to_string(p)},
           {"text", general ? "identity" : pretrain::to_string(text)},
           {"masking", general ? true : anatomical_masking},
           {"seed", run_seed}};
    return hex64(fnv1a(k.dump()));
}

pretrain::PathwayCheckpoint make_checkpoint(const ExperimentConfig& cfg, const TrainedEncoders& enc, PathwayId p,
                                            std::uint64_t run_seed)
{
    const auto& t = enc.pathways[static_cast<std::size_t>(p)];
    pretrain::PathwayCheckpoint ck;
    ck.pathway = p;
    ck.dims = enc.stack.dims;
    ck.config = cfg.pretrain;
    ck.config_hash = experiment_hash(cfg);
    ck.cohort_hash = cohort::config_hash(cfg.cohort);
    ck.run_hash = pretrain_run_hash(cfg, p, t.text, enc.stack.anatomical_masking, run_seed);
    ck.backbone_seed = enc.backbone_seed;
    ck.backbone_checksum = hex64(enc.stack.backbone.checksum());
    ck.anatomical_masking = p == PathwayId::general ? true : enc.stack.anatomical_masking;
    ck.segmentation = pretrain::to_string(t.text);
    ck.loss_curve = t.result.epoch_loss;
    ck.heldout_loss = t.result.heldout_loss;
    ck.heldout_top1 = t.result.heldout_top1;
    ck.heldout_baseline = t.result.heldout_baseline;
    ck.adapter = enc.stack.adapter(p);
    return ck;
}

std::string loss_csv(const pretrain::PathwayCheckpoint& ck, const std::string& config_hash)
{
    std::string out = "# config_hash=" + config_hash + " cohort_hash=" + ck.cohort_hash + "\n";
    out += "epoch,loss\n";
    for (std::size_t e = 0; e < ck.loss_curve.size(); ++e)
        out += std::to_string(e + 1) + "," + format_double(ck.loss_curve[e]) + "\n";
    return out;
}

TrainedEncoders restore_encoders(const std::array<pretrain::PathwayCheckpoint, 3>& cks, const ExperimentConfig& cfg,
                                 Variant variant, std::uint64_t run_seed)
{
    const VariantSpec spec = variant_spec(variant);
    const std::string cohort_hash = cohort::config_hash(cfg.cohort);
    TrainedEncoders out;
    out.backbone_seed = cks[0].backbone_seed;
    out.stack = pretrain::EncoderStack::init(cfg.encoder, out.backbone_seed, derive_seed(run_seed, "adapters"));
    out.stack.anatomical_masking = spec.anatomical_masking;
    const std::string backbone = hex64(out.stack.backbone.checksum());

    for (PathwayId p : pretrain::kPathways) {
        const auto slot = static_cast<std::size_t>(p);
        const auto& ck = cks[slot];
        const std::string name = pretrain::to_string(p);
        if (ck.pathway != p)
            throw ConsistencyError("checkpoint slot " + name + " holds pathway " + pretrain::to_string(ck.pathway));
        if (ck.cohort_hash != cohort_hash)
            throw ConsistencyError(name + " checkpoint cohort hash " + ck.cohort_hash + " does not match cohort " +
                                   cohort_hash);
        if (ck.backbone_checksum != backbone)
            throw ConsistencyError(name + " checkpoint backbone checksum " + ck.backbone_checksum +
                                   " does not match " + backbone);
        const auto text = p == PathwayId::general ? pretrain::SegmentationMode::identity : spec.pretrain_text;
        const std::string expected = pretrain_run_hash(cfg, p, text, spec.anatomical_masking, run_seed);
        if (ck.run_hash != expected)
            throw ConsistencyError(name + " checkpoint run hash " + ck.run_hash + " does not match configuration " +
                                   expected + " (variant " + to_string(variant) + ", seed " +
                                   std::to_string(run_seed) + ")");
        PathwayTraining& t = out.pathways[slot];
        t.adapter = ck.adapter;
        t.text = text;
        t.result.epoch_loss = ck.loss_curve;
        t.result.heldout_loss = ck.heldout_loss;
        t.result.heldout_top1 = ck.heldout_top1;
        t.result.heldout_baseline = ck.heldout_baseline;
        out.stack.adapter(p) = ck.adapter;
    }
    return out;
}

json to_json(HeadArtifact& a)
{
    return json{{"format", "biofact-head"},
                {"version", 1},
                {"config_hash", a.config_hash},
                {"cohort_hash", a.cohort_hash},
                {"variant", to_string(a.variant)},
                {"seed", a.seed},
                {"epoch_loss", a.training.epoch_loss},
                {"full_loss", a.training.full_loss},
                {"head", survival::to_json(a.head)}};
}

HeadArtifact head_artifact_from_json(const json& j)
{
    try {
        if (j.at("format").get<std::string>() != "biofact-head") throw ParseError("head: unexpected format tag");
        if (j.at("version").get<int>() != 1) throw ParseError("head: unsupported version");
        HeadArtifact a;
        a.config_hash = j.at("config_hash").get<std::string>();
        a.cohort_hash = j.at("cohort_hash").get<std::string>();
        a.variant = parse_variant(j.at("variant").get<std::string>());
        a.seed = j.at("seed").get<std::uint64_t>();
        a.training.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
        a.training.full_loss = j.at("full_loss").get<std::vector<double>>();
        a.head = survival::head_from_json(j.at("head"));
        return a;
    } catch (const json::exception& e) {
        throw ParseError(std::string("head: ") + e.what());
    } catch (const ConfigError& e) {
        throw ParseError(std::string("head: ") + e.what());
    }
}

VariantRun rebuild_run(const cohort::Cohort& cohort, const TrainedEncoders& encoders, const HeadArtifact& head)
{
    const VariantSpec spec = variant_spec(head.variant);
    VariantRun run;
    run.variant = head.variant;
    run.seed = head.seed;
    run.encoders = encoders;
    run.head = head.head;
    run.training = head.training;
    const auto train_z = embed_patients(encoders.stack, cohort, cohort.train, spec.train_text, head.seed);
    const auto test_z = embed_patients(encoders.stack, cohort, cohort.test, spec.inference_text, head.seed);
    run.embeddings.resize(cohort.patients.size());
    for (std::size_t k = 0; k < cohort.train.size(); ++k) run.embeddings[cohort.train[k]] = train_z[k];
    for (std::size_t k = 0; k < cohort.test.size(); ++k) run.embeddings[cohort.test[k]] = test_z[k];
    run.risks = survival::risk_forward_all(run.embeddings, run.head);
    return run;
}

namespace {

std::string file_tag(std::string name)
{
    for (char& c : name)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    return name;
}

std::string with_hash(std::string svg, const std::string& hash)
{
    const auto eol = svg.find('\n');
    svg.insert(eol == std::string::npos ? svg.size() : eol + 1, "<!-- config_hash=" + hash + " -->\n");
    return svg;
}

} // namespace

std::vector<std::pair<std::string, std::string>> km_plots(const cohort::Cohort& cohort, const ExperimentConfig& cfg,
                                                          const VariantRun& run)
{
    const std::string hash = experiment_hash(cfg);
    std::vector<double> train_t;
    std::vector<bool> train_e;
    Vector train_r(static_cast<Eigen::Index>(cohort.train.size()));
    for (std::size_t k = 0; k < cohort.train.size(); ++k) {
        const auto& pt = cohort.patients[cohort.train[k]];
        train_r[static_cast<Eigen::Index>(k)] = run.risks[cohort.train[k]].total_risk;
        train_t.push_back(pt.record.time_months);
        train_e.push_back(pt.record.event);
    }
    const double threshold = eval::risk_threshold_stratify(train_r, train_t, train_e).threshold;

    std::vector<cohort::SurvivalRecord> records;
    std::vector<survival::Phenotype> pheno;
    Vector risks(static_cast<Eigen::Index>(cohort.test.size()));
    double max_time = 0.0;
    for (std::size_t k = 0; k < cohort.test.size(); ++k) {
        const std::size_t i = cohort.test[k];
        records.push_back(cohort.patients[i].record);
        pheno.push_back(survival::stratify_phenotype(run.risks[i].gate));
        risks[static_cast<Eigen::Index>(k)] = run.risks[i].total_risk;
        max_time = std::max(max_time, records.back().time_months);
    }

    auto curve_of = [&](auto&& keep) {
        std::vector<double> t;
        std::vector<bool> e;
        for (std::size_t k = 0; k < records.size(); ++k)
            if (keep(k)) {
                t.push_back(records[k].time_months);
                e.push_back(records[k].event);
            }
        return eval::kaplan_meier(t, e);
    };

    std::vector<std::pair<std::string, std::string>> out;
    std::vector<std::pair<std::string, eval::KMCurve>> curves;
    for (auto ph : {survival::Phenotype::liver_driven, survival::Phenotype::tumor_driven}) {
        const auto n = std::count(pheno.begin(), pheno.end(), ph);
        if (n > 0) curves.emplace_back(survival::to_string(ph), curve_of([&](std::size_t k) { return pheno[k] == ph; }));
    }
    if (!curves.empty())
        out.emplace_back("km_phenotype.svg", with_hash(eval::km_svg("Phenotypes (test)", curves, max_time), hash));

    curves.clear();
    for (bool high : {false, true}) {
        auto keep = [&](std::size_t k) { return (risks[static_cast<Eigen::Index>(k)] > threshold) == high; };
        int n = 0;
        for (std::size_t k = 0; k < records.size(); ++k) n += keep(k) ? 1 : 0;
        if (n > 0) curves.emplace_back(high ? "high risk" : "low risk", curve_of(keep));
    }
    if (!curves.empty())
        out.emplace_back("km_risk_group.svg", with_hash(eval::km_svg("Risk groups (test)", curves, max_time), hash));

    for (const auto& row : eval::treatment_subgroup_analysis(records, pheno, risks, threshold)) {
        if (row.empty) continue;
        curves = {{"treated", row.treated.km}, {"untreated", row.untreated.km}};
        out.emplace_back("km_" + file_tag(row.name) + ".svg",
                         with_hash(eval::km_svg("Treatment: " + row.name, curves, max_time), hash));
    }
    return out;
}

} // namespace biofact::pipeline
