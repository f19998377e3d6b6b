#include <array>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "biofact/cohort/io.hpp"
#include "biofact/core/errors.hpp"
#include "biofact/pipeline/artifacts.hpp"

namespace {

using namespace biofact;
using nlohmann::json;
using pipeline::ExperimentConfig;
using pipeline::Variant;
using pretrain::PathwayId;

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kConsistency = 4 };

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> variants;
    std::string pathway = "all";
    std::string output;
    bool plots = false;
};

struct Context {
    ExperimentConfig cfg;
    std::string out;

    std::string path(const std::string& name) const { return out + "/" + name; }
    std::string cohort_dir() const { return path("cohort"); }
    std::string checkpoint_path(PathwayId p) const { return path("checkpoint_" + pretrain::to_string(p) + ".json"); }

    /// The configuration of the single run at `seed`.
    ExperimentConfig run_config(std::uint64_t seed) const
    {
        ExperimentConfig c = cfg;
        c.seed = seed;
        c.n_runs = 1;
        return c;
    }
};

Context make_context(const Options& o)
{
    Context ctx;
    if (!o.config.empty()) ctx.cfg = pipeline::load_experiment_config(o.config);
    if (o.seed) ctx.cfg.seed = *o.seed;
    if (o.variants.size() == 1) ctx.cfg.variant = pipeline::parse_variant(o.variants.front());
    if (!o.output.empty()) ctx.cfg.output_dir = o.output;
    ctx.cfg.validate();
    ctx.out = ctx.cfg.output_dir;
    return ctx;
}

void note(const std::string& s)
{
    std::cerr << s << '\n';
}

cohort::Cohort load_cohort(const Context& ctx)
{
    cohort::Cohort c = cohort::import_cohort(ctx.cohort_dir());
    const std::string on_disk = cohort::config_hash(c.config);
    const std::string expected = cohort::config_hash(ctx.cfg.cohort);
    if (on_disk != expected)
        throw ConsistencyError("cohort in " + ctx.cohort_dir() + " has hash " + on_disk +
                               " but the configuration expects " + expected + "; rerun generate");
    return c;
}

std::vector<PathwayId> selected_pathways(const std::string& name)
{
    if (name == "all") return {pretrain::kPathways.begin(), pretrain::kPathways.end()};
    return {pretrain::parse_pathway(name)};
}

void write_checkpoints(const Context& ctx, const ExperimentConfig& run_cfg, const pipeline::TrainedEncoders& enc,
                       const std::vector<PathwayId>& which)
{
    const std::string hash = pipeline::experiment_hash(run_cfg);
    for (PathwayId p : which) {
        const auto ck = pipeline::make_checkpoint(run_cfg, enc, p, run_cfg.seed);
        pipeline::write_output(ctx.checkpoint_path(p), pretrain::to_json(ck).dump(1) + "\n");
        pipeline::write_output(ctx.path("loss_" + pretrain::to_string(p) + ".csv"), pipeline::loss_csv(ck, hash));
        note("pathway " + pretrain::to_string(p) + ": held-out loss " + std::to_string(ck.heldout_loss) +
             " (chance " + std::to_string(ck.heldout_baseline) + "), top-1 " + std::to_string(ck.heldout_top1));
    }
}

void write_stage2(const Context& ctx, const ExperimentConfig& run_cfg, const cohort::Cohort& cohort,
                  pipeline::VariantRun& run)
{
    pipeline::HeadArtifact a{run.variant, run.seed, pipeline::experiment_hash(run_cfg),
                             cohort::config_hash(run_cfg.cohort), run.head, run.training};
    pipeline::write_output(ctx.path("head.json"), pipeline::to_json(a).dump(1) + "\n");
    pipeline::write_output(ctx.path("risks.csv"), pipeline::risks_csv(cohort, run, a.config_hash));
}

void write_plots(const Context& ctx, const ExperimentConfig& run_cfg, const cohort::Cohort& cohort,
                 const pipeline::VariantRun& run)
{
    for (const auto& [name, svg] : pipeline::km_plots(cohort, run_cfg, run)) pipeline::write_output(ctx.path(name), svg);
}

void print_summary(const json& doc)
{
    std::cout << "variant " << doc.at("variant").get<std::string>() << "  config_hash "
              << doc.at("config_hash").get<std::string>() << '\n';
    for (const auto& [h, s] : doc.at("auc_summary").items()) {
        if (s.is_null()) {
            std::cout << "  AUC@" << h << "mo  undefined\n";
            continue;
        }
        std::printf("  AUC@%smo  %.4f +/- %.4f (n=%d)\n", h.c_str(), s.at("mean").get<double>(),
                    s.at("std").get<double>(), s.at("n").get<int>());
    }
}

int cmd_generate(const Context& ctx)
{
    const cohort::Cohort c = cohort::generate_cohort(ctx.cfg.cohort);
    cohort::export_cohort(c, ctx.cohort_dir());
    std::cout << "cohort " << ctx.cohort_dir() << "  patients " << c.patients.size() << "  train " << c.train.size()
              << "  test " << c.test.size() << "  hash " << cohort::config_hash(c.config) << '\n';
    return kOk;
}

int cmd_pretrain(const Context& ctx, const Options& o)
{
    const cohort::Cohort c = load_cohort(ctx);
    const ExperimentConfig run_cfg = ctx.run_config(ctx.cfg.seed);
    const auto spec = pipeline::variant_spec(run_cfg.variant);
    const auto which = selected_pathways(o.pathway);
    std::array<bool, 3> mask{false, false, false};
    for (PathwayId p : which) mask[static_cast<std::size_t>(p)] = true;
    const auto enc =
        pipeline::train_encoders(c, run_cfg, spec.pretrain_text, spec.anatomical_masking, run_cfg.seed, nullptr, mask);
    write_checkpoints(ctx, run_cfg, enc, which);
    return kOk;
}

pipeline::TrainedEncoders load_encoders(const Context& ctx, const ExperimentConfig& run_cfg)
{
    std::array<pretrain::PathwayCheckpoint, 3> cks;
    for (PathwayId p : pretrain::kPathways)
        cks[static_cast<std::size_t>(p)] = pretrain::checkpoint_from_json(pipeline::read_json_file(ctx.checkpoint_path(p)));
    return pipeline::restore_encoders(cks, run_cfg, run_cfg.variant, run_cfg.seed);
}

int cmd_train_survival(const Context& ctx)
{
    const cohort::Cohort c = load_cohort(ctx);
    const ExperimentConfig run_cfg = ctx.run_config(ctx.cfg.seed);
    const auto enc = load_encoders(ctx, run_cfg);
    auto run = pipeline::run_stage2(c, run_cfg, run_cfg.variant, run_cfg.seed, enc);
    write_stage2(ctx, run_cfg, c, run);
    if (!run.training.full_loss.empty())
        note("survival head trained, final Cox loss " + std::to_string(run.training.full_loss.back()));
    return kOk;
}

int cmd_evaluate(const Context& ctx, const Options& o)
{
    const cohort::Cohort c = load_cohort(ctx);
    const ExperimentConfig run_cfg = ctx.run_config(ctx.cfg.seed);
    const auto enc = load_encoders(ctx, run_cfg);
    const auto head = pipeline::head_artifact_from_json(pipeline::read_json_file(ctx.path("head.json")));
    const std::string expected = pipeline::experiment_hash(run_cfg);
    if (head.config_hash != expected)
        throw ConsistencyError("head.json has config hash " + head.config_hash + " but the configuration hash is " +
                               expected);
    if (head.cohort_hash != cohort::config_hash(c.config))
        throw ConsistencyError("head.json has cohort hash " + head.cohort_hash + " but the cohort hash is " +
                               cohort::config_hash(c.config));
    const auto run = pipeline::rebuild_run(c, enc, head);
    const json doc = pipeline::metrics_document(run_cfg, run.variant, {pipeline::evaluate_run(c, run_cfg, run)});
    pipeline::write_output(ctx.path("metrics.json"), doc.dump(1) + "\n");
    if (o.plots) write_plots(ctx, run_cfg, c, run);
    print_summary(doc);
    return kOk;
}

int cmd_all(const Context& ctx, const Options& o)
{
    cmd_generate(ctx);
    const cohort::Cohort c = load_cohort(ctx);
    const auto spec = pipeline::variant_spec(ctx.cfg.variant);
    std::vector<json> runs;
    for (std::uint64_t seed : ctx.cfg.run_seeds()) {
        const ExperimentConfig run_cfg = ctx.run_config(seed);
        note("seed " + std::to_string(seed));
        const auto enc = pipeline::train_encoders(c, run_cfg, spec.pretrain_text, spec.anatomical_masking, seed);
        auto run = pipeline::run_stage2(c, run_cfg, run_cfg.variant, seed, enc);
        if (runs.empty()) {
            write_checkpoints(ctx, run_cfg, enc, selected_pathways("all"));
            write_stage2(ctx, run_cfg, c, run);
            if (o.plots) write_plots(ctx, run_cfg, c, run);
        }
        runs.push_back(pipeline::evaluate_run(c, run_cfg, run));
    }
    const json doc = pipeline::metrics_document(ctx.cfg, ctx.cfg.variant, runs);
    pipeline::write_output(ctx.path("metrics.json"), doc.dump(1) + "\n");
    print_summary(doc);
    return kOk;
}

int cmd_ablate(const Context& ctx, const Options& o)
{
    const cohort::Cohort c = load_cohort(ctx);
    std::vector<Variant> variants;
    if (o.variants.empty())
        variants = pipeline::all_variants();
    else
        for (const auto& v : o.variants) variants.push_back(pipeline::parse_variant(v));

    pipeline::PretrainCache cache;
    json table = json::object();
    for (Variant v : variants) {
        ExperimentConfig vcfg = ctx.cfg;
        vcfg.variant = v;
        std::vector<json> runs;
        for (std::uint64_t seed : vcfg.run_seeds()) {
            note(pipeline::to_string(v) + " seed " + std::to_string(seed));
            ExperimentConfig run_cfg = vcfg;
            run_cfg.seed = seed;
            run_cfg.n_runs = 1;
            const auto run = pipeline::run_variant(c, run_cfg, v, seed, &cache);
            runs.push_back(pipeline::evaluate_run(c, run_cfg, run));
        }
        const json doc = pipeline::metrics_document(vcfg, v, runs);
        pipeline::write_output(ctx.path("ablation/metrics_" + pipeline::to_string(v) + ".json"), doc.dump(1) + "\n");
        json per_seed = json::array();
        for (const auto& r : runs) per_seed.push_back(r.at("auc"));
        table[pipeline::to_string(v)] = json{{"auc_summary", doc.at("auc_summary")}, {"per_seed_auc", per_seed}};
        print_summary(doc);
    }
    const json summary{{"format", "biofact-ablation"},
                       {"version", 1},
                       {"config_hash", pipeline::experiment_hash(ctx.cfg)},
                       {"cohort_hash", cohort::config_hash(ctx.cfg.cohort)},
                       {"seeds", ctx.cfg.run_seeds()},
                       {"variants", table}};
    pipeline::write_output(ctx.path("ablation/summary.json"), summary.dump(1) + "\n");
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"BioFact-MoE: pathway-factorized pretraining and residual mixture-of-experts survival modeling"};
    app.require_subcommand(1);
    app.fallthrough();

    Options o;
    app.add_option("--config", o.config, "experiment configuration (JSON)");
    app.add_option("--seed", o.seed, "base seed, overrides the configuration");
    app.add_option("--variant", o.variants, "pipeline variant; ablate accepts it several times");
    app.add_option("--pathway", o.pathway, "pretrain only this pathway: general, liver, tumor or all");
    app.add_option("--output", o.output, "output directory");
    app.add_flag("--plots", o.plots, "write Kaplan-Meier SVG plots");

    auto* gen = app.add_subcommand("generate", "draw the synthetic cohort");
    auto* pre = app.add_subcommand("pretrain", "train pathway adapters (stage 1)");
    auto* surv = app.add_subcommand("train-survival", "train the survival head on frozen encoders (stage 2)");
    auto* ev = app.add_subcommand("evaluate", "score the trained head and write metrics.json");
    auto* abl = app.add_subcommand("ablate", "run variants over all configured seeds");
    auto* all = app.add_subcommand("all", "generate, pretrain, train-survival and evaluate");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (o.variants.size() > 1 && !abl->parsed()) throw ConfigError("--variant may repeat only for ablate");
        const Context ctx = make_context(o);
        if (gen->parsed()) return cmd_generate(ctx);
        if (pre->parsed()) return cmd_pretrain(ctx, o);
        if (surv->parsed()) return cmd_train_survival(ctx);
        if (ev->parsed()) return cmd_evaluate(ctx, o);
        if (abl->parsed()) return cmd_ablate(ctx, o);
        if (all->parsed()) return cmd_all(ctx, o);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kConfig;
    } catch (const ConsistencyError& e) {
        std::cerr << "consistency error: " << e.what() << '\n';
        return kConsistency;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const ParseError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}
