#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "biofact/core/errors.hpp"
#include "biofact/pipeline/artifacts.hpp"
#include "biofact/pipeline/experiment.hpp"
#include "biofact/pipeline/pipeline.hpp"

using namespace biofact;
using namespace biofact::pipeline;
using nlohmann::json;
using pretrain::PathwayId;

namespace {

ExperimentConfig small_config(std::uint64_t seed = 1)
{
    ExperimentConfig c;
    c.cohort.n_patients = 120;
    c.cohort.seed = 44;
    c.pretrain.epochs = 2;
    c.survival.epochs = 4;
    c.eval.permutations = 32;
    c.seed = seed;
    return c;
}

struct SmallRun {
    ExperimentConfig cfg = small_config();
    cohort::Cohort cohort = cohort::generate_cohort(cfg.cohort);
};

bool contains(const std::string& hay, const std::string& needle)
{
    return hay.find(needle) != std::string::npos;
}

} // namespace

TEST_SUITE("pipeline")
{
    TEST_CASE("experiment config round-trips and hashes stably")
    {
        ExperimentConfig c = small_config(9);
        c.variant = Variant::swapped_text_conditioning;
        c.n_runs = 3;
        c.encoder.report_weight = 0.5;
        const json j = to_json(c);
        const ExperimentConfig d = experiment_config_from_json(j);
        CHECK(to_json(d).dump() == j.dump());
        CHECK(experiment_hash(c) == experiment_hash(d));
        CHECK(d.run_seeds() == std::vector<std::uint64_t>{9, 10, 11});

        ExperimentConfig e = c;
        e.output_dir = "elsewhere";
        CHECK(experiment_hash(e) == experiment_hash(c));
        e.survival.learning_rate *= 2.0;
        CHECK(experiment_hash(e) != experiment_hash(c));

        const ExperimentConfig partial = experiment_config_from_json(json{{"seed", 5}});
        CHECK(partial.seed == 5);
        CHECK(partial.cohort.n_patients == 588);
    }

    TEST_CASE("experiment config is strict")
    {
        for (const char* path : {"/extra", "/cohort/extra", "/pretrain/extra", "/survival/extra", "/eval/extra",
                                 "/encoder/extra", "/head/extra"}) {
            json j = to_json(ExperimentConfig{});
            j[json::json_pointer(path)] = 1;
            CAPTURE(path);
            CHECK_THROWS_AS(experiment_config_from_json(j), ConfigError);
        }
        json bad = to_json(ExperimentConfig{});
        bad["variant"] = "nonsense";
        CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);
        bad = to_json(ExperimentConfig{});
        bad["cohort"]["n_patients"] = "many";
        CHECK_THROWS_AS(experiment_config_from_json(bad), ConfigError);

        ExperimentConfig c;
        c.cohort.n_patients = 0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = ExperimentConfig{};
        c.head.embed_dim = 32;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = ExperimentConfig{};
        c.encoder.token_levels = 3;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), IoError);
    }

    TEST_CASE("variants name their single modification")
    {
        using pretrain::SegmentationMode;
        const VariantSpec full = variant_spec(Variant::full);
        CHECK(full.pretrain_text == SegmentationMode::identity);
        CHECK(full.anatomical_masking);
        CHECK(full.head == survival::HeadVariant::full);
        CHECK(variant_spec(Variant::swapped_text_conditioning).pretrain_text == SegmentationMode::swapped);
        CHECK(variant_spec(Variant::random_text_split).inference_text == SegmentationMode::random_split);
        CHECK_FALSE(variant_spec(Variant::no_anatomical_masking).anatomical_masking);
        const VariantSpec fri = variant_spec(Variant::full_report_at_inference);
        CHECK(fri.pretrain_text == SegmentationMode::identity);
        CHECK(fri.train_text == SegmentationMode::identity);
        CHECK(fri.inference_text == SegmentationMode::unsegmented);
        CHECK(variant_spec(Variant::joint_no_moe).head == survival::HeadVariant::joint_no_moe);
        CHECK(all_variants().size() == 14);
        for (Variant v : all_variants()) CHECK(parse_variant(to_string(v)) == v);
        try {
            parse_variant("bogus");
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(contains(e.what(), "liver_tumor_no_base"));
        }
    }

    TEST_CASE("general pathway always reads the full report")
    {
        SmallRun s;
        const auto& pt = s.cohort.patients[0];
        const auto full = pretrain::pathway_tokens(pt.report, PathwayId::general);
        for (auto m : {pretrain::SegmentationMode::swapped, pretrain::SegmentationMode::random_split,
                       pretrain::SegmentationMode::unsegmented})
            CHECK(pathway_text(pt, PathwayId::general, m, 1) == full);
        CHECK(pathway_text(pt, PathwayId::liver, pretrain::SegmentationMode::swapped, 1) ==
              pretrain::pathway_tokens(pt.report, PathwayId::tumor));
    }

    TEST_CASE("pipeline runs are deterministic")
    {
        SmallRun s;
        const auto a = run_variant(s.cohort, s.cfg, Variant::full, 1);
        const auto b = run_variant(s.cohort, s.cfg, Variant::full, 1);
        const std::string ma = metrics_document(s.cfg, Variant::full, {evaluate_run(s.cohort, s.cfg, a)}).dump();
        const std::string mb = metrics_document(s.cfg, Variant::full, {evaluate_run(s.cohort, s.cfg, b)}).dump();
        CHECK(ma == mb);
        CHECK(risks_csv(s.cohort, a, "h") == risks_csv(s.cohort, b, "h"));
        const auto c = run_variant(s.cohort, s.cfg, Variant::full, 2);
        CHECK(risks_csv(s.cohort, a, "h") != risks_csv(s.cohort, c, "h"));
    }

    TEST_CASE("stage 2 leaves the encoders untouched")
    {
        SmallRun s;
        PretrainCache cache;
        const auto enc = train_encoders(s.cohort, s.cfg, pretrain::SegmentationMode::identity, true, 1, &cache);
        std::array<std::string, 3> before;
        for (PathwayId p : pretrain::kPathways)
            before[static_cast<std::size_t>(p)] = pretrain::to_json(make_checkpoint(s.cfg, enc, p, 1)).dump();
        const auto run = run_stage2(s.cohort, s.cfg, Variant::full, 1, enc);
        for (PathwayId p : pretrain::kPathways) {
            CHECK(pretrain::to_json(make_checkpoint(s.cfg, enc, p, 1)).dump() == before[static_cast<std::size_t>(p)]);
            CHECK(pretrain::to_json(make_checkpoint(s.cfg, run.encoders, p, 1)).dump() ==
                  before[static_cast<std::size_t>(p)]);
        }
        // The cache hands back the same adapters instead of retraining.
        const auto again = train_encoders(s.cohort, s.cfg, pretrain::SegmentationMode::identity, true, 1, &cache);
        for (PathwayId p : pretrain::kPathways)
            CHECK(pretrain::to_json(make_checkpoint(s.cfg, again, p, 1)).dump() == before[static_cast<std::size_t>(p)]);
    }

    TEST_CASE("stage 2 inputs are fused unit vectors")
    {
        SmallRun s;
        const auto run = run_variant(s.cohort, s.cfg, Variant::full, 1);
        REQUIRE(run.embeddings.size() == s.cohort.patients.size());
        for (const auto& e : run.embeddings)
            for (const Vector* v : {&e.z_base, &e.z_liver, &e.z_tumor}) CHECK(std::abs(v->norm() - 1.0) < 1e-9);
    }

    TEST_CASE("base_only trains only a base head")
    {
        SmallRun s;
        auto run = run_variant(s.cohort, s.cfg, Variant::base_only, 1);
        std::vector<std::string> names;
        for (auto& np : run.head.named()) names.push_back(np.name);
        CHECK(names == std::vector<std::string>{"h_base.weight", "h_base.bias"});
        for (const auto& r : run.risks) {
            CHECK(r.total_risk == r.base_risk);
            CHECK(r.delta_r_liver == 0.0);
            CHECK(r.delta_r_tumor == 0.0);
        }
    }

    TEST_CASE("outputs embed the config hash")
    {
        SmallRun s;
        const std::string hash = experiment_hash(s.cfg);
        const auto run = run_variant(s.cohort, s.cfg, Variant::full, 1);
        const json metrics = metrics_document(s.cfg, Variant::full, {evaluate_run(s.cohort, s.cfg, run)});
        CHECK(metrics.at("config_hash") == hash);
        CHECK(contains(risks_csv(s.cohort, run, hash), "config_hash=" + hash));
        const auto ck = make_checkpoint(s.cfg, run.encoders, PathwayId::liver, 1);
        CHECK(contains(loss_csv(ck, hash), "config_hash=" + hash));
        CHECK(pretrain::to_json(ck).at("config_hash") == hash);
        const auto plots = km_plots(s.cohort, s.cfg, run);
        CHECK_FALSE(plots.empty());
        for (const auto& [name, svg] : plots) {
            CAPTURE(name);
            CHECK(contains(svg, "config_hash=" + hash));
        }
        HeadArtifact head{Variant::full, 1, hash, cohort::config_hash(s.cfg.cohort), run.head, run.training};
        CHECK(to_json(head).at("config_hash") == hash);
    }

    TEST_CASE("metrics document schema")
    {
        SmallRun s;
        s.cfg.n_runs = 2;
        std::vector<json> runs;
        for (auto seed : s.cfg.run_seeds())
            runs.push_back(evaluate_run(s.cohort, s.cfg, run_variant(s.cohort, s.cfg, Variant::full, seed)));
        const json m = metrics_document(s.cfg, Variant::full, runs);
        CHECK(m.at("runs").size() == 2);
        for (double h : s.cfg.eval.horizons_months) {
            const auto key = horizon_key(h);
            for (const auto& r : m.at("runs")) CHECK(r.at("auc").contains(key));
            const auto& sum = m.at("auc_summary").at(key);
            if (sum.is_null()) continue;
            CHECK(sum.contains("mean"));
            CHECK(sum.contains("std"));
        }
        const auto& r0 = m.at("runs")[0];
        for (const char* k : {"oracle_auc", "c_index_test", "stratification", "subgroups", "probes", "pretrain"})
            CHECK(r0.contains(k));
        CHECK(r0.at("subgroups").size() == 7);
        CHECK(r0.at("probes").contains("palbi"));
    }

    TEST_CASE("checkpoint restore enforces provenance")
    {
        SmallRun s;
        const auto enc = train_encoders(s.cohort, s.cfg, pretrain::SegmentationMode::identity, true, 1);
        std::array<pretrain::PathwayCheckpoint, 3> cks;
        for (PathwayId p : pretrain::kPathways) cks[static_cast<std::size_t>(p)] = make_checkpoint(s.cfg, enc, p, 1);
        const auto restored = restore_encoders(cks, s.cfg, Variant::full, 1);
        for (PathwayId p : pretrain::kPathways)
            CHECK(pretrain::to_json(make_checkpoint(s.cfg, restored, p, 1)).dump() ==
                  pretrain::to_json(cks[static_cast<std::size_t>(p)]).dump());

        ExperimentConfig other = s.cfg;
        other.cohort.seed += 1;
        try {
            restore_encoders(cks, other, Variant::full, 1);
            FAIL("expected ConsistencyError");
        } catch (const ConsistencyError& e) {
            CHECK(contains(e.what(), cks[0].cohort_hash));
            CHECK(contains(e.what(), cohort::config_hash(other.cohort)));
        }
        CHECK_THROWS_AS(restore_encoders(cks, s.cfg, Variant::swapped_text_conditioning, 1), ConsistencyError);
        CHECK_THROWS_AS(restore_encoders(cks, s.cfg, Variant::full, 2), ConsistencyError);
        auto swapped = cks;
        std::swap(swapped[1], swapped[2]);
        CHECK_THROWS_AS(restore_encoders(swapped, s.cfg, Variant::full, 1), ConsistencyError);
        // Head-only variants share the full variant's encoders.
        CHECK_NOTHROW(restore_encoders(cks, s.cfg, Variant::base_only, 1));
    }

    TEST_CASE("stored heads rebuild the same risks")
    {
        SmallRun s;
        const auto run = run_variant(s.cohort, s.cfg, Variant::full, 1);
        HeadArtifact a{Variant::full, 1, experiment_hash(s.cfg), cohort::config_hash(s.cfg.cohort), run.head,
                       run.training};
        const HeadArtifact back = head_artifact_from_json(json::parse(to_json(a).dump()));
        const VariantRun rebuilt = rebuild_run(s.cohort, run.encoders, back);
        CHECK(risks_csv(s.cohort, rebuilt, "h") == risks_csv(s.cohort, run, "h"));
        CHECK(evaluate_run(s.cohort, s.cfg, rebuilt).dump() == evaluate_run(s.cohort, s.cfg, run).dump());
        json broken = to_json(a);
        broken["format"] = "other";
        CHECK_THROWS_AS(head_artifact_from_json(broken), ParseError);
    }

    TEST_CASE("artifact io errors")
    {
        const auto dir = std::filesystem::temp_directory_path() / "biofact_test_artifacts";
        std::filesystem::remove_all(dir);
        write_output((dir / "a" / "b.txt").string(), "x");
        CHECK(std::filesystem::exists(dir / "a" / "b.txt"));
        {
            std::ofstream f(dir / "bad.json");
            f << "{\"a\": ";
        }
        CHECK_THROWS_AS(read_json_file((dir / "bad.json").string()), ParseError);
        CHECK_THROWS_AS(read_json_file((dir / "missing.json").string()), IoError);
        CHECK_THROWS_AS(write_output((dir / "a" / "b.txt" / "c.txt").string(), "x"), IoError);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("default pipeline stays below the oracle ceiling")
    {
        ExperimentConfig cfg;
        const auto c = cohort::generate_cohort(cfg.cohort);
        const auto run = run_variant(c, cfg, Variant::full, cfg.seed);
        const json m = evaluate_run(c, cfg, run);
        CHECK(m.at("c_index_train").get<double>() > 0.5);
        for (double h : cfg.eval.horizons_months) {
            const auto key = horizon_key(h);
            CAPTURE(key);
            REQUIRE_FALSE(m.at("auc").at(key).is_null());
            CHECK(m.at("auc").at(key).get<double>() <= m.at("oracle_auc").at(key).get<double>() + 0.02);
        }
        for (const char* p : {"general", "liver", "tumor"}) {
            const auto& pre = m.at("pretrain").at(p);
            CHECK(pre.at("heldout_loss").get<double>() < pre.at("heldout_baseline").get<double>());
        }
    }
}
