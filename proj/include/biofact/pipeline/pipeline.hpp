#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "biofact/pipeline/experiment.hpp"

namespace biofact::pipeline {

struct PathwayTraining {
    pretrain::PathwayAdapter adapter;
    pretrain::PretrainResult result;
    pretrain::SegmentationMode text = pretrain::SegmentationMode::identity;
};

/// In-memory reuse of pretrained adapters across variants that share them.
/// Keys cover every input of a pretraining run.
using PretrainCache = std::map<std::string, PathwayTraining>;

struct TrainedEncoders {
    pretrain::EncoderStack stack;
    std::array<PathwayTraining, 3> pathways;
    std::uint64_t backbone_seed = 0;
};

/// Stage 1 for all three pathways. The general pathway always reads the
/// original full report; `text` corrupts only the liver and tumor segments.
TrainedEncoders train_encoders(const cohort::Cohort& cohort, const ExperimentConfig& cfg,
                               pretrain::SegmentationMode text, bool anatomical_masking, std::uint64_t run_seed,
                               PretrainCache* cache = nullptr,
                               const std::array<bool, 3>& which = {true, true, true});

/// Report segments a pathway reads under a text mode.
cohort::TokenSeq pathway_text(const cohort::Patient& p, pretrain::PathwayId pathway, pretrain::SegmentationMode text,
                              std::uint64_t run_seed);

/// Frozen Stage 2 inputs for the given patients.
std::vector<survival::PathwayEmbeddings> embed_patients(const pretrain::EncoderStack& stack,
                                                        const cohort::Cohort& cohort,
                                                        const std::vector<std::size_t>& indices,
                                                        pretrain::SegmentationMode text, std::uint64_t run_seed);

struct VariantRun {
    Variant variant = Variant::full;
    std::uint64_t seed = 0;
    TrainedEncoders encoders;
    survival::SurvivalHeadParams head;
    survival::SurvivalTrainResult training;
    std::vector<survival::PathwayEmbeddings> embeddings; // every patient, cohort order
    std::vector<survival::RiskDecomposition> risks;      // every patient, cohort order
};

/// Full two-stage pipeline for one variant and one seed.
VariantRun run_variant(const cohort::Cohort& cohort, const ExperimentConfig& cfg, Variant variant,
                       std::uint64_t run_seed, PretrainCache* cache = nullptr);

/// Stage 2 only, on already trained encoders.
VariantRun run_stage2(const cohort::Cohort& cohort, const ExperimentConfig& cfg, Variant variant,
                      std::uint64_t run_seed, const TrainedEncoders& encoders);

/// Test-split AUCs, concordance, phenotype and treatment analyses, and probe
/// specialization tests for one run.
nlohmann::json evaluate_run(const cohort::Cohort& cohort, const ExperimentConfig& cfg, const VariantRun& run);

/// Metrics document over runs: per-seed entries plus mean and std per horizon.
nlohmann::json metrics_document(const ExperimentConfig& cfg, Variant variant, const std::vector<nlohmann::json>& runs);

/// 18-month (or any horizon) test AUC recorded by evaluate_run; NaN if undefined.
double run_auc(const nlohmann::json& run_metrics, double horizon);

std::string risks_csv(const cohort::Cohort& cohort, const VariantRun& run, const std::string& config_hash);

std::string horizon_key(double h);

} // namespace biofact::pipeline
