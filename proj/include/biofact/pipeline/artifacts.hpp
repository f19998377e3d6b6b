#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "biofact/pipeline/pipeline.hpp"

namespace biofact::pipeline {

/// Like write_file, creating parent directories as needed. Throws IoError.
void write_output(const std::string& path, const std::string& content);
/// Throws IoError when unreadable and ParseError when malformed.
nlohmann::json read_json_file(const std::string& path);

/// Hash of the inputs of one pathway's pretraining run.
std::string pretrain_run_hash(const ExperimentConfig& cfg, pretrain::PathwayId p, pretrain::SegmentationMode text,
                              bool anatomical_masking, std::uint64_t run_seed);

pretrain::PathwayCheckpoint make_checkpoint(const ExperimentConfig& cfg, const TrainedEncoders& enc,
                                            pretrain::PathwayId p, std::uint64_t run_seed);

std::string loss_csv(const pretrain::PathwayCheckpoint& ck, const std::string& config_hash);

/// Rebuilds the encoder stack from the three pathway checkpoints. Throws
/// ConsistencyError (message names both values) when a checkpoint was made
/// from another cohort or another training setup, or when the checkpoints
/// disagree on the frozen backbone.
TrainedEncoders restore_encoders(const std::array<pretrain::PathwayCheckpoint, 3>& cks,
                                 const ExperimentConfig& cfg, Variant variant, std::uint64_t run_seed);

struct HeadArtifact {
    Variant variant = Variant::full;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string cohort_hash;
    survival::SurvivalHeadParams head;
    survival::SurvivalTrainResult training;
};

nlohmann::json to_json(HeadArtifact& a);
HeadArtifact head_artifact_from_json(const nlohmann::json& j);

/// Frozen embeddings and risks for a stored head, as run_stage2 would have
/// produced them.
VariantRun rebuild_run(const cohort::Cohort& cohort, const TrainedEncoders& encoders, const HeadArtifact& head);

/// Kaplan-Meier plots of a run's test split: phenotypes, risk groups, and
/// treated vs untreated per subgroup. Pairs of (file name, SVG text).
std::vector<std::pair<std::string, std::string>> km_plots(const cohort::Cohort& cohort, const ExperimentConfig& cfg,
                                                          const VariantRun& run);

} // namespace biofact::pipeline
