#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "biofact/cohort/cohort.hpp"
#include "biofact/eval/probe.hpp"
#include "biofact/pretrain/pretrain.hpp"
#include "biofact/pretrain/segmenter.hpp"
#include "biofact/survival/head.hpp"

namespace biofact::pipeline {

enum class Variant {
    full,
    no_text_segmentation,
    random_text_split,
    swapped_text_conditioning,
    no_anatomical_masking,
    full_report_at_inference,
    full_report,
    base_only,
    liver_only,
    tumor_only,
    liver_base,
    tumor_base,
    joint_no_moe,
    liver_tumor_no_base,
};

const std::vector<Variant>& all_variants();
std::string to_string(Variant v);
/// Throws ConfigError listing the valid names.
Variant parse_variant(const std::string& name);

/// The single pipeline modification a variant makes.
struct VariantSpec {
    pretrain::SegmentationMode pretrain_text = pretrain::SegmentationMode::identity;
    pretrain::SegmentationMode train_text = pretrain::SegmentationMode::identity;     // Stage 2, train split
    pretrain::SegmentationMode inference_text = pretrain::SegmentationMode::identity; // Stage 2, test split
    bool anatomical_masking = true;
    survival::HeadVariant head = survival::HeadVariant::full;
};
VariantSpec variant_spec(Variant v);

struct ExperimentConfig {
    cohort::CohortConfig cohort;
    pretrain::PretrainConfig pretrain;
    survival::SurvivalTrainConfig survival;
    eval::EvalConfig eval;
    pretrain::EncoderDims encoder;
    survival::HeadDims head;
    Variant variant = Variant::full;
    std::string output_dir = "out";
    std::uint64_t seed = 1;
    int n_runs = 1; // seeds seed, seed+1, ..., seed+n_runs-1

    void validate() const;
    std::vector<std::uint64_t> run_seeds() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Strict: unknown keys anywhere raise ConfigError. Missing keys keep defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

/// Hash of everything that determines the outputs (output_dir excluded).
std::string experiment_hash(const ExperimentConfig& c);

} // namespace biofact::pipeline
