#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "biofact/pretrain/encoder.hpp"

namespace biofact::pretrain {

struct PretrainConfig {
    double tau = 0.1;
    int epochs = 25; // 250 in the full protocol
    int batch_size = 32;
    double learning_rate = 1e-3; // 1e-4 in the full protocol; 10x for 10x fewer epochs
    double weight_decay = 0.01;
    int lora_rank = 4;
    double lora_alpha = 8.0;

    void validate() const;
};

nlohmann::json to_json(const PretrainConfig& cfg);
PretrainConfig pretrain_config_from_json(const nlohmann::json& j);

/// One image-report pair with the pathway's frozen features precomputed.
struct PretrainPair {
    StudyFeatures image;
    Vector text; // mean-pooled frozen token embeddings
};

PretrainPair make_pair(const cohort::SyntheticStudy& study, const cohort::TokenSeq& tokens, PathwayId pathway,
                       const EncoderStack& stack, PoolStats* stats = nullptr);

struct PretrainResult {
    std::vector<double> epoch_loss;   // mean training batch loss per epoch
    double heldout_loss = 0.0;        // mean loss over held-out batches of batch_size
    double heldout_top1 = 0.0;        // image->text top-1 within each held-out batch
    double heldout_baseline = 0.0;    // ln(batch_size)
};

/// Trains the pathway's adapter with symmetric InfoNCE and AdamW. Only that
/// adapter's parameters change. Batches are drawn from a seeded shuffle;
/// a trailing batch smaller than 2 is skipped.
PretrainResult pretrain_pathway(EncoderStack& stack, PathwayId pathway, const std::vector<PretrainPair>& train,
                                const std::vector<PretrainPair>& heldout, const PretrainConfig& cfg,
                                std::uint64_t seed);

struct HeldoutMetrics {
    double loss = 0.0;
    double top1 = 0.0;
};
HeldoutMetrics evaluate_pairs(const EncoderStack& stack, PathwayId pathway, const std::vector<PretrainPair>& pairs,
                              const PretrainConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoints: JSON with named tensors plus provenance.

struct PathwayCheckpoint {
    PathwayId pathway = PathwayId::general;
    EncoderDims dims;
    PretrainConfig config;
    std::string config_hash;     // experiment that wrote the file
    std::string cohort_hash;
    std::string run_hash;        // hash of everything that determined this training run
    std::uint64_t backbone_seed = 0;
    std::string backbone_checksum;
    bool anatomical_masking = true;
    std::string segmentation;
    std::vector<double> loss_curve;
    double heldout_loss = 0.0;
    double heldout_top1 = 0.0;
    double heldout_baseline = 0.0;
    PathwayAdapter adapter;
};

nlohmann::json to_json(const PathwayCheckpoint& ck);
/// Throws ParseError on malformed content.
PathwayCheckpoint checkpoint_from_json(const nlohmann::json& j);

nlohmann::json tensor_to_json(const Matrix& m);
Matrix tensor_from_json(const nlohmann::json& j, const std::string& name);

} // namespace biofact::pretrain
