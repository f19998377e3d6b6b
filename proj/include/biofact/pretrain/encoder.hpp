#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "biofact/cohort/cohort.hpp"
#include "biofact/core/layers.hpp"

namespace biofact::pretrain {

enum class PathwayId { general = 0, liver = 1, tumor = 2 };
inline constexpr std::array<PathwayId, 3> kPathways{PathwayId::general, PathwayId::liver, PathwayId::tumor};

std::string to_string(PathwayId p);
/// Throws ConfigError for names other than general, liver, tumor.
PathwayId parse_pathway(const std::string& name);

/// Organs whose occupancy counts toward a pathway's patch weight.
/// general -> every organ including background (no masking).
std::array<bool, cohort::kOrganCount> organ_set(PathwayId p);

/// w_i = sum of occupancy over the pathway's organ set, clamped to [0, 1];
/// the general pathway returns all ones.
Vector anatomical_patch_weights(const Matrix& occupancy, PathwayId pathway);

struct PoolStats {
    long degenerate_slices = 0; // slices whose weights summed to zero
};

/// v = sum_i w_i t_i / sum_i w_i; falls back to the unweighted mean when
/// sum_i w_i == 0 and counts that in `stats`.
Vector masked_pool(const Matrix& tokens, const Vector& weights, PoolStats* stats = nullptr);

struct EncoderDims {
    int token_dim = 16;
    int model_dim = 32;
    int text_dim = 32;
    int embed_dim = 64;
    int vocab_size = 256;
    int max_slices = 16;
    int pooler_hidden = 16;
    int lora_rank = 4;
    double lora_alpha = 8.0;
    int token_levels = 2;        // ordinal levels per token group in the frozen token table
    double report_weight = 0.25; // weight of the report embedding in the stage 2 fusion
};

/// Weights that never train: the patch encoder (linear embed + one attention
/// block) and the text encoder (token table + mean pool + projection).
struct FrozenBackbone {
    Matrix patch_embed_w; // [model x token]
    Matrix patch_embed_b; // [1 x model]
    Matrix wq, wk, wv, wo; // [model x model]
    Matrix token_table;    // [vocab x text]
    Matrix text_proj;      // [embed x text]
    std::uint64_t seed = 0;

    static FrozenBackbone init(const EncoderDims& dims, std::uint64_t seed);
    std::uint64_t checksum() const;
};

/// Trainable parameters owned by one pathway.
struct PathwayAdapter {
    PathwayId pathway = PathwayId::general;
    LoraAdapter lora_q;    // on the patch attention query projection
    LoraAdapter lora_v;    // on the patch attention value projection
    LoraAdapter lora_text; // on the text encoder's final projection
    SelfAttention aggregator;
    Mlp pooler;            // slice scorer: model -> hidden -> 1
    Linear projection;     // model -> embed

    static PathwayAdapter init(PathwayId pathway, const EncoderDims& dims, Rng& rng);
    ParameterRefs params();
    std::vector<NamedParameter> named();
    std::uint64_t checksum();
};

struct EncoderStack {
    EncoderDims dims;
    FrozenBackbone backbone;
    std::array<PathwayAdapter, 3> adapters;
    bool anatomical_masking = true;

    static EncoderStack init(const EncoderDims& dims, std::uint64_t backbone_seed, std::uint64_t adapter_seed);
    PathwayAdapter& adapter(PathwayId p) { return adapters[static_cast<std::size_t>(p)]; }
    const PathwayAdapter& adapter(PathwayId p) const { return adapters[static_cast<std::size_t>(p)]; }
};

// ---------------------------------------------------------------------------
// Image side

/// Frozen, adapter-independent features of one slice for one pathway.
struct SliceFeatures {
    std::vector<int> active; // patches with nonzero weight (all patches if degenerate)
    Vector weights;          // pooling weights over `active`
    Matrix h0;               // patch embeddings [n_active x model]
    Matrix q0, k, v0;        // frozen projections of h0
};

struct StudyFeatures {
    std::vector<SliceFeatures> slices;
};

/// Computes the frozen part of the image encoder. Only patches with nonzero
/// pathway weight take part, so the result ignores zero-occupancy patches.
StudyFeatures prepare_study_features(const cohort::SyntheticStudy& study, PathwayId pathway,
                                     const EncoderStack& stack, PoolStats* stats = nullptr);

struct SliceCache {
    Matrix q, v;
    Matrix ctx;
    AttentionCoreCache core;
};

struct ImageCache {
    std::vector<SliceCache> slices;
    Matrix slice_embs; // [S x model]
    SelfAttentionCache agg;
    Matrix agg_out;    // [S x model]
    MlpCache pooler;
    Vector pool_probs; // [S]
    Matrix pooled;     // [1 x model]
    Vector projected;  // pre-normalization [embed]
};

Vector encode_image_features(const StudyFeatures& feats, const EncoderStack& stack, const PathwayAdapter& adapter,
                             ImageCache* cache = nullptr);
/// Accumulates gradients into the adapter given dL/d(normalized embedding).
void encode_image_backward(const Vector& grad_emb, const StudyFeatures& feats, const EncoderStack& stack,
                           PathwayAdapter& adapter, const ImageCache& cache);

/// L2-normalized volume embedding for a pathway.
Vector encode_volume(const cohort::SyntheticStudy& study, PathwayId pathway, const EncoderStack& stack,
                     PoolStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Text side

/// Tokens a pathway reads: liver -> liver+neutral, tumor -> tumor+neutral,
/// general -> liver+tumor+neutral. Throws InputError on empty segments.
cohort::TokenSeq pathway_tokens(const cohort::ReportSegments& segments, PathwayId pathway);

/// Mean of frozen token embeddings; throws InputError on out-of-vocabulary ids.
Vector pooled_text_features(const cohort::TokenSeq& tokens, const EncoderStack& stack);

struct TextCache {
    Matrix pooled;    // [1 x text]
    Vector projected; // pre-normalization [embed]
};

Vector encode_text_features(const Vector& pooled, const EncoderStack& stack, const PathwayAdapter& adapter,
                            TextCache* cache = nullptr);
void encode_text_backward(const Vector& grad_emb, const EncoderStack& stack, PathwayAdapter& adapter,
                          const TextCache& cache);

Vector encode_report(const cohort::ReportSegments& segments, PathwayId pathway, const EncoderStack& stack);

/// Stage 2 input for one pathway: normalize(image + report_weight * text).
Vector fuse_embeddings(const Vector& image, const Vector& text, double report_weight);

} // namespace biofact::pretrain
