#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "biofact/cohort/cohort.hpp"
#include "biofact/core/layers.hpp"

namespace biofact::survival {

struct PathwayEmbeddings {
    Vector z_base;
    Vector z_liver;
    Vector z_tumor;
};

/// Which terms of r = h_base(z_base) + alpha (w_l dr_l + w_t dr_t) are present.
enum class HeadVariant {
    full,
    base_only,
    liver_only,
    tumor_only,
    liver_base,
    tumor_base,
    joint_no_moe, // r = h_base + dr_l + dr_t, no gate and no alpha
    liver_tumor_no_base,
};

std::string to_string(HeadVariant v);
HeadVariant parse_head_variant(const std::string& name);

struct HeadLayout {
    bool base = true;
    bool liver = true;
    bool tumor = true;
    bool gate = true;  // softmax gate; only with both experts
    bool alpha = true; // per-patient coefficient
};
HeadLayout layout_of(HeadVariant v);

struct HeadDims {
    int embed_dim = 64;
    int expert_dim = 32;   // scales as embed_dim / 2
    int expert_hidden = 64;
    int alpha_hidden = 32;
};

struct SurvivalHeadParams {
    HeadVariant variant = HeadVariant::full;
    HeadDims dims;
    Linear h_base;         // z_base -> 1
    Mlp expert_liver;      // z_liver -> e_liver (2 layers, ReLU between)
    Mlp expert_tumor;
    Linear risk_liver;     // e_liver -> dr_liver
    Linear risk_tumor;
    Linear gate;           // [z_base; dz; |dz|] -> 2
    Mlp alpha_mlp;         // [z_base; e_liver; e_tumor] -> 1, sigmoid output

    /// Each component draws its initial weights from its own sub-seed, so a
    /// component starts identical across variants that share it.
    static SurvivalHeadParams init(HeadVariant variant, const HeadDims& dims, std::uint64_t seed);

    HeadLayout layout() const { return layout_of(variant); }
    std::vector<NamedParameter> named();
    ParameterRefs params();
    int gate_input_dim() const;
    int alpha_input_dim() const;
};

struct GateOutput {
    Vector g; // gate input
    double w_liver = 0.5;
    double w_tumor = 0.5;
};

struct RiskDecomposition {
    double base_risk = 0.0;
    Vector e_liver;
    Vector e_tumor;
    double delta_r_liver = 0.0;
    double delta_r_tumor = 0.0;
    double alpha = 1.0;
    GateOutput gate;
    double total_risk = 0.0;
};

/// Gate input [z_base; z_liver - z_tumor; |z_liver - z_tumor|] (z_base dropped
/// when the layout has no base) and its softmax weights.
GateOutput gate_forward(const PathwayEmbeddings& z, const SurvivalHeadParams& params);

/// Batched forward state for backpropagation.
struct HeadCache {
    Matrix zb, zl, zt;
    Matrix base;             // [n x 1]
    Matrix el, et;           // expert representations
    MlpCache el_cache, et_cache;
    Matrix dl, dt;           // [n x 1]
    Matrix gate_in;          // [n x gate_in]
    Matrix w;                // [n x 2]
    Matrix alpha_in;
    MlpCache alpha_cache;
    Matrix alpha;            // [n x 1]
    Vector total;
};

/// Rows of zb/zl/zt are patients. Returns total risk per patient.
Vector risk_forward_batch(const Matrix& zb, const Matrix& zl, const Matrix& zt, const SurvivalHeadParams& params,
                          HeadCache* cache = nullptr);
/// Accumulates parameter gradients given d loss / d total risk.
void risk_backward_batch(const Vector& grad_total, SurvivalHeadParams& params, const HeadCache& cache);

RiskDecomposition risk_forward(const PathwayEmbeddings& z, const SurvivalHeadParams& params);
std::vector<RiskDecomposition> risk_forward_all(const std::vector<PathwayEmbeddings>& zs,
                                                const SurvivalHeadParams& params);

enum class Phenotype { liver_driven, tumor_driven };
std::string to_string(Phenotype p);
/// liver_driven iff w_liver >= 0.5.
Phenotype stratify_phenotype(const GateOutput& gate);

struct SurvivalTrainConfig {
    int epochs = 50;
    int batch_size = 16;
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    std::string tie_handling = "breslow";

    void validate() const;
};

nlohmann::json to_json(const SurvivalTrainConfig& c);
SurvivalTrainConfig survival_config_from_json(const nlohmann::json& j);

struct SurvivalTrainResult {
    std::vector<double> epoch_loss; // mean mini-batch loss
    std::vector<double> full_loss;  // Cox loss over all training patients after each epoch
};

/// Mini-batch Cox training with AdamW. Batches are event-stratified: events
/// are dealt round-robin first so every batch holds at least one.
/// Throws InputError on size mismatch, UndefinedError when no events exist.
SurvivalTrainResult train_survival(SurvivalHeadParams& params, const std::vector<PathwayEmbeddings>& embeddings,
                                   const std::vector<cohort::SurvivalRecord>& records, const SurvivalTrainConfig& cfg,
                                   std::uint64_t seed);

/// Full-batch loss and gradient through the head (used by gradient checks).
double head_cox_loss(SurvivalHeadParams& params, const Matrix& zb, const Matrix& zl, const Matrix& zt,
                     const Vector& times, const std::vector<bool>& events, bool accumulate_grad);

void stack_embeddings(const std::vector<PathwayEmbeddings>& zs, Matrix& zb, Matrix& zl, Matrix& zt);

nlohmann::json to_json(SurvivalHeadParams& params);
SurvivalHeadParams head_from_json(const nlohmann::json& j);

} // namespace biofact::survival
