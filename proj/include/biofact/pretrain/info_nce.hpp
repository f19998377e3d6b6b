#pragma once

#include "biofact/core/matrix.hpp"

namespace biofact::pretrain {

struct InfoNceResult {
    double loss = 0.0;
    Matrix grad_img; // dL/d img_embs
    Matrix grad_txt; // dL/d txt_embs
};

/// Symmetric InfoNCE over a batch of matched pairs:
///   logits = img txt^T / tau
///   L = 1/2 (mean_i CE(logits[i, :], i) + mean_j CE(logits[:, j], j))
/// Rows of both inputs must be unit length within 1e-6 (InputError otherwise).
InfoNceResult info_nce_symmetric(const Matrix& img_embs, const Matrix& txt_embs, double tau);

/// Same loss without the normalization precondition (gradient checks perturb raw rows).
InfoNceResult info_nce_unchecked(const Matrix& img_embs, const Matrix& txt_embs, double tau);

/// Fraction of rows whose highest-scoring text is their own pair.
double top1_retrieval(const Matrix& img_embs, const Matrix& txt_embs);

} // namespace biofact::pretrain
