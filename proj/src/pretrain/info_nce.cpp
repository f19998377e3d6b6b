#include "biofact/pretrain/info_nce.hpp"

#include <cmath>
#include <string>

namespace biofact::pretrain {

namespace {

double logsumexp(const Eigen::Ref<const Vector>& v)
{
    const double peak = v.maxCoeff();
    return peak + std::log((v.array() - peak).exp().sum());
}

} // namespace

InfoNceResult info_nce_unchecked(const Matrix& img, const Matrix& txt, double tau)
{
    if (img.rows() != txt.rows() || img.cols() != txt.cols())
        throw DimensionError("info_nce: image " + shape_string(img) + " and text " + shape_string(txt) +
                             " batches differ");
    if (img.rows() < 1) throw InputError("info_nce: empty batch");
    if (!(tau > 0.0)) throw ConfigError("info_nce: tau must be > 0");

    const Eigen::Index b = img.rows();
    const Matrix logits = (img * txt.transpose()) / tau;
    Matrix row_probs(b, b), col_probs(b, b);
    double loss_i2t = 0.0, loss_t2i = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
        const Vector row = logits.row(i).transpose();
        const double lse = logsumexp(row);
        loss_i2t += lse - logits(i, i);
        row_probs.row(i) = (row.array() - lse).exp().transpose();

        const Vector col = logits.col(i);
        const double lse_c = logsumexp(col);
        loss_t2i += lse_c - logits(i, i);
        col_probs.col(i) = (col.array() - lse_c).exp();
    }
    const double inv_b = 1.0 / static_cast<double>(b);
    InfoNceResult r;
    r.loss = 0.5 * (loss_i2t + loss_t2i) * inv_b;

    Matrix grad_logits = 0.5 * inv_b * (row_probs + col_probs);
    grad_logits.diagonal().array() -= inv_b;
    r.grad_img = grad_logits * txt / tau;
    r.grad_txt = grad_logits.transpose() * img / tau;
    ensure_finite(r.grad_img, "info_nce");
    return r;
}

InfoNceResult info_nce_symmetric(const Matrix& img, const Matrix& txt, double tau)
{
    for (const Matrix* m : {&img, &txt})
        for (Eigen::Index i = 0; i < m->rows(); ++i) {
            const double n = m->row(i).norm();
            if (std::abs(n - 1.0) > 1e-6)
                throw InputError("info_nce: row " + std::to_string(i) + " has norm " + std::to_string(n) +
                                 ", expected unit length");
        }
    return info_nce_unchecked(img, txt, tau);
}

double top1_retrieval(const Matrix& img, const Matrix& txt)
{
    const Matrix sims = img * txt.transpose();
    Eigen::Index hits = 0;
    for (Eigen::Index i = 0; i < sims.rows(); ++i) {
        Eigen::Index best = 0;
        sims.row(i).maxCoeff(&best);
        if (best == i) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(sims.rows());
}

} // namespace biofact::pretrain
