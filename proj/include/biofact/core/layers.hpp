#pragma once

#include <vector>

#include "biofact/core/parameter.hpp"
#include "biofact/core/rng.hpp"

namespace biofact {

// Differentiable building blocks with hand-written backward passes.
//
// Conventions: activations are row-major [batch x features]; weights are
// [out x in] so a layer computes x * W^T. Every backward returns the gradient
// with respect to its input and accumulates into the .grad of its parameters.

// ---------------------------------------------------------------------------
// Dense

struct Linear {
    Parameter weight; // [out x in]
    Parameter bias;   // [1 x out]

    Linear() = default;
    Linear(Matrix w, Matrix b) : weight(std::move(w)), bias(std::move(b)) {}

    /// Glorot-uniform-scale Gaussian weights, zero bias.
    static Linear init(Eigen::Index in, Eigen::Index out, Rng& rng);

    Eigen::Index in_dim() const { return weight.cols(); }
    Eigen::Index out_dim() const { return weight.rows(); }
    ParameterRefs params() { return {&weight, &bias}; }
};

Matrix linear_forward(const Matrix& x, const Parameter& weight, const Parameter& bias);
Matrix linear_backward(const Matrix& x, const Matrix& grad_out, Parameter& weight, Parameter& bias);

inline Matrix linear_forward(const Matrix& x, const Linear& layer)
{
    return linear_forward(x, layer.weight, layer.bias);
}
inline Matrix linear_backward(const Matrix& x, const Matrix& grad_out, Linear& layer)
{
    return linear_backward(x, grad_out, layer.weight, layer.bias);
}

// ---------------------------------------------------------------------------
// Low-rank adapter over a frozen projection: y = x W^T + (alpha / r) x A^T B^T

struct LoraAdapter {
    Parameter a; // [r x in]
    Parameter b; // [out x r]
    double alpha = 8.0;
    int rank = 4;

    /// A ~ N(0, a_std^2), B = 0, so the adapted map starts equal to the frozen one.
    static LoraAdapter init(Eigen::Index in, Eigen::Index out, int rank, double alpha, Rng& rng,
                            double a_std = 0.02);

    double scale() const { return alpha / static_cast<double>(rank); }
    ParameterRefs params() { return {&a, &b}; }
};

Matrix lora_linear_forward(const Matrix& x, const Matrix& frozen, const LoraAdapter& lora);
/// The adapter term alone, (alpha / r) x A^T B^T. lora_linear_forward is x W^T plus this.
Matrix lora_delta(const Matrix& x, const LoraAdapter& lora);
/// Accumulates A and B gradients of the adapter term for input x; returns its input gradient.
Matrix lora_delta_backward(const Matrix& x, const Matrix& grad_out, LoraAdapter& lora);
/// Gradients reach A and B only; `frozen` is read-only.
Matrix lora_linear_backward(const Matrix& x, const Matrix& grad_out, const Matrix& frozen, LoraAdapter& lora);

// ---------------------------------------------------------------------------
// Multi-layer perceptron with ReLU between layers

enum class Activation { identity, relu, sigmoid };

struct Mlp {
    std::vector<Linear> layers;
    Activation hidden = Activation::relu;
    Activation output = Activation::identity;

    /// `dims` lists widths input-to-output, e.g. {64, 64, 32} is two layers.
    static Mlp init(const std::vector<Eigen::Index>& dims, Rng& rng,
                    Activation output = Activation::identity);

    Eigen::Index in_dim() const { return layers.front().in_dim(); }
    Eigen::Index out_dim() const { return layers.back().out_dim(); }
    ParameterRefs params();
};

struct MlpCache {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> outputs; // post-activation output of each layer
};

Matrix mlp_forward(const Matrix& x, const Mlp& mlp, MlpCache* cache = nullptr);
Matrix mlp_backward(const Matrix& grad_out, Mlp& mlp, const MlpCache& cache);

Matrix apply_activation(const Matrix& pre, Activation act);
/// Gradient through an activation, expressed via its output `post`.
Matrix activation_backward(const Matrix& post, const Matrix& grad_out, Activation act);

// ---------------------------------------------------------------------------
// Single-head scaled dot-product attention

struct AttentionCoreCache {
    Matrix q, k, v;
    Matrix probs; // [S x S] row-stochastic
};

/// ctx = softmax(Q K^T / sqrt(d)) V
Matrix attention_core_forward(const Matrix& q, const Matrix& k, const Matrix& v, AttentionCoreCache* cache);
void attention_core_backward(const Matrix& grad_ctx, const AttentionCoreCache& cache, Matrix& grad_q,
                             Matrix& grad_k, Matrix& grad_v);

/// One attention layer with learnable positional embeddings and a residual:
///   h = x + pos[0:S];  out = Attn(h Wq^T, h Wk^T, h Wv^T) Wo^T + h
struct SelfAttention {
    Parameter wq, wk, wv, wo; // [d x d]
    Parameter pos;            // [S_max x d]

    static SelfAttention init(Eigen::Index dim, Eigen::Index max_len, Rng& rng);

    Eigen::Index dim() const { return wq.rows(); }
    Eigen::Index max_len() const { return pos.rows(); }
    ParameterRefs params() { return {&wq, &wk, &wv, &wo, &pos}; }
};

struct SelfAttentionCache {
    Matrix h;
    Matrix ctx;
    AttentionCoreCache core;
};

Matrix self_attention_forward(const Matrix& seq, const SelfAttention& attn, SelfAttentionCache* cache = nullptr);
Matrix self_attention_backward(const Matrix& grad_out, SelfAttention& attn, const SelfAttentionCache& cache);

// ---------------------------------------------------------------------------
// Row L2 normalization

/// Normalizes a vector to unit length; a zero vector is returned unchanged.
Vector l2_normalize(const Vector& x);
/// Gradient of y = x / |x| given dL/dy.
Vector l2_normalize_backward(const Vector& x, const Vector& grad_out);

} // namespace biofact
