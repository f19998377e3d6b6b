#include "biofact/core/layers.hpp"

#include <cmath>
#include <string>

namespace biofact {

namespace {

void require(bool ok, const std::string& what)
{
    if (!ok) throw DimensionError(what);
}

} // namespace

Linear Linear::init(Eigen::Index in, Eigen::Index out, Rng& rng)
{
    const double stddev = std::sqrt(2.0 / static_cast<double>(in + out));
    return Linear(rng.normal_matrix(out, in, stddev), Matrix::Zero(1, out));
}

Matrix linear_forward(const Matrix& x, const Parameter& weight, const Parameter& bias)
{
    require(x.cols() == weight.cols(),
            "linear: input " + shape_string(x) + " does not match weight " + shape_string(weight.value));
    require(bias.rows() == 1 && bias.cols() == weight.rows(),
            "linear: bias " + shape_string(bias.value) + " does not match weight " + shape_string(weight.value));
    Matrix y = x * weight.value.transpose();
    y.rowwise() += bias.value.row(0);
    ensure_finite(y, "linear_forward");
    return y;
}

Matrix linear_backward(const Matrix& x, const Matrix& grad_out, Parameter& weight, Parameter& bias)
{
    require(grad_out.rows() == x.rows() && grad_out.cols() == weight.rows(),
            "linear_backward: upstream gradient " + shape_string(grad_out) + " does not match output shape");
    weight.grad.noalias() += grad_out.transpose() * x;
    bias.grad.row(0) += grad_out.colwise().sum();
    return grad_out * weight.value;
}

LoraAdapter LoraAdapter::init(Eigen::Index in, Eigen::Index out, int rank, double alpha, Rng& rng, double a_std)
{
    if (rank < 1) throw ConfigError("lora: rank must be >= 1, got " + std::to_string(rank));
    LoraAdapter lora;
    lora.a = Parameter(rng.normal_matrix(rank, in, a_std));
    lora.b = Parameter(Matrix::Zero(out, rank));
    lora.alpha = alpha;
    lora.rank = rank;
    return lora;
}

Matrix lora_linear_forward(const Matrix& x, const Matrix& frozen, const LoraAdapter& lora)
{
    if (lora.rank < 1) throw ConfigError("lora: rank must be >= 1");
    require(x.cols() == frozen.cols(),
            "lora_linear: input " + shape_string(x) + " does not match frozen weight " + shape_string(frozen));
    require(lora.a.rows() == lora.rank && lora.a.cols() == frozen.cols() && lora.b.rows() == frozen.rows() &&
                lora.b.cols() == lora.rank,
            "lora_linear: adapter A " + shape_string(lora.a.value) + ", B " + shape_string(lora.b.value) +
                " do not match frozen weight " + shape_string(frozen));
    Matrix y = x * frozen.transpose();
    y += lora_delta(x, lora);
    ensure_finite(y, "lora_linear_forward");
    return y;
}

Matrix lora_delta(const Matrix& x, const LoraAdapter& lora)
{
    const Matrix low = x * lora.a.value.transpose();
    return lora.scale() * (low * lora.b.value.transpose());
}

Matrix lora_delta_backward(const Matrix& x, const Matrix& grad_out, LoraAdapter& lora)
{
    const double s = lora.scale();
    const Matrix low = x * lora.a.value.transpose();
    lora.b.grad.noalias() += s * (grad_out.transpose() * low);
    const Matrix grad_low = s * (grad_out * lora.b.value);
    lora.a.grad.noalias() += grad_low.transpose() * x;
    return grad_low * lora.a.value;
}

Matrix lora_linear_backward(const Matrix& x, const Matrix& grad_out, const Matrix& frozen, LoraAdapter& lora)
{
    require(grad_out.rows() == x.rows() && grad_out.cols() == frozen.rows(),
            "lora_linear_backward: upstream gradient " + shape_string(grad_out) + " does not match output shape");
    Matrix grad_x = grad_out * frozen;
    grad_x += lora_delta_backward(x, grad_out, lora);
    return grad_x;
}

Mlp Mlp::init(const std::vector<Eigen::Index>& dims, Rng& rng, Activation output)
{
    if (dims.size() < 2) throw ConfigError("mlp: need at least input and output widths");
    Mlp mlp;
    mlp.output = output;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) mlp.layers.push_back(Linear::init(dims[i], dims[i + 1], rng));
    return mlp;
}

ParameterRefs Mlp::params()
{
    ParameterRefs out;
    for (Linear& l : layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

Matrix apply_activation(const Matrix& pre, Activation act)
{
    switch (act) {
    case Activation::relu: return pre.cwiseMax(0.0);
    case Activation::sigmoid: return (1.0 / (1.0 + (-pre.array()).exp())).matrix();
    case Activation::identity: break;
    }
    return pre;
}

Matrix activation_backward(const Matrix& post, const Matrix& grad_out, Activation act)
{
    switch (act) {
    case Activation::relu: return (post.array() > 0.0).select(grad_out.array(), 0.0).matrix();
    case Activation::sigmoid: return (grad_out.array() * post.array() * (1.0 - post.array())).matrix();
    case Activation::identity: break;
    }
    return grad_out;
}

Matrix mlp_forward(const Matrix& x, const Mlp& mlp, MlpCache* cache)
{
    if (mlp.layers.empty()) throw ConfigError("mlp: no layers");
    if (cache) {
        cache->inputs.clear();
        cache->outputs.clear();
    }
    Matrix h = x;
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        const bool last = i + 1 == mlp.layers.size();
        if (cache) cache->inputs.push_back(h);
        h = apply_activation(linear_forward(h, mlp.layers[i]), last ? mlp.output : mlp.hidden);
        if (cache) cache->outputs.push_back(h);
    }
    return h;
}

Matrix mlp_backward(const Matrix& grad_out, Mlp& mlp, const MlpCache& cache)
{
    Matrix g = grad_out;
    for (std::size_t i = mlp.layers.size(); i-- > 0;) {
        const bool last = i + 1 == mlp.layers.size();
        g = activation_backward(cache.outputs[i], g, last ? mlp.output : mlp.hidden);
        g = linear_backward(cache.inputs[i], g, mlp.layers[i]);
    }
    return g;
}

Matrix attention_core_forward(const Matrix& q, const Matrix& k, const Matrix& v, AttentionCoreCache* cache)
{
    require(q.cols() == k.cols() && k.rows() == v.rows(),
            "attention: q " + shape_string(q) + ", k " + shape_string(k) + ", v " + shape_string(v) +
                " do not conform");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Matrix probs = softmax_rows(Matrix(inv_sqrt_d * (q * k.transpose())));
    Matrix ctx = probs * v;
    if (cache) {
        cache->q = q;
        cache->k = k;
        cache->v = v;
        cache->probs = std::move(probs);
    }
    return ctx;
}

void attention_core_backward(const Matrix& grad_ctx, const AttentionCoreCache& cache, Matrix& grad_q,
                             Matrix& grad_k, Matrix& grad_v)
{
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cache.q.cols()));
    grad_v = cache.probs.transpose() * grad_ctx;
    const Matrix grad_probs = grad_ctx * cache.v.transpose();
    const Matrix grad_scores = inv_sqrt_d * softmax_rows_backward(cache.probs, grad_probs);
    grad_q = grad_scores * cache.k;
    grad_k = grad_scores.transpose() * cache.q;
}

SelfAttention SelfAttention::init(Eigen::Index dim, Eigen::Index max_len, Rng& rng)
{
    const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
    SelfAttention attn;
    attn.wq = Parameter(rng.normal_matrix(dim, dim, stddev));
    attn.wk = Parameter(rng.normal_matrix(dim, dim, stddev));
    attn.wv = Parameter(rng.normal_matrix(dim, dim, stddev));
    attn.wo = Parameter(rng.normal_matrix(dim, dim, stddev));
    attn.pos = Parameter(rng.normal_matrix(max_len, dim, 0.02));
    return attn;
}

Matrix self_attention_forward(const Matrix& seq, const SelfAttention& attn, SelfAttentionCache* cache)
{
    const Eigen::Index len = seq.rows();
    if (len > attn.max_len()) {
        throw ConfigError("self_attention: sequence length " + std::to_string(len) + " exceeds capacity " +
                          std::to_string(attn.max_len()));
    }
    require(seq.cols() == attn.dim(),
            "self_attention: sequence " + shape_string(seq) + " does not match width " + std::to_string(attn.dim()));
    Matrix h = seq + attn.pos.value.topRows(len);
    SelfAttentionCache local;
    SelfAttentionCache& c = cache ? *cache : local;
    c.ctx = attention_core_forward(h * attn.wq.value.transpose(), h * attn.wk.value.transpose(),
                                   h * attn.wv.value.transpose(), &c.core);
    Matrix out = c.ctx * attn.wo.value.transpose() + h;
    c.h = std::move(h);
    ensure_finite(out, "self_attention_forward");
    return out;
}

Matrix self_attention_backward(const Matrix& grad_out, SelfAttention& attn, const SelfAttentionCache& cache)
{
    const Eigen::Index len = cache.h.rows();
    attn.wo.grad.noalias() += grad_out.transpose() * cache.ctx;
    const Matrix grad_ctx = grad_out * attn.wo.value;
    Matrix grad_q, grad_k, grad_v;
    attention_core_backward(grad_ctx, cache.core, grad_q, grad_k, grad_v);
    attn.wq.grad.noalias() += grad_q.transpose() * cache.h;
    attn.wk.grad.noalias() += grad_k.transpose() * cache.h;
    attn.wv.grad.noalias() += grad_v.transpose() * cache.h;
    Matrix grad_h = grad_out;
    grad_h.noalias() += grad_q * attn.wq.value;
    grad_h.noalias() += grad_k * attn.wk.value;
    grad_h.noalias() += grad_v * attn.wv.value;
    attn.pos.grad.topRows(len) += grad_h;
    return grad_h;
}

Vector l2_normalize(const Vector& x)
{
    const double n = x.norm();
    if (n == 0.0) return x;
    return x / n;
}

Vector l2_normalize_backward(const Vector& x, const Vector& grad_out)
{
    const double n = x.norm();
    if (n == 0.0) return grad_out;
    const Vector y = x / n;
    return (grad_out - y * y.dot(grad_out)) / n;
}

} // namespace biofact
