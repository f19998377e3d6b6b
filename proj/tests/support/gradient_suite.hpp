#pragma once

// Finite-difference checks of every hand-written backward pass, shared by the
// unit tests and the acceptance runner.

#include <cstdint>
#include <string>
#include <vector>

#include "biofact/core/gradcheck.hpp"
#include "biofact/core/layers.hpp"
#include "biofact/core/rng.hpp"
#include "biofact/pretrain/info_nce.hpp"
#include "biofact/survival/cox.hpp"
#include "biofact/survival/head.hpp"

namespace biofact::testing {

struct GradCase {
    std::string op;
    std::uint64_t seed = 0;
    double max_rel_error = 0.0;
    std::string detail;
};

inline double weighted_sum(const Matrix& y, const Matrix& r)
{
    return (y.array() * r.array()).sum();
}

inline void perturb(Parameter& p, Rng& rng, double scale)
{
    p.value = p.value + rng.normal_matrix(p.rows(), p.cols(), scale);
    p.zero_grad();
}

inline GradCase finish(const std::string& op, std::uint64_t seed, const GradCheckReport& rep,
                       const std::vector<GradCheckEntry>& extra = {})
{
    double worst = rep.max_rel_error();
    std::string detail = rep.summary();
    for (const auto& e : extra) {
        worst = std::max(worst, e.max_rel_error);
        detail += " " + e.name + "=" + std::to_string(e.max_rel_error);
    }
    return {op, seed, worst, detail};
}

inline GradCase check_linear(std::uint64_t seed, double h, double tol)
{
    Rng rng(seed);
    Linear lin = Linear::init(4, 3, rng);
    perturb(lin.bias, rng, 0.5);
    const Matrix x = rng.normal_matrix(5, 4, 1.0);
    const Matrix r = rng.normal_matrix(5, 3, 1.0);
    const Matrix gx = linear_backward(x, r, lin);
    const auto rep = finite_difference_check([&] { return weighted_sum(linear_forward(x, lin), r); },
                                             {{"weight", &lin.weight}, {"bias", &lin.bias}}, h, tol);
    const auto in = finite_difference_check_input(
        [&](const Matrix& xx) { return weighted_sum(linear_forward(xx, lin), r); }, x, gx, h, "x");
    return finish("linear", seed, rep, {in});
}

inline GradCase check_lora(std::uint64_t seed, double h, double tol)
{
    Rng rng(seed);
    const Matrix frozen = rng.normal_matrix(6, 5, 0.5);
    LoraAdapter lora = LoraAdapter::init(5, 6, 2, 4.0, rng, 0.5);
    perturb(lora.b, rng, 0.5);
    const Matrix x = rng.normal_matrix(4, 5, 1.0);
    const Matrix r = rng.normal_matrix(4, 6, 1.0);
    const Matrix gx = lora_linear_backward(x, r, frozen, lora);
    const auto rep = finite_difference_check([&] { return weighted_sum(lora_linear_forward(x, frozen, lora), r); },
                                             {{"A", &lora.a}, {"B", &lora.b}}, h, tol);
    const auto in = finite_difference_check_input(
        [&](const Matrix& xx) { return weighted_sum(lora_linear_forward(xx, frozen, lora), r); }, x, gx, h, "x");
    return finish("lora_linear", seed, rep, {in});
}

inline GradCase check_mlp(std::uint64_t seed, double h, double tol)
{
    Rng rng(seed);
    Mlp mlp = Mlp::init({5, 7, 3}, rng);
    for (auto& l : mlp.layers) perturb(l.bias, rng, 0.3);
    const Matrix x = rng.normal_matrix(4, 5, 1.0);
    const Matrix r = rng.normal_matrix(4, 3, 1.0);
    MlpCache cache;
    mlp_forward(x, mlp, &cache);
    const Matrix gx = mlp_backward(r, mlp, cache);
    std::vector<NamedParameter> named;
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        named.push_back({"layer" + std::to_string(i) + ".weight", &mlp.layers[i].weight});
        named.push_back({"layer" + std::to_string(i) + ".bias", &mlp.layers[i].bias});
    }
    const auto rep = finite_difference_check([&] { return weighted_sum(mlp_forward(x, mlp), r); }, named, h, tol);
    const auto in = finite_difference_check_input(
        [&](const Matrix& xx) { return weighted_sum(mlp_forward(xx, mlp), r); }, x, gx, h, "x");
    return finish("mlp", seed, rep, {in});
}

inline GradCase check_attention(std::uint64_t seed, double h, double tol)
{
    Rng rng(seed);
    SelfAttention attn = SelfAttention::init(8, 6, rng);
    perturb(attn.pos, rng, 0.3);
    const Matrix x = rng.normal_matrix(4, 8, 1.0);
    const Matrix r = rng.normal_matrix(4, 8, 1.0);
    SelfAttentionCache cache;
    self_attention_forward(x, attn, &cache);
    const Matrix gx = self_attention_backward(r, attn, cache);
    const auto rep = finite_difference_check([&] { return weighted_sum(self_attention_forward(x, attn), r); },
                                             {{"wq", &attn.wq},
                                              {"wk", &attn.wk},
                                              {"wv", &attn.wv},
                                              {"wo", &attn.wo},
                                              {"pos", &attn.pos}},
                                             h, tol);
    const auto in = finite_difference_check_input(
        [&](const Matrix& xx) { return weighted_sum(self_attention_forward(xx, attn), r); }, x, gx, h, "x");
    return finish("attention", seed, rep, {in});
}

inline GradCase check_info_nce(std::uint64_t seed, double h, double tol)
{
    Rng rng(seed);
    const Matrix img = rng.normal_matrix(6, 5, 0.5);
    const Matrix txt = rng.normal_matrix(6, 5, 0.5);
    const double tau = 0.5;
    const auto res = pretrain::info_nce_unchecked(img, txt, tau);
    const auto gi = finite_difference_check_input(
        [&](const Matrix& m) { return pretrain::info_nce_unchecked(m, txt, tau).loss; }, img, res.grad_img, h, "img");
    const auto gt = finite_difference_check_input(
        [&](const Matrix& m) { return pretrain::info_nce_unchecked(img, m, tau).loss; }, txt, res.grad_txt, h, "txt");
    GradCheckReport empty;
    empty.tolerance = tol;
    return finish("info_nce", seed, empty, {gi, gt});
}

inline GradCase check_cox(std::uint64_t seed, double h, double tol)
{
    Rng rng(seed);
    const int n = 12;
    Vector risks(n), times(n);
    std::vector<bool> events(n);
    for (int i = 0; i < n; ++i) {
        risks[i] = rng.normal();
        times[i] = 1.0 + static_cast<double>(rng.below(6)); // ties on purpose
        events[i] = rng.uniform() < 0.7;
    }
    events[0] = true;
    const auto res = survival::cox_nll(risks, times, events);
    const Matrix r = risks;
    const Matrix g = res.grad;
    const auto e = finite_difference_check_input(
        [&](const Matrix& m) { return survival::cox_nll(Vector(m), times, events).loss; }, r, g, h, "risks");
    GradCheckReport empty;
    empty.tolerance = tol;
    return finish("cox_nll", seed, empty, {e});
}

struct HeadProblem {
    survival::SurvivalHeadParams params;
    Matrix zb, zl, zt;
    Vector times;
    std::vector<bool> events;
    Vector weights; // for linear probes of the total risk
};

inline HeadProblem make_head_problem(std::uint64_t seed)
{
    Rng rng(seed);
    survival::HeadDims dims;
    dims.embed_dim = 6;
    dims.expert_dim = 4;
    dims.expert_hidden = 5;
    dims.alpha_hidden = 4;
    HeadProblem p{survival::SurvivalHeadParams::init(survival::HeadVariant::full, dims, seed), {}, {}, {}, {}, {}, {}};
    for (auto& np : p.params.named()) perturb(*np.param, rng, 0.3);
    const int n = 10;
    p.zb = rng.normal_matrix(n, 6, 1.0);
    p.zl = rng.normal_matrix(n, 6, 1.0);
    p.zt = rng.normal_matrix(n, 6, 1.0);
    p.times.resize(n);
    p.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        p.times[i] = 1.0 + rng.uniform() * 10.0;
        p.events.push_back(rng.uniform() < 0.7);
        p.weights[i] = rng.normal();
    }
    p.events[0] = true;
    return p;
}

/// Gradient of sum_i c_i r_i restricted to parameters whose name starts with `prefix`.
inline GradCase check_head_component(const std::string& op, const std::string& prefix, std::uint64_t seed, double h,
                                     double tol)
{
    HeadProblem p = make_head_problem(seed);
    survival::HeadCache cache;
    survival::risk_forward_batch(p.zb, p.zl, p.zt, p.params, &cache);
    for (auto* q : p.params.params()) q->zero_grad();
    survival::risk_backward_batch(p.weights, p.params, cache);
    std::vector<NamedParameter> subset;
    for (auto& np : p.params.named())
        if (np.name.rfind(prefix, 0) == 0) subset.push_back(np);
    const auto rep = finite_difference_check(
        [&] { return p.weights.dot(survival::risk_forward_batch(p.zb, p.zl, p.zt, p.params)); }, subset, h, tol);
    return finish(op, seed, rep);
}

inline GradCase check_head_cox(std::uint64_t seed, double h, double tol)
{
    HeadProblem p = make_head_problem(seed);
    survival::HeadCache cache;
    const Vector r = survival::risk_forward_batch(p.zb, p.zl, p.zt, p.params, &cache);
    for (auto* q : p.params.params()) q->zero_grad();
    survival::risk_backward_batch(survival::cox_nll(r, p.times, p.events).grad, p.params, cache);
    // The partial likelihood ignores a common shift, so the base bias has an
    // exactly zero gradient; a relative check there only measures roundoff.
    std::vector<NamedParameter> checked;
    GradCheckEntry bias{"h_base.bias(|grad|)", 0.0, 0};
    for (auto& np : p.params.named()) {
        if (np.name == "h_base.bias")
            bias.max_rel_error = np.param->grad.cwiseAbs().maxCoeff() < 1e-12 ? 0.0 : 1.0;
        else
            checked.push_back(np);
    }
    const auto rep = finite_difference_check(
        [&] {
            return survival::cox_nll(survival::risk_forward_batch(p.zb, p.zl, p.zt, p.params), p.times, p.events).loss;
        },
        checked, h, tol);
    return finish("head_end_to_end", seed, rep, {bias});
}

inline std::vector<GradCase> run_gradient_suite(int seeds, double h = 1e-5, double tol = 1e-4)
{
    std::vector<GradCase> out;
    for (int s = 1; s <= seeds; ++s) {
        const auto seed = static_cast<std::uint64_t>(1000 + s);
        out.push_back(check_linear(seed, h, tol));
        out.push_back(check_lora(seed, h, tol));
        out.push_back(check_mlp(seed, h, tol));
        out.push_back(check_attention(seed, h, tol));
        out.push_back(check_info_nce(seed, h, tol));
        out.push_back(check_head_component("gate", "gate.", seed, h, tol));
        out.push_back(check_head_component("alpha_mlp", "alpha_mlp.", seed, h, tol));
        out.push_back(check_cox(seed, h, tol));
        out.push_back(check_head_cox(seed, h, tol));
    }
    return out;
}

} // namespace biofact::testing
