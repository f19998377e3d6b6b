#include "biofact/survival/head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "biofact/core/adamw.hpp"
#include "biofact/core/rng.hpp"
#include "biofact/pretrain/pretrain.hpp"
#include "biofact/survival/cox.hpp"

namespace biofact::survival {

using nlohmann::json;

std::string to_string(HeadVariant v)
{
    switch (v) {
    case HeadVariant::full: return "full";
    case HeadVariant::base_only: return "base_only";
    case HeadVariant::liver_only: return "liver_only";
    case HeadVariant::tumor_only: return "tumor_only";
    case HeadVariant::liver_base: return "liver_base";
    case HeadVariant::tumor_base: return "tumor_base";
    case HeadVariant::joint_no_moe: return "joint_no_moe";
    case HeadVariant::liver_tumor_no_base: return "liver_tumor_no_base";
    }
    return "unknown";
}

HeadVariant parse_head_variant(const std::string& name)
{
    for (HeadVariant v : {HeadVariant::full, HeadVariant::base_only, HeadVariant::liver_only, HeadVariant::tumor_only,
                          HeadVariant::liver_base, HeadVariant::tumor_base, HeadVariant::joint_no_moe,
                          HeadVariant::liver_tumor_no_base})
        if (to_string(v) == name) return v;
    throw ConfigError("unknown head variant '" + name + "'");
}

HeadLayout layout_of(HeadVariant v)
{
    switch (v) {
    case HeadVariant::full: return {true, true, true, true, true};
    case HeadVariant::base_only: return {true, false, false, false, false};
    case HeadVariant::liver_only: return {false, true, false, false, true};
    case HeadVariant::tumor_only: return {false, false, true, false, true};
    case HeadVariant::liver_base: return {true, true, false, false, true};
    case HeadVariant::tumor_base: return {true, false, true, false, true};
    case HeadVariant::joint_no_moe: return {true, true, true, false, false};
    case HeadVariant::liver_tumor_no_base: return {false, true, true, true, true};
    }
    return {};
}

int SurvivalHeadParams::gate_input_dim() const
{
    return (layout().base ? 3 : 2) * dims.embed_dim;
}

int SurvivalHeadParams::alpha_input_dim() const
{
    const HeadLayout l = layout();
    return (l.base ? dims.embed_dim : 0) + (l.liver ? dims.expert_dim : 0) + (l.tumor ? dims.expert_dim : 0);
}

SurvivalHeadParams SurvivalHeadParams::init(HeadVariant variant, const HeadDims& dims, std::uint64_t seed)
{
    SurvivalHeadParams p;
    p.variant = variant;
    p.dims = dims;
    const HeadLayout l = p.layout();
    auto rng_for = [&](const char* tag) { return Rng(derive_seed(seed, tag)); };
    if (l.base) {
        Rng r = rng_for("h_base");
        p.h_base = Linear::init(dims.embed_dim, 1, r);
    }
    if (l.liver) {
        Rng r = rng_for("expert_liver");
        p.expert_liver = Mlp::init({dims.embed_dim, dims.expert_hidden, dims.expert_dim}, r);
        p.risk_liver = Linear::init(dims.expert_dim, 1, r);
    }
    if (l.tumor) {
        Rng r = rng_for("expert_tumor");
        p.expert_tumor = Mlp::init({dims.embed_dim, dims.expert_hidden, dims.expert_dim}, r);
        p.risk_tumor = Linear::init(dims.expert_dim, 1, r);
    }
    if (l.gate) {
        Rng r = rng_for("gate");
        p.gate = Linear::init(p.gate_input_dim(), 2, r);
    }
    if (l.alpha) {
        Rng r = rng_for("alpha");
        p.alpha_mlp = Mlp::init({p.alpha_input_dim(), dims.alpha_hidden, 1}, r, Activation::sigmoid);
    }
    return p;
}

std::vector<NamedParameter> SurvivalHeadParams::named()
{
    const HeadLayout l = layout();
    std::vector<NamedParameter> out;
    auto add_mlp = [&](const std::string& prefix, Mlp& m) {
        for (std::size_t i = 0; i < m.layers.size(); ++i) {
            out.push_back({prefix + "." + std::to_string(i) + ".weight", &m.layers[i].weight});
            out.push_back({prefix + "." + std::to_string(i) + ".bias", &m.layers[i].bias});
        }
    };
    if (l.base) {
        out.push_back({"h_base.weight", &h_base.weight});
        out.push_back({"h_base.bias", &h_base.bias});
    }
    if (l.liver) {
        add_mlp("expert_liver", expert_liver);
        out.push_back({"risk_liver.weight", &risk_liver.weight});
        out.push_back({"risk_liver.bias", &risk_liver.bias});
    }
    if (l.tumor) {
        add_mlp("expert_tumor", expert_tumor);
        out.push_back({"risk_tumor.weight", &risk_tumor.weight});
        out.push_back({"risk_tumor.bias", &risk_tumor.bias});
    }
    if (l.gate) {
        out.push_back({"gate.weight", &gate.weight});
        out.push_back({"gate.bias", &gate.bias});
    }
    if (l.alpha) add_mlp("alpha_mlp", alpha_mlp);
    return out;
}

ParameterRefs SurvivalHeadParams::params()
{
    ParameterRefs out;
    for (auto& np : named()) out.push_back(np.param);
    return out;
}

namespace {

Matrix gate_input_batch(const Matrix& zb, const Matrix& zl, const Matrix& zt, bool with_base)
{
    const Matrix dz = zl - zt;
    const Eigen::Index d = zl.cols();
    const Eigen::Index off = with_base ? d : 0;
    Matrix g(zl.rows(), off + 2 * d);
    if (with_base) g.leftCols(d) = zb;
    g.middleCols(off, d) = dz;
    g.middleCols(off + d, d) = dz.cwiseAbs();
    return g;
}

} // namespace

Vector risk_forward_batch(const Matrix& zb, const Matrix& zl, const Matrix& zt, const SurvivalHeadParams& p,
                          HeadCache* cache)
{
    const HeadLayout l = p.layout();
    const Eigen::Index n = zb.rows();
    const Eigen::Index d = p.dims.embed_dim;
    if (zb.cols() != d || zl.cols() != d || zt.cols() != d || zl.rows() != n || zt.rows() != n)
        throw ConfigError("risk_forward: embeddings must be n x " + std::to_string(d) + " (got " + shape_string(zb) +
                          ", " + shape_string(zl) + ", " + shape_string(zt) + ")");
    HeadCache local;
    HeadCache& c = cache ? *cache : local;
    c.zb = zb;
    c.zl = zl;
    c.zt = zt;

    c.base = l.base ? linear_forward(zb, p.h_base) : Matrix::Zero(n, 1);
    if (l.liver) {
        c.el = mlp_forward(zl, p.expert_liver, &c.el_cache);
        c.dl = linear_forward(c.el, p.risk_liver);
    } else {
        c.el.resize(n, 0);
        c.dl = Matrix::Zero(n, 1);
    }
    if (l.tumor) {
        c.et = mlp_forward(zt, p.expert_tumor, &c.et_cache);
        c.dt = linear_forward(c.et, p.risk_tumor);
    } else {
        c.et.resize(n, 0);
        c.dt = Matrix::Zero(n, 1);
    }

    c.w.resize(n, 2);
    if (l.gate) {
        c.gate_in = gate_input_batch(zb, zl, zt, l.base);
        c.w = softmax_rows(linear_forward(c.gate_in, p.gate));
    } else {
        // Single expert: its weight is fixed at 1. Joint model: both fixed at 1.
        c.w.col(0).setConstant(l.liver ? 1.0 : 0.0);
        c.w.col(1).setConstant(l.tumor ? 1.0 : 0.0);
    }

    if (l.alpha) {
        c.alpha_in.resize(n, p.alpha_input_dim());
        Eigen::Index off = 0;
        if (l.base) {
            c.alpha_in.middleCols(off, d) = zb;
            off += d;
        }
        if (l.liver) {
            c.alpha_in.middleCols(off, c.el.cols()) = c.el;
            off += c.el.cols();
        }
        if (l.tumor) c.alpha_in.middleCols(off, c.et.cols()) = c.et;
        c.alpha = mlp_forward(c.alpha_in, p.alpha_mlp, &c.alpha_cache);
    } else {
        c.alpha = Matrix::Ones(n, 1);
    }

    c.total.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
        c.total[i] = c.base(i, 0) + c.alpha(i, 0) * (c.w(i, 0) * c.dl(i, 0) + c.w(i, 1) * c.dt(i, 0));
    ensure_finite(c.total, "risk_forward");
    return c.total;
}

void risk_backward_batch(const Vector& grad_total, SurvivalHeadParams& p, const HeadCache& c)
{
    const HeadLayout l = p.layout();
    const Eigen::Index n = grad_total.size();
    const Matrix g = grad_total;

    if (l.base) linear_backward(c.zb, g, p.h_base);

    Matrix mix(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) mix(i, 0) = c.w(i, 0) * c.dl(i, 0) + c.w(i, 1) * c.dt(i, 0);
    const Matrix grad_mix = g.cwiseProduct(c.alpha);

    Matrix grad_el = Matrix::Zero(n, c.el.cols());
    Matrix grad_et = Matrix::Zero(n, c.et.cols());

    if (l.alpha) {
        const Matrix grad_alpha = g.cwiseProduct(mix);
        const Matrix grad_in = mlp_backward(grad_alpha, p.alpha_mlp, c.alpha_cache);
        Eigen::Index off = l.base ? p.dims.embed_dim : 0;
        if (l.liver) {
            grad_el += grad_in.middleCols(off, c.el.cols());
            off += c.el.cols();
        }
        if (l.tumor) grad_et += grad_in.middleCols(off, c.et.cols());
    }

    if (l.gate) {
        Matrix grad_w(n, 2);
        grad_w.col(0) = grad_mix.col(0).cwiseProduct(c.dl.col(0));
        grad_w.col(1) = grad_mix.col(0).cwiseProduct(c.dt.col(0));
        linear_backward(c.gate_in, softmax_rows_backward(c.w, grad_w), p.gate);
    }

    if (l.liver) {
        const Matrix grad_dl = grad_mix.cwiseProduct(c.w.col(0));
        grad_el += linear_backward(c.el, grad_dl, p.risk_liver);
        mlp_backward(grad_el, p.expert_liver, c.el_cache);
    }
    if (l.tumor) {
        const Matrix grad_dt = grad_mix.cwiseProduct(c.w.col(1));
        grad_et += linear_backward(c.et, grad_dt, p.risk_tumor);
        mlp_backward(grad_et, p.expert_tumor, c.et_cache);
    }
}

void stack_embeddings(const std::vector<PathwayEmbeddings>& zs, Matrix& zb, Matrix& zl, Matrix& zt)
{
    const auto n = static_cast<Eigen::Index>(zs.size());
    const Eigen::Index d = zs.empty() ? 0 : zs.front().z_base.size();
    zb.resize(n, d);
    zl.resize(n, d);
    zt.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& z = zs[static_cast<std::size_t>(i)];
        if (z.z_base.size() != d || z.z_liver.size() != d || z.z_tumor.size() != d)
            throw ConfigError("pathway embeddings must share one dimensionality");
        zb.row(i) = z.z_base.transpose();
        zl.row(i) = z.z_liver.transpose();
        zt.row(i) = z.z_tumor.transpose();
    }
}

std::vector<RiskDecomposition> risk_forward_all(const std::vector<PathwayEmbeddings>& zs,
                                                const SurvivalHeadParams& p)
{
    Matrix zb, zl, zt;
    stack_embeddings(zs, zb, zl, zt);
    HeadCache c;
    risk_forward_batch(zb, zl, zt, p, &c);
    const HeadLayout l = p.layout();
    std::vector<RiskDecomposition> out(zs.size());
    for (std::size_t k = 0; k < zs.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        RiskDecomposition& r = out[k];
        r.base_risk = c.base(i, 0);
        if (l.liver) r.e_liver = c.el.row(i).transpose();
        if (l.tumor) r.e_tumor = c.et.row(i).transpose();
        r.delta_r_liver = c.dl(i, 0);
        r.delta_r_tumor = c.dt(i, 0);
        r.alpha = c.alpha(i, 0);
        if (l.gate) r.gate.g = c.gate_in.row(i).transpose();
        r.gate.w_liver = c.w(i, 0);
        r.gate.w_tumor = c.w(i, 1);
        r.total_risk = c.total[i];
    }
    return out;
}

RiskDecomposition risk_forward(const PathwayEmbeddings& z, const SurvivalHeadParams& p)
{
    return risk_forward_all({z}, p).front();
}

GateOutput gate_forward(const PathwayEmbeddings& z, const SurvivalHeadParams& p)
{
    const HeadLayout l = p.layout();
    const Eigen::Index d = p.dims.embed_dim;
    if (z.z_base.size() != d || z.z_liver.size() != d || z.z_tumor.size() != d)
        throw ConfigError("gate_forward: embeddings must have dimension " + std::to_string(d));
    if (!l.gate) throw ConfigError("gate_forward: variant " + to_string(p.variant) + " has no gate");
    const Matrix g = gate_input_batch(z.z_base.transpose(), z.z_liver.transpose(), z.z_tumor.transpose(), l.base);
    const Vector w = softmax_row(Vector(linear_forward(g, p.gate).row(0).transpose()));
    return GateOutput{g.row(0).transpose(), w[0], w[1]};
}

std::string to_string(Phenotype p)
{
    return p == Phenotype::liver_driven ? "liver_driven" : "tumor_driven";
}

Phenotype stratify_phenotype(const GateOutput& gate)
{
    return gate.w_liver >= 0.5 ? Phenotype::liver_driven : Phenotype::tumor_driven;
}

void SurvivalTrainConfig::validate() const
{
    if (epochs < 0) throw ConfigError("survival: epochs must be >= 0");
    if (batch_size < 2) throw ConfigError("survival: batch_size must be >= 2");
    if (!(learning_rate > 0.0)) throw ConfigError("survival: learning_rate must be > 0");
    if (weight_decay < 0.0) throw ConfigError("survival: weight_decay must be >= 0");
    if (tie_handling != "breslow") throw ConfigError("survival: only breslow tie handling is supported");
}

json to_json(const SurvivalTrainConfig& c)
{
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"weight_decay", c.weight_decay},
                {"tie_handling", c.tie_handling}};
}

SurvivalTrainConfig survival_config_from_json(const json& j)
{
    if (!j.is_object()) throw ConfigError("survival config must be an object");
    SurvivalTrainConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "epochs") c.epochs = value.get<int>();
            else if (key == "batch_size") c.batch_size = value.get<int>();
            else if (key == "learning_rate") c.learning_rate = value.get<double>();
            else if (key == "weight_decay") c.weight_decay = value.get<double>();
            else if (key == "tie_handling") c.tie_handling = value.get<std::string>();
            else throw ConfigError("survival: unknown key '" + key + "'");
        } catch (const json::exception& e) {
            throw ConfigError("survival." + key + ": " + e.what());
        }
    }
    return c;
}

double head_cox_loss(SurvivalHeadParams& params, const Matrix& zb, const Matrix& zl, const Matrix& zt,
                     const Vector& times, const std::vector<bool>& events, bool accumulate_grad)
{
    HeadCache cache;
    const Vector risks = risk_forward_batch(zb, zl, zt, params, &cache);
    const CoxResult cox = cox_nll(risks, times, events);
    if (accumulate_grad) risk_backward_batch(cox.grad, params, cache);
    return cox.loss;
}

SurvivalTrainResult train_survival(SurvivalHeadParams& params, const std::vector<PathwayEmbeddings>& embeddings,
                                   const std::vector<cohort::SurvivalRecord>& records, const SurvivalTrainConfig& cfg,
                                   std::uint64_t seed)
{
    cfg.validate();
    const std::size_t n = embeddings.size();
    if (n != records.size() || n < 2)
        throw InputError("train_survival: need >= 2 patients with one record per embedding");
    std::vector<std::size_t> event_idx, censor_idx;
    for (std::size_t i = 0; i < n; ++i) (records[i].event ? event_idx : censor_idx).push_back(i);
    if (event_idx.empty()) throw UndefinedError("train_survival: cohort has no events");

    Matrix zb, zl, zt;
    stack_embeddings(embeddings, zb, zl, zt);
    Vector times(static_cast<Eigen::Index>(n));
    std::vector<bool> events(n);
    for (std::size_t i = 0; i < n; ++i) {
        times[static_cast<Eigen::Index>(i)] = records[i].time_months;
        events[i] = records[i].event;
    }

    const AdamWConfig opt{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay};
    const ParameterRefs ps = params.params();
    for (Parameter* p : ps) p->reset_state();
    Rng rng(derive_seed(seed, "survival-batches"));
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t n_batches = std::min((n + bs - 1) / bs, event_idx.size());

    SurvivalTrainResult result;
    std::vector<std::vector<std::size_t>> batches(n_batches);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(event_idx);
        rng.shuffle(censor_idx);
        for (auto& b : batches) b.clear();
        std::size_t slot = 0;
        for (std::size_t i : event_idx) batches[slot++ % n_batches].push_back(i);
        for (std::size_t i : censor_idx) batches[slot++ % n_batches].push_back(i);

        double total = 0.0;
        for (const auto& b : batches) {
            const auto m = static_cast<Eigen::Index>(b.size());
            Matrix bzb(m, zb.cols()), bzl(m, zl.cols()), bzt(m, zt.cols());
            Vector bt(m);
            std::vector<bool> be(b.size());
            for (Eigen::Index k = 0; k < m; ++k) {
                const auto i = static_cast<Eigen::Index>(b[static_cast<std::size_t>(k)]);
                bzb.row(k) = zb.row(i);
                bzl.row(k) = zl.row(i);
                bzt.row(k) = zt.row(i);
                bt[k] = times[i];
                be[static_cast<std::size_t>(k)] = events[static_cast<std::size_t>(i)];
            }
            zero_grads(ps);
            total += head_cox_loss(params, bzb, bzl, bzt, bt, be, true);
            adamw_step(ps, opt);
        }
        result.epoch_loss.push_back(total / static_cast<double>(batches.size()));
        result.full_loss.push_back(cox_nll(risk_forward_batch(zb, zl, zt, params), times, events).loss);
    }
    return result;
}

json to_json(SurvivalHeadParams& params)
{
    json tensors = json::object();
    for (const auto& np : params.named()) tensors[np.name] = pretrain::tensor_to_json(np.param->value);
    const HeadDims& d = params.dims;
    return json{{"format", "biofact-head-checkpoint"},
                {"version", 1},
                {"variant", to_string(params.variant)},
                {"dims",
                 {{"embed_dim", d.embed_dim},
                  {"expert_dim", d.expert_dim},
                  {"expert_hidden", d.expert_hidden},
                  {"alpha_hidden", d.alpha_hidden}}},
                {"tensors", tensors}};
}

SurvivalHeadParams head_from_json(const json& j)
{
    try {
        if (j.at("format").get<std::string>() != "biofact-head-checkpoint")
            throw ParseError("head checkpoint: unexpected format tag");
        HeadDims d;
        const auto& jd = j.at("dims");
        d.embed_dim = jd.at("embed_dim").get<int>();
        d.expert_dim = jd.at("expert_dim").get<int>();
        d.expert_hidden = jd.at("expert_hidden").get<int>();
        d.alpha_hidden = jd.at("alpha_hidden").get<int>();
        SurvivalHeadParams p = SurvivalHeadParams::init(parse_head_variant(j.at("variant").get<std::string>()), d, 0);
        const auto& tensors = j.at("tensors");
        for (auto& np : p.named()) {
            Matrix m = pretrain::tensor_from_json(tensors.at(np.name), np.name);
            if (m.rows() != np.param->rows() || m.cols() != np.param->cols())
                throw ParseError("head tensor '" + np.name + "' has wrong shape");
            *np.param = Parameter(std::move(m));
        }
        return p;
    } catch (const json::exception& e) {
        throw ParseError(std::string("head checkpoint: ") + e.what());
    } catch (const ConfigError& e) {
        throw ParseError(std::string("head checkpoint: ") + e.what());
    }
}

} // namespace biofact::survival
