#include "biofact/pretrain/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "biofact/core/rng.hpp"

namespace biofact::pretrain {

using cohort::kOrganCount;
using cohort::Organ;

std::string to_string(PathwayId p)
{
    switch (p) {
    case PathwayId::general: return "general";
    case PathwayId::liver: return "liver";
    case PathwayId::tumor: return "tumor";
    }
    return "unknown";
}

PathwayId parse_pathway(const std::string& name)
{
    if (name == "general") return PathwayId::general;
    if (name == "liver") return PathwayId::liver;
    if (name == "tumor") return PathwayId::tumor;
    throw ConfigError("unknown pathway '" + name + "' (expected general, liver or tumor)");
}

std::array<bool, kOrganCount> organ_set(PathwayId p)
{
    std::array<bool, kOrganCount> set{};
    switch (p) {
    case PathwayId::general: set.fill(true); break;
    case PathwayId::liver:
        set[static_cast<int>(Organ::liver)] = true;
        set[static_cast<int>(Organ::spleen)] = true;
        break;
    case PathwayId::tumor:
        set[static_cast<int>(Organ::liver)] = true;
        set[static_cast<int>(Organ::portal_vein)] = true;
        set[static_cast<int>(Organ::ivc)] = true;
        break;
    }
    return set;
}

Vector anatomical_patch_weights(const Matrix& occupancy, PathwayId pathway)
{
    if (occupancy.cols() != kOrganCount)
        throw DimensionError("anatomical_patch_weights: occupancy has " + std::to_string(occupancy.cols()) +
                             " organ columns, expected " + std::to_string(kOrganCount));
    if (pathway == PathwayId::general) return Vector::Ones(occupancy.rows());
    const auto set = organ_set(pathway);
    Vector w = Vector::Zero(occupancy.rows());
    for (Eigen::Index i = 0; i < occupancy.rows(); ++i) {
        double sum = 0.0;
        for (int o = 0; o < kOrganCount; ++o)
            if (set[static_cast<std::size_t>(o)]) sum += occupancy(i, o);
        w[i] = std::clamp(sum, 0.0, 1.0);
    }
    return w;
}

Vector masked_pool(const Matrix& tokens, const Vector& weights, PoolStats* stats)
{
    if (tokens.rows() != weights.size())
        throw DimensionError("masked_pool: " + std::to_string(tokens.rows()) + " tokens but " +
                             std::to_string(weights.size()) + " weights");
    const double total = weights.sum();
    if (total == 0.0) {
        if (stats) ++stats->degenerate_slices;
        return tokens.colwise().mean().transpose();
    }
    return (tokens.transpose() * weights) / total;
}

FrozenBackbone FrozenBackbone::init(const EncoderDims& d, std::uint64_t seed)
{
    Rng rng(derive_seed(seed, "frozen-backbone"));
    FrozenBackbone b;
    b.seed = seed;
    b.patch_embed_w = rng.normal_matrix(d.model_dim, d.token_dim, 1.0 / std::sqrt(static_cast<double>(d.token_dim)));
    b.patch_embed_b = rng.normal_matrix(1, d.model_dim, 0.1);
    const double s = 1.0 / std::sqrt(static_cast<double>(d.model_dim));
    b.wq = rng.normal_matrix(d.model_dim, d.model_dim, s);
    b.wk = rng.normal_matrix(d.model_dim, d.model_dim, s);
    b.wv = rng.normal_matrix(d.model_dim, d.model_dim, s);
    b.wo = rng.normal_matrix(d.model_dim, d.model_dim, s);
    {
        // Tokens come in groups of `levels` ordered bins of one finding; a
        // group shares a direction and the bin sets the signed magnitude.
        const int levels = d.token_levels;
        const Matrix dirs = rng.normal_matrix((d.vocab_size + levels - 1) / levels, d.text_dim, 1.0);
        const Matrix jitter = rng.normal_matrix(d.vocab_size, d.text_dim, 1.0);
        b.token_table.resize(d.vocab_size, d.text_dim);
        for (int t = 0; t < d.vocab_size; ++t) {
            const double lv = (t % levels - (levels - 1) / 2.0) / ((levels - 1) / 2.0);
            b.token_table.row(t) = dirs.row(t / levels) * lv + 0.3 * jitter.row(t);
        }
    }
    b.text_proj = rng.normal_matrix(d.embed_dim, d.text_dim, 1.0 / std::sqrt(static_cast<double>(d.text_dim)));
    return b;
}

std::uint64_t FrozenBackbone::checksum() const
{
    std::uint64_t h = fnv1a("frozen-backbone");
    for (const Matrix* m : {&patch_embed_w, &patch_embed_b, &wq, &wk, &wv, &wo, &token_table, &text_proj})
        h = fnv1a_doubles(m->data(), static_cast<std::size_t>(m->size()), h);
    return h;
}

PathwayAdapter PathwayAdapter::init(PathwayId pathway, const EncoderDims& d, Rng& rng)
{
    PathwayAdapter a;
    a.pathway = pathway;
    a.lora_q = LoraAdapter::init(d.model_dim, d.model_dim, d.lora_rank, d.lora_alpha, rng);
    a.lora_v = LoraAdapter::init(d.model_dim, d.model_dim, d.lora_rank, d.lora_alpha, rng);
    a.lora_text = LoraAdapter::init(d.text_dim, d.embed_dim, d.lora_rank, d.lora_alpha, rng);
    a.aggregator = SelfAttention::init(d.model_dim, d.max_slices, rng);
    a.pooler = Mlp::init({d.model_dim, d.pooler_hidden, 1}, rng);
    a.projection = Linear::init(d.model_dim, d.embed_dim, rng);
    return a;
}

std::vector<NamedParameter> PathwayAdapter::named()
{
    std::vector<NamedParameter> out{{"lora_q.a", &lora_q.a},           {"lora_q.b", &lora_q.b},
                                    {"lora_v.a", &lora_v.a},           {"lora_v.b", &lora_v.b},
                                    {"lora_text.a", &lora_text.a},     {"lora_text.b", &lora_text.b},
                                    {"aggregator.wq", &aggregator.wq}, {"aggregator.wk", &aggregator.wk},
                                    {"aggregator.wv", &aggregator.wv}, {"aggregator.wo", &aggregator.wo},
                                    {"aggregator.pos", &aggregator.pos}};
    for (std::size_t i = 0; i < pooler.layers.size(); ++i) {
        out.push_back({"pooler." + std::to_string(i) + ".weight", &pooler.layers[i].weight});
        out.push_back({"pooler." + std::to_string(i) + ".bias", &pooler.layers[i].bias});
    }
    out.push_back({"projection.weight", &projection.weight});
    out.push_back({"projection.bias", &projection.bias});
    return out;
}

ParameterRefs PathwayAdapter::params()
{
    ParameterRefs out;
    for (auto& np : named()) out.push_back(np.param);
    return out;
}

std::uint64_t PathwayAdapter::checksum()
{
    std::uint64_t h = fnv1a(to_string(pathway));
    for (auto& np : named()) {
        h = fnv1a(np.name, h);
        h = fnv1a_doubles(np.param->value.data(), static_cast<std::size_t>(np.param->value.size()), h);
    }
    return h;
}

EncoderStack EncoderStack::init(const EncoderDims& dims, std::uint64_t backbone_seed, std::uint64_t adapter_seed)
{
    EncoderStack s;
    s.dims = dims;
    s.backbone = FrozenBackbone::init(dims, backbone_seed);
    for (PathwayId p : kPathways) {
        Rng rng(derive_seed(adapter_seed, "adapter-" + to_string(p)));
        s.adapter(p) = PathwayAdapter::init(p, dims, rng);
    }
    return s;
}

StudyFeatures prepare_study_features(const cohort::SyntheticStudy& study, PathwayId pathway,
                                     const EncoderStack& stack, PoolStats* stats)
{
    const auto& d = stack.dims;
    const auto& bb = stack.backbone;
    if (study.slices() == 0 || study.token_dim() != d.token_dim)
        throw ConfigError("encode_volume: study token dim " + std::to_string(study.token_dim()) +
                          " does not match encoder token dim " + std::to_string(d.token_dim));
    if (study.slices() > d.max_slices)
        throw ConfigError("encode_volume: " + std::to_string(study.slices()) + " slices exceed aggregator capacity " +
                          std::to_string(d.max_slices));

    StudyFeatures feats;
    feats.slices.reserve(static_cast<std::size_t>(study.slices()));
    for (Eigen::Index s = 0; s < study.slices(); ++s) {
        const Matrix& tokens = study.patch_tokens[static_cast<std::size_t>(s)];
        const Matrix& occ = study.occupancy[static_cast<std::size_t>(s)];
        if (occ.rows() != tokens.rows()) throw ConfigError("encode_volume: occupancy rows do not match patch count");
        const Vector w = stack.anatomical_masking ? anatomical_patch_weights(occ, pathway)
                                                  : Vector::Ones(tokens.rows());
        SliceFeatures sf;
        for (Eigen::Index i = 0; i < w.size(); ++i)
            if (w[i] > 0.0) sf.active.push_back(static_cast<int>(i));
        if (sf.active.empty()) {
            if (stats) ++stats->degenerate_slices;
            for (Eigen::Index i = 0; i < w.size(); ++i) sf.active.push_back(static_cast<int>(i));
            sf.weights = Vector::Ones(w.size());
        } else {
            sf.weights = Vector(static_cast<Eigen::Index>(sf.active.size()));
            for (std::size_t k = 0; k < sf.active.size(); ++k) sf.weights[static_cast<Eigen::Index>(k)] = w[sf.active[k]];
        }
        Matrix x(static_cast<Eigen::Index>(sf.active.size()), tokens.cols());
        for (std::size_t k = 0; k < sf.active.size(); ++k) x.row(static_cast<Eigen::Index>(k)) = tokens.row(sf.active[k]);
        sf.h0 = x * bb.patch_embed_w.transpose();
        sf.h0.rowwise() += bb.patch_embed_b.row(0);
        sf.q0 = sf.h0 * bb.wq.transpose();
        sf.k = sf.h0 * bb.wk.transpose();
        sf.v0 = sf.h0 * bb.wv.transpose();
        feats.slices.push_back(std::move(sf));
    }
    return feats;
}

Vector encode_image_features(const StudyFeatures& feats, const EncoderStack& stack, const PathwayAdapter& adapter,
                             ImageCache* cache)
{
    const auto& bb = stack.backbone;
    const auto n_slices = static_cast<Eigen::Index>(feats.slices.size());
    ImageCache local;
    ImageCache& c = cache ? *cache : local;
    c.slices.resize(feats.slices.size());
    c.slice_embs.resize(n_slices, stack.dims.model_dim);

    for (std::size_t s = 0; s < feats.slices.size(); ++s) {
        const SliceFeatures& sf = feats.slices[s];
        SliceCache& sc = c.slices[s];
        sc.q = sf.q0;
        sc.q += lora_delta(sf.h0, adapter.lora_q);
        sc.v = sf.v0;
        sc.v += lora_delta(sf.h0, adapter.lora_v);
        sc.ctx = attention_core_forward(sc.q, sf.k, sc.v, &sc.core);
        const Matrix h1 = sc.ctx * bb.wo.transpose() + sf.h0;
        c.slice_embs.row(static_cast<Eigen::Index>(s)) = masked_pool(h1, sf.weights).transpose();
    }

    c.agg_out = self_attention_forward(c.slice_embs, adapter.aggregator, &c.agg);
    const Matrix scores = mlp_forward(c.agg_out, adapter.pooler, &c.pooler);
    c.pool_probs = softmax_row(Vector(scores.col(0)));
    c.pooled = c.pool_probs.transpose() * c.agg_out;
    c.projected = linear_forward(c.pooled, adapter.projection).row(0).transpose();
    return l2_normalize(c.projected);
}

void encode_image_backward(const Vector& grad_emb, const StudyFeatures& feats, const EncoderStack& stack,
                           PathwayAdapter& adapter, const ImageCache& c)
{
    const auto& bb = stack.backbone;
    const Vector grad_proj = l2_normalize_backward(c.projected, grad_emb);
    const Matrix grad_pooled = linear_backward(c.pooled, grad_proj.transpose(), adapter.projection);

    Matrix grad_agg = c.pool_probs * grad_pooled; // [S x model]
    const Vector grad_probs = c.agg_out * grad_pooled.row(0).transpose();
    const Vector grad_scores = c.pool_probs.cwiseProduct(grad_probs) - c.pool_probs * c.pool_probs.dot(grad_probs);
    grad_agg += mlp_backward(Matrix(grad_scores), adapter.pooler, c.pooler);

    const Matrix grad_slices = self_attention_backward(grad_agg, adapter.aggregator, c.agg);

    for (std::size_t s = 0; s < feats.slices.size(); ++s) {
        const SliceFeatures& sf = feats.slices[s];
        const SliceCache& sc = c.slices[s];
        const Vector share = sf.weights / sf.weights.sum();
        const Matrix grad_h1 = share * grad_slices.row(static_cast<Eigen::Index>(s));
        const Matrix grad_ctx = grad_h1 * bb.wo;
        Matrix grad_q, grad_k, grad_v;
        attention_core_backward(grad_ctx, sc.core, grad_q, grad_k, grad_v);
        lora_delta_backward(sf.h0, grad_q, adapter.lora_q);
        lora_delta_backward(sf.h0, grad_v, adapter.lora_v);
    }
}

Vector encode_volume(const cohort::SyntheticStudy& study, PathwayId pathway, const EncoderStack& stack,
                     PoolStats* stats)
{
    const StudyFeatures feats = prepare_study_features(study, pathway, stack, stats);
    return encode_image_features(feats, stack, stack.adapter(pathway));
}

cohort::TokenSeq pathway_tokens(const cohort::ReportSegments& seg, PathwayId pathway)
{
    if (seg.liver.empty() || seg.tumor.empty() || seg.neutral.empty())
        throw InputError("encode_report: every report segment must be non-empty");
    cohort::TokenSeq out;
    if (pathway != PathwayId::tumor) out.insert(out.end(), seg.liver.begin(), seg.liver.end());
    if (pathway != PathwayId::liver) out.insert(out.end(), seg.tumor.begin(), seg.tumor.end());
    out.insert(out.end(), seg.neutral.begin(), seg.neutral.end());
    return out;
}

Vector pooled_text_features(const cohort::TokenSeq& tokens, const EncoderStack& stack)
{
    if (tokens.empty()) throw InputError("encode_report: empty token sequence");
    Vector sum = Vector::Zero(stack.dims.text_dim);
    for (int t : tokens) {
        if (t < 0 || t >= stack.dims.vocab_size)
            throw InputError("encode_report: token id " + std::to_string(t) + " outside vocabulary of size " +
                             std::to_string(stack.dims.vocab_size));
        sum += stack.backbone.token_table.row(t).transpose();
    }
    return sum / static_cast<double>(tokens.size());
}

Vector encode_text_features(const Vector& pooled, const EncoderStack& stack, const PathwayAdapter& adapter,
                            TextCache* cache)
{
    TextCache local;
    TextCache& c = cache ? *cache : local;
    c.pooled = pooled.transpose();
    c.projected = lora_linear_forward(c.pooled, stack.backbone.text_proj, adapter.lora_text).row(0).transpose();
    return l2_normalize(c.projected);
}

void encode_text_backward(const Vector& grad_emb, const EncoderStack& /*stack*/, PathwayAdapter& adapter,
                          const TextCache& c)
{
    const Vector grad_proj = l2_normalize_backward(c.projected, grad_emb);
    lora_delta_backward(c.pooled, grad_proj.transpose(), adapter.lora_text);
}

Vector encode_report(const cohort::ReportSegments& segments, PathwayId pathway, const EncoderStack& stack)
{
    return encode_text_features(pooled_text_features(pathway_tokens(segments, pathway), stack), stack,
                                stack.adapter(pathway));
}

Vector fuse_embeddings(const Vector& image, const Vector& text, double report_weight)
{
    if (image.size() != text.size()) throw DimensionError("fuse_embeddings: image and text widths differ");
    return l2_normalize(image + report_weight * text);
}

} // namespace biofact::pretrain
