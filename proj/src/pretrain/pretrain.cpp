#include "biofact/pretrain/pretrain.hpp"

#include <cmath>
#include <numeric>

#include "biofact/core/adamw.hpp"
#include "biofact/core/rng.hpp"
#include "biofact/pretrain/info_nce.hpp"

namespace biofact::pretrain {

using nlohmann::json;

void PretrainConfig::validate() const
{
    if (!(tau > 0.0)) throw ConfigError("pretrain: tau must be > 0");
    if (epochs < 0) throw ConfigError("pretrain: epochs must be >= 0");
    if (batch_size < 2) throw ConfigError("pretrain: batch_size must be >= 2");
    if (!(learning_rate > 0.0)) throw ConfigError("pretrain: learning_rate must be > 0");
    if (weight_decay < 0.0) throw ConfigError("pretrain: weight_decay must be >= 0");
    if (lora_rank < 1) throw ConfigError("pretrain: lora_rank must be >= 1");
}

json to_json(const PretrainConfig& c)
{
    return json{{"tau", c.tau},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"weight_decay", c.weight_decay},
                {"lora_rank", c.lora_rank},
                {"lora_alpha", c.lora_alpha}};
}

PretrainConfig pretrain_config_from_json(const json& j)
{
    if (!j.is_object()) throw ConfigError("pretrain config must be an object");
    PretrainConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "tau") c.tau = value.get<double>();
            else if (key == "epochs") c.epochs = value.get<int>();
            else if (key == "batch_size") c.batch_size = value.get<int>();
            else if (key == "learning_rate") c.learning_rate = value.get<double>();
            else if (key == "weight_decay") c.weight_decay = value.get<double>();
            else if (key == "lora_rank") c.lora_rank = value.get<int>();
            else if (key == "lora_alpha") c.lora_alpha = value.get<double>();
            else throw ConfigError("pretrain: unknown key '" + key + "'");
        } catch (const json::exception& e) {
            throw ConfigError("pretrain." + key + ": " + e.what());
        }
    }
    return c;
}

PretrainPair make_pair(const cohort::SyntheticStudy& study, const cohort::TokenSeq& tokens, PathwayId pathway,
                       const EncoderStack& stack, PoolStats* stats)
{
    return PretrainPair{prepare_study_features(study, pathway, stack, stats), pooled_text_features(tokens, stack)};
}

namespace {

struct BatchForward {
    Matrix img, txt;
    std::vector<ImageCache> img_cache;
    std::vector<TextCache> txt_cache;
};

void forward_batch(const EncoderStack& stack, const PathwayAdapter& adapter, const std::vector<PretrainPair>& pairs,
                   const std::size_t* idx, std::size_t count, BatchForward& out, bool keep_cache)
{
    const auto d = stack.dims.embed_dim;
    out.img.resize(static_cast<Eigen::Index>(count), d);
    out.txt.resize(static_cast<Eigen::Index>(count), d);
    out.img_cache.resize(keep_cache ? count : 0);
    out.txt_cache.resize(keep_cache ? count : 0);
    for (std::size_t k = 0; k < count; ++k) {
        const PretrainPair& pair = pairs[idx[k]];
        const auto row = static_cast<Eigen::Index>(k);
        out.img.row(row) =
            encode_image_features(pair.image, stack, adapter, keep_cache ? &out.img_cache[k] : nullptr).transpose();
        out.txt.row(row) =
            encode_text_features(pair.text, stack, adapter, keep_cache ? &out.txt_cache[k] : nullptr).transpose();
    }
}

} // namespace

HeldoutMetrics evaluate_pairs(const EncoderStack& stack, PathwayId pathway, const std::vector<PretrainPair>& pairs,
                              const PretrainConfig& cfg)
{
    HeldoutMetrics m;
    if (pairs.size() < 2) return m;
    const auto bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), pairs.size());
    std::vector<std::size_t> idx(pairs.size());
    std::iota(idx.begin(), idx.end(), 0);
    BatchForward fw;
    int batches = 0;
    for (std::size_t start = 0; start + bs <= pairs.size(); start += bs) {
        forward_batch(stack, stack.adapter(pathway), pairs, idx.data() + start, bs, fw, false);
        m.loss += info_nce_symmetric(fw.img, fw.txt, cfg.tau).loss;
        m.top1 += top1_retrieval(fw.img, fw.txt);
        ++batches;
    }
    m.loss /= batches;
    m.top1 /= batches;
    return m;
}

PretrainResult pretrain_pathway(EncoderStack& stack, PathwayId pathway, const std::vector<PretrainPair>& train,
                                const std::vector<PretrainPair>& heldout, const PretrainConfig& cfg,
                                std::uint64_t seed)
{
    cfg.validate();
    if (train.empty()) throw InputError("pretrain_pathway: empty training set");
    const AdamWConfig opt{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay};
    PathwayAdapter& adapter = stack.adapter(pathway);
    const ParameterRefs params = adapter.params();
    for (Parameter* p : params) p->reset_state();

    Rng rng(derive_seed(seed, "pretrain-order-" + to_string(pathway)));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const auto bs = static_cast<std::size_t>(cfg.batch_size);

    PretrainResult result;
    BatchForward fw;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t count = std::min(bs, order.size() - start);
            if (count < 2) continue;
            zero_grads(params);
            forward_batch(stack, adapter, train, order.data() + start, count, fw, true);
            const InfoNceResult loss = info_nce_symmetric(fw.img, fw.txt, cfg.tau);
            for (std::size_t k = 0; k < count; ++k) {
                const auto row = static_cast<Eigen::Index>(k);
                encode_image_backward(loss.grad_img.row(row).transpose(), train[order[start + k]].image, stack,
                                      adapter, fw.img_cache[k]);
                encode_text_backward(loss.grad_txt.row(row).transpose(), stack, adapter, fw.txt_cache[k]);
            }
            adamw_step(params, opt);
            total += loss.loss;
            ++batches;
        }
        result.epoch_loss.push_back(batches > 0 ? total / batches : 0.0);
    }
    const HeldoutMetrics h = evaluate_pairs(stack, pathway, heldout, cfg);
    result.heldout_loss = h.loss;
    result.heldout_top1 = h.top1;
    result.heldout_baseline = std::log(static_cast<double>(std::min<std::size_t>(bs, std::max<std::size_t>(heldout.size(), 1))));
    return result;
}

json tensor_to_json(const Matrix& m)
{
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix tensor_from_json(const json& j, const std::string& name)
{
    try {
        const auto rows = j.at("rows").get<Eigen::Index>();
        const auto cols = j.at("cols").get<Eigen::Index>();
        const auto data = j.at("data").get<std::vector<double>>();
        if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size())
            throw ParseError("tensor '" + name + "': data length does not match shape");
        Matrix m(rows, cols);
        std::copy(data.begin(), data.end(), m.data());
        return m;
    } catch (const json::exception& e) {
        throw ParseError("tensor '" + name + "': " + e.what());
    }
}

namespace {

json dims_to_json(const EncoderDims& d)
{
    return json{{"token_dim", d.token_dim},   {"model_dim", d.model_dim},   {"text_dim", d.text_dim},
                {"embed_dim", d.embed_dim},   {"vocab_size", d.vocab_size}, {"max_slices", d.max_slices},
                {"pooler_hidden", d.pooler_hidden}, {"lora_rank", d.lora_rank}, {"lora_alpha", d.lora_alpha},
                {"token_levels", d.token_levels}, {"report_weight", d.report_weight}};
}

EncoderDims dims_from_json(const json& j)
{
    EncoderDims d;
    d.token_dim = j.at("token_dim").get<int>();
    d.model_dim = j.at("model_dim").get<int>();
    d.text_dim = j.at("text_dim").get<int>();
    d.embed_dim = j.at("embed_dim").get<int>();
    d.vocab_size = j.at("vocab_size").get<int>();
    d.max_slices = j.at("max_slices").get<int>();
    d.pooler_hidden = j.at("pooler_hidden").get<int>();
    d.lora_rank = j.at("lora_rank").get<int>();
    d.lora_alpha = j.at("lora_alpha").get<double>();
    d.token_levels = j.at("token_levels").get<int>();
    d.report_weight = j.at("report_weight").get<double>();
    return d;
}

} // namespace

json to_json(const PathwayCheckpoint& ck)
{
    json tensors = json::object();
    auto& adapter = const_cast<PathwayAdapter&>(ck.adapter);
    for (const auto& np : adapter.named()) tensors[np.name] = tensor_to_json(np.param->value);
    return json{{"format", "biofact-pathway-checkpoint"},
                {"version", 1},
                {"pathway", to_string(ck.pathway)},
                {"dims", dims_to_json(ck.dims)},
                {"pretrain_config", to_json(ck.config)},
                {"config_hash", ck.config_hash},
                {"cohort_hash", ck.cohort_hash},
                {"run_hash", ck.run_hash},
                {"backbone_seed", ck.backbone_seed},
                {"backbone_checksum", ck.backbone_checksum},
                {"anatomical_masking", ck.anatomical_masking},
                {"segmentation", ck.segmentation},
                {"loss_curve", ck.loss_curve},
                {"heldout", {{"loss", ck.heldout_loss}, {"top1", ck.heldout_top1}, {"baseline", ck.heldout_baseline}}},
                {"tensors", tensors}};
}

PathwayCheckpoint checkpoint_from_json(const json& j)
{
    try {
        if (j.at("format").get<std::string>() != "biofact-pathway-checkpoint")
            throw ParseError("checkpoint: unexpected format tag");
        if (j.at("version").get<int>() != 1) throw ParseError("checkpoint: unsupported version");
        PathwayCheckpoint ck;
        ck.pathway = parse_pathway(j.at("pathway").get<std::string>());
        ck.dims = dims_from_json(j.at("dims"));
        ck.config = pretrain_config_from_json(j.at("pretrain_config"));
        ck.config_hash = j.at("config_hash").get<std::string>();
        ck.cohort_hash = j.at("cohort_hash").get<std::string>();
        ck.run_hash = j.at("run_hash").get<std::string>();
        ck.backbone_seed = j.at("backbone_seed").get<std::uint64_t>();
        ck.backbone_checksum = j.at("backbone_checksum").get<std::string>();
        ck.anatomical_masking = j.at("anatomical_masking").get<bool>();
        ck.segmentation = j.at("segmentation").get<std::string>();
        ck.loss_curve = j.at("loss_curve").get<std::vector<double>>();
        const auto& h = j.at("heldout");
        ck.heldout_loss = h.at("loss").get<double>();
        ck.heldout_top1 = h.at("top1").get<double>();
        ck.heldout_baseline = h.at("baseline").get<double>();
        Rng rng(0);
        ck.adapter = PathwayAdapter::init(ck.pathway, ck.dims, rng);
        const auto& tensors = j.at("tensors");
        for (auto& np : ck.adapter.named()) {
            Matrix m = tensor_from_json(tensors.at(np.name), np.name);
            if (m.rows() != np.param->rows() || m.cols() != np.param->cols())
                throw ParseError("checkpoint tensor '" + np.name + "' has shape " + shape_string(m) + ", expected " +
                                 shape_string(np.param->value));
            *np.param = Parameter(std::move(m));
        }
        return ck;
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    } catch (const ConfigError& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
}

} // namespace biofact::pretrain
