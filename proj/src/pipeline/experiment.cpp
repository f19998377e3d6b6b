#include "biofact/pipeline/experiment.hpp"

#include "biofact/cohort/io.hpp"
#include "biofact/core/errors.hpp"
#include "biofact/core/rng.hpp"
#include "biofact/core/text.hpp"

namespace biofact::pipeline {

using nlohmann::json;
using pretrain::SegmentationMode;
using survival::HeadVariant;

const std::vector<Variant>& all_variants()
{
    static const std::vector<Variant> v{Variant::full,
                                        Variant::no_text_segmentation,
                                        Variant::random_text_split,
                                        Variant::swapped_text_conditioning,
                                        Variant::no_anatomical_masking,
                                        Variant::full_report_at_inference,
                                        Variant::full_report,
                                        Variant::base_only,
                                        Variant::liver_only,
                                        Variant::tumor_only,
                                        Variant::liver_base,
                                        Variant::tumor_base,
                                        Variant::joint_no_moe,
                                        Variant::liver_tumor_no_base};
    return v;
}

std::string to_string(Variant v)
{
    switch (v) {
    case Variant::full: return "full";
    case Variant::no_text_segmentation: return "no_text_segmentation";
    case Variant::random_text_split: return "random_text_split";
    case Variant::swapped_text_conditioning: return "swapped_text_conditioning";
    case Variant::no_anatomical_masking: return "no_anatomical_masking";
    case Variant::full_report_at_inference: return "full_report_at_inference";
    case Variant::full_report: return "full_report";
    case Variant::base_only: return "base_only";
    case Variant::liver_only: return "liver_only";
    case Variant::tumor_only: return "tumor_only";
    case Variant::liver_base: return "liver_base";
    case Variant::tumor_base: return "tumor_base";
    case Variant::joint_no_moe: return "joint_no_moe";
    case Variant::liver_tumor_no_base: return "liver_tumor_no_base";
    }
    return "unknown";
}

Variant parse_variant(const std::string& name)
{
    std::string valid;
    for (Variant v : all_variants()) {
        if (to_string(v) == name) return v;
        valid += (valid.empty() ? "" : ", ") + to_string(v);
    }
    throw ConfigError("unknown variant '" + name + "'; valid variants: " + valid);
}

VariantSpec variant_spec(Variant v)
{
    VariantSpec s;
    auto all_text = [&](SegmentationMode m) { s.pretrain_text = s.train_text = s.inference_text = m; };
    switch (v) {
    case Variant::full: break;
    case Variant::no_text_segmentation: all_text(SegmentationMode::unsegmented); break;
    case Variant::random_text_split: all_text(SegmentationMode::random_split); break;
    case Variant::swapped_text_conditioning: all_text(SegmentationMode::swapped); break;
    case Variant::no_anatomical_masking: s.anatomical_masking = false; break;
    case Variant::full_report_at_inference: s.inference_text = SegmentationMode::unsegmented; break;
    case Variant::full_report:
        s.train_text = SegmentationMode::unsegmented;
        s.inference_text = SegmentationMode::unsegmented;
        break;
    case Variant::base_only: s.head = HeadVariant::base_only; break;
    case Variant::liver_only: s.head = HeadVariant::liver_only; break;
    case Variant::tumor_only: s.head = HeadVariant::tumor_only; break;
    case Variant::liver_base: s.head = HeadVariant::liver_base; break;
    case Variant::tumor_base: s.head = HeadVariant::tumor_base; break;
    case Variant::joint_no_moe: s.head = HeadVariant::joint_no_moe; break;
    case Variant::liver_tumor_no_base: s.head = HeadVariant::liver_tumor_no_base; break;
    }
    return s;
}

void ExperimentConfig::validate() const
{
    cohort.validate();
    pretrain.validate();
    survival.validate();
    eval.validate();
    if (n_runs < 1) throw ConfigError("n_runs must be >= 1");
    if (encoder.embed_dim != head.embed_dim)
        throw ConfigError("encoder.embed_dim and head.embed_dim must agree");
    if (encoder.lora_rank != pretrain.lora_rank || encoder.lora_alpha != pretrain.lora_alpha)
        throw ConfigError("pretrain lora settings must match encoder lora settings");
    if (cohort.token_dim != encoder.token_dim) throw ConfigError("cohort.token_dim must equal encoder.token_dim");
    if (cohort.slices > encoder.max_slices) throw ConfigError("cohort.slices exceeds encoder.max_slices");
    if (encoder.token_levels < 2) throw ConfigError("encoder.token_levels must be >= 2");
    if (encoder.token_levels != cohort::Vocabulary{}.bins)
        throw ConfigError("encoder.token_levels must equal the report vocabulary bins");
    if (!(encoder.report_weight >= 0.0)) throw ConfigError("encoder.report_weight must be >= 0");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

std::vector<std::uint64_t> ExperimentConfig::run_seeds() const
{
    std::vector<std::uint64_t> s;
    for (int i = 0; i < n_runs; ++i) s.push_back(seed + static_cast<std::uint64_t>(i));
    return s;
}

namespace {

json encoder_json(const pretrain::EncoderDims& d)
{
    return json{{"token_dim", d.token_dim},   {"model_dim", d.model_dim},       {"text_dim", d.text_dim},
                {"embed_dim", d.embed_dim},   {"vocab_size", d.vocab_size},     {"max_slices", d.max_slices},
                {"pooler_hidden", d.pooler_hidden}, {"lora_rank", d.lora_rank}, {"lora_alpha", d.lora_alpha},
                {"token_levels", d.token_levels}, {"report_weight", d.report_weight}};
}

pretrain::EncoderDims encoder_from_json(const json& j)
{
    if (!j.is_object()) throw ConfigError("encoder config must be an object");
    pretrain::EncoderDims d;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "token_dim") d.token_dim = value.get<int>();
            else if (key == "model_dim") d.model_dim = value.get<int>();
            else if (key == "text_dim") d.text_dim = value.get<int>();
            else if (key == "embed_dim") d.embed_dim = value.get<int>();
            else if (key == "vocab_size") d.vocab_size = value.get<int>();
            else if (key == "max_slices") d.max_slices = value.get<int>();
            else if (key == "pooler_hidden") d.pooler_hidden = value.get<int>();
            else if (key == "lora_rank") d.lora_rank = value.get<int>();
            else if (key == "lora_alpha") d.lora_alpha = value.get<double>();
            else if (key == "token_levels") d.token_levels = value.get<int>();
            else if (key == "report_weight") d.report_weight = value.get<double>();
            else throw ConfigError("encoder: unknown key '" + key + "'");
        } catch (const json::exception& e) {
            throw ConfigError("encoder." + key + ": " + e.what());
        }
    }
    return d;
}

json head_json(const survival::HeadDims& d)
{
    return json{{"embed_dim", d.embed_dim},
                {"expert_dim", d.expert_dim},
                {"expert_hidden", d.expert_hidden},
                {"alpha_hidden", d.alpha_hidden}};
}

survival::HeadDims head_from_json(const json& j)
{
    if (!j.is_object()) throw ConfigError("head config must be an object");
    survival::HeadDims d;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "embed_dim") d.embed_dim = value.get<int>();
            else if (key == "expert_dim") d.expert_dim = value.get<int>();
            else if (key == "expert_hidden") d.expert_hidden = value.get<int>();
            else if (key == "alpha_hidden") d.alpha_hidden = value.get<int>();
            else throw ConfigError("head: unknown key '" + key + "'");
        } catch (const json::exception& e) {
            throw ConfigError("head." + key + ": " + e.what());
        }
    }
    return d;
}

} // namespace

json to_json(const ExperimentConfig& c)
{
    return json{{"cohort", cohort::to_json(c.cohort)},
                {"pretrain", pretrain::to_json(c.pretrain)},
                {"survival", survival::to_json(c.survival)},
                {"eval", eval::to_json(c.eval)},
                {"encoder", encoder_json(c.encoder)},
                {"head", head_json(c.head)},
                {"variant", to_string(c.variant)},
                {"output_dir", c.output_dir},
                {"seed", c.seed},
                {"n_runs", c.n_runs}};
}

ExperimentConfig experiment_config_from_json(const json& j)
{
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "cohort") c.cohort = cohort::cohort_config_from_json(value);
        else if (key == "pretrain") c.pretrain = pretrain::pretrain_config_from_json(value);
        else if (key == "survival") c.survival = survival::survival_config_from_json(value);
        else if (key == "eval") c.eval = eval::eval_config_from_json(value);
        else if (key == "encoder") c.encoder = encoder_from_json(value);
        else if (key == "head") c.head = head_from_json(value);
        else {
            try {
                if (key == "variant") c.variant = parse_variant(value.get<std::string>());
                else if (key == "output_dir") c.output_dir = value.get<std::string>();
                else if (key == "seed") c.seed = value.get<std::uint64_t>();
                else if (key == "n_runs") c.n_runs = value.get<int>();
                else throw ConfigError("unknown config key '" + key + "'");
            } catch (const json::exception& e) {
                throw ConfigError(key + ": " + e.what());
            }
        }
    }
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path)
{
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return experiment_config_from_json(j);
}

std::string experiment_hash(const ExperimentConfig& c)
{
    json j = to_json(c);
    j.erase("output_dir");
    return hex64(fnv1a(j.dump()));
}

} // namespace biofact::pipeline
