#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include <yaml-cpp/yaml.h>

#include "offroad/augmentation.hpp"
#include "offroad/error.hpp"
#include "offroad/model.hpp"
#include "offroad/optim.hpp"

namespace offroad {

struct DataConfig {
    std::vector<std::string> train_roots;
    std::vector<std::string> val_roots;
    std::string mapping;  // empty: label rasters already hold challenge ids

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct AugmentConfig {
    bool photometric_enabled = true;
    PhotometricConfig photometric;
    bool geometric_enabled = true;
    GeometricConfig geometric;

    friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct EmaConfig {
    bool enabled = true;
    double decay = 0.999;

    friend bool operator==(const EmaConfig&, const EmaConfig&) = default;
};

struct TrainConfig {
    int batch_size = 2;
    int grad_accumulation_steps = 4;  // 4 devices x 2 images, emulated
    std::int64_t eval_interval = 2000;
    std::int64_t checkpoint_interval = 4000;
    std::uint64_t seed = 0;
    int num_workers = 1;
    std::string output_dir = "runs/default";
    bool mixed_precision = false;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

using Color = std::array<int, 3>;

struct EvalConfig {
    std::array<Color, kNumClasses> palette{{{90, 90, 90},
                                            {230, 150, 140},
                                            {128, 64, 128},
                                            {150, 100, 50},
                                            {250, 170, 30},
                                            {0, 0, 142},
                                            {107, 142, 35},
                                            {220, 20, 60},
                                            {70, 130, 180}}};
    bool write_masks = false;

    friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct PipelineConfig {
    DataConfig data;
    AugmentConfig augment;
    ModelConfig model;
    AdamWConfig optim;
    ScheduleConfig schedule;
    EmaConfig ema;
    TrainConfig train;
    EvalConfig eval;

    int effective_batch() const { return train.batch_size * train.grad_accumulation_steps; }

    void validate() const {
        augment.photometric.validate();
        augment.geometric.validate();
        model.validate();
        optim.validate();
        schedule.validate();
        if (!(ema.decay > 0.0 && ema.decay < 1.0)) throw ConfigError("ema.decay must lie in (0, 1)");
        if (train.batch_size <= 0) throw ConfigError("train.batch_size must be > 0");
        if (train.grad_accumulation_steps <= 0) throw ConfigError("train.grad_accumulation_steps must be > 0");
        if (train.eval_interval <= 0) throw ConfigError("train.eval_interval must be > 0");
        if (train.checkpoint_interval <= 0) throw ConfigError("train.checkpoint_interval must be > 0");
        if (train.num_workers <= 0) throw ConfigError("train.num_workers must be > 0");
        if (train.mixed_precision)
            throw ConfigError("train.mixed_precision is not supported; training runs in float32");
        if (augment.geometric.crop_height % 32 != 0 || augment.geometric.crop_width % 32 != 0)
            throw ConfigError("augment.geometric.crop_size must be divisible by 32");
        for (const auto& c : eval.palette)
            for (int v : c)
                if (v < 0 || v > 255) throw ConfigError("eval.palette entries must lie in [0, 255]");
    }

    friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

inline nlohmann::json to_json(const PipelineConfig& c) {
    using nlohmann::json;
    const auto& p = c.augment.photometric;
    const auto& g = c.augment.geometric;
    const auto& m = c.model;
    json j;
    j["data"] = {{"train_roots", c.data.train_roots}, {"val_roots", c.data.val_roots}, {"mapping", c.data.mapping}};
    j["augment"]["photometric"] = {{"enabled", c.augment.photometric_enabled},
                                   {"p_apply", p.p_apply},
                                   {"brightness_delta", p.brightness_delta},
                                   {"contrast_range", {p.contrast_range.lo, p.contrast_range.hi}},
                                   {"saturation_range", {p.saturation_range.lo, p.saturation_range.hi}},
                                   {"hue_delta", p.hue_delta}};
    j["augment"]["geometric"] = {{"enabled", c.augment.geometric_enabled},
                                 {"scale_range", {g.scale_range.lo, g.scale_range.hi}},
                                 {"crop_size", {g.crop_height, g.crop_width}},
                                 {"image_pad_value", static_cast<int>(g.image_pad_value)},
                                 {"label_pad_value", static_cast<int>(g.label_pad_value)}};
    j["model"] = {{"backbone_channels", m.backbone_channels},
                  {"backbone_depths", m.backbone_depths},
                  {"decoder_channels", m.decoder_channels},
                  {"psp_bin_sizes", m.psp_bin_sizes},
                  {"num_classes", m.num_classes},
                  {"norm_kind", to_string(m.norm_kind)},
                  {"norm_groups", m.norm_groups},
                  {"pixel_mean", m.pixel_mean},
                  {"pixel_std", m.pixel_std}};
    j["optim"] = {{"beta1", c.optim.beta1},
                  {"beta2", c.optim.beta2},
                  {"eps", c.optim.eps},
                  {"weight_decay", c.optim.weight_decay}};
    j["schedule"] = {{"base_lr", c.schedule.base_lr},
                     {"total_iters", c.schedule.total_iters},
                     {"power", c.schedule.power}};
    j["ema"] = {{"enabled", c.ema.enabled}, {"decay", c.ema.decay}};
    j["train"] = {{"batch_size", c.train.batch_size},
                  {"grad_accumulation_steps", c.train.grad_accumulation_steps},
                  {"eval_interval", c.train.eval_interval},
                  {"checkpoint_interval", c.train.checkpoint_interval},
                  {"seed", c.train.seed},
                  {"num_workers", c.train.num_workers},
                  {"output_dir", c.train.output_dir},
                  {"mixed_precision", c.train.mixed_precision}};
    j["eval"] = {{"palette", c.eval.palette}, {"write_masks", c.eval.write_masks}};
    return j;
}

namespace detail {

inline Range range_from(const nlohmann::json& j, const std::string& key) {
    if (j.size() != 2) throw ConfigError(key + " must have exactly two entries [lo, hi]");
    return {j[0].get<double>(), j[1].get<double>()};
}

template <class A>
A fixed_array(const nlohmann::json& j, const std::string& key) {
    A a{};
    if (j.size() != a.size()) throw ConfigError(key + " must have exactly " + std::to_string(a.size()) + " entries");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = j[i].get<typename A::value_type>();
    return a;
}

inline std::uint8_t byte_from(const nlohmann::json& j, const std::string& key) {
    const int v = j.get<int>();
    if (v < 0 || v > 255) throw ConfigError(key + " must lie in [0, 255]");
    return static_cast<std::uint8_t>(v);
}

}  // namespace detail

/// Inverse of to_json; the input must already match the default schema's types.
inline PipelineConfig from_json(const nlohmann::json& j) {
    PipelineConfig c;
    const auto& d = j.at("data");
    c.data.train_roots = d.at("train_roots").get<std::vector<std::string>>();
    c.data.val_roots = d.at("val_roots").get<std::vector<std::string>>();
    c.data.mapping = d.at("mapping").get<std::string>();

    const auto& p = j.at("augment").at("photometric");
    c.augment.photometric_enabled = p.at("enabled").get<bool>();
    c.augment.photometric.p_apply = p.at("p_apply").get<double>();
    c.augment.photometric.brightness_delta = p.at("brightness_delta").get<double>();
    c.augment.photometric.contrast_range = detail::range_from(p.at("contrast_range"), "augment.photometric.contrast_range");
    c.augment.photometric.saturation_range =
        detail::range_from(p.at("saturation_range"), "augment.photometric.saturation_range");
    c.augment.photometric.hue_delta = p.at("hue_delta").get<double>();

    const auto& g = j.at("augment").at("geometric");
    c.augment.geometric_enabled = g.at("enabled").get<bool>();
    c.augment.geometric.scale_range = detail::range_from(g.at("scale_range"), "augment.geometric.scale_range");
    const auto crop = detail::fixed_array<std::array<int, 2>>(g.at("crop_size"), "augment.geometric.crop_size");
    c.augment.geometric.crop_height = crop[0];
    c.augment.geometric.crop_width = crop[1];
    c.augment.geometric.image_pad_value = detail::byte_from(g.at("image_pad_value"), "augment.geometric.image_pad_value");
    c.augment.geometric.label_pad_value = detail::byte_from(g.at("label_pad_value"), "augment.geometric.label_pad_value");

    const auto& m = j.at("model");
    c.model.backbone_channels = detail::fixed_array<std::array<int, 4>>(m.at("backbone_channels"), "model.backbone_channels");
    c.model.backbone_depths = detail::fixed_array<std::array<int, 4>>(m.at("backbone_depths"), "model.backbone_depths");
    c.model.decoder_channels = m.at("decoder_channels").get<int>();
    c.model.psp_bin_sizes = m.at("psp_bin_sizes").get<std::vector<int>>();
    c.model.num_classes = m.at("num_classes").get<int>();
    c.model.norm_kind = norm_kind_from_string(m.at("norm_kind").get<std::string>());
    c.model.norm_groups = m.at("norm_groups").get<int>();
    c.model.pixel_mean = detail::fixed_array<std::array<double, 3>>(m.at("pixel_mean"), "model.pixel_mean");
    c.model.pixel_std = detail::fixed_array<std::array<double, 3>>(m.at("pixel_std"), "model.pixel_std");

    const auto& o = j.at("optim");
    c.optim.beta1 = o.at("beta1").get<double>();
    c.optim.beta2 = o.at("beta2").get<double>();
    c.optim.eps = o.at("eps").get<double>();
    c.optim.weight_decay = o.at("weight_decay").get<double>();

    const auto& s = j.at("schedule");
    c.schedule.base_lr = s.at("base_lr").get<double>();
    c.schedule.total_iters = s.at("total_iters").get<std::int64_t>();
    c.schedule.power = s.at("power").get<double>();

    c.ema.enabled = j.at("ema").at("enabled").get<bool>();
    c.ema.decay = j.at("ema").at("decay").get<double>();

    const auto& t = j.at("train");
    c.train.batch_size = t.at("batch_size").get<int>();
    c.train.grad_accumulation_steps = t.at("grad_accumulation_steps").get<int>();
    c.train.eval_interval = t.at("eval_interval").get<std::int64_t>();
    c.train.checkpoint_interval = t.at("checkpoint_interval").get<std::int64_t>();
    c.train.seed = t.at("seed").get<std::uint64_t>();
    c.train.num_workers = t.at("num_workers").get<int>();
    c.train.output_dir = t.at("output_dir").get<std::string>();
    c.train.mixed_precision = t.at("mixed_precision").get<bool>();

    const auto& e = j.at("eval");
    if (e.at("palette").size() != kNumClasses) throw ConfigError("eval.palette must have 9 colors");
    for (std::size_t k = 0; k < kNumClasses; ++k)
        c.eval.palette[k] = detail::fixed_array<Color>(e.at("palette")[k], "eval.palette");
    c.eval.write_masks = e.at("write_masks").get<bool>();
    return c;
}

namespace detail {

/// Convert a YAML node to JSON, using `schema` (the default value at the same
/// key) to decide the expected type.
inline nlohmann::json yaml_as(const YAML::Node& node, const nlohmann::json& schema, const std::string& key) {
    using nlohmann::json;
    auto mismatch = [&](const char* want) {
        return ConfigError("type mismatch for " + key + ": expected " + want);
    };
    try {
        switch (schema.type()) {
            case json::value_t::boolean:
                if (!node.IsScalar()) throw mismatch("a boolean");
                return node.as<bool>();
            case json::value_t::number_unsigned:
                if (!node.IsScalar()) throw mismatch("a non-negative integer");
                return node.as<std::uint64_t>();
            case json::value_t::number_integer:
                if (!node.IsScalar()) throw mismatch("an integer");
                return node.as<std::int64_t>();
            case json::value_t::number_float:
                if (!node.IsScalar()) throw mismatch("a number");
                return node.as<double>();
            case json::value_t::string:
                if (!node.IsScalar()) throw mismatch("a string");
                return node.as<std::string>();
            case json::value_t::array: {
                if (!node.IsSequence()) throw mismatch("a list");
                json out = json::array();
                const json elem = schema.empty() ? json("") : schema.front();
                for (std::size_t i = 0; i < node.size(); ++i)
                    out.push_back(yaml_as(node[i], elem, key + "[" + std::to_string(i) + "]"));
                return out;
            }
            case json::value_t::object: {
                if (!node.IsMap()) throw mismatch("a mapping");
                json out = schema;
                for (const auto& kv : node) {
                    const std::string k = kv.first.as<std::string>();
                    const std::string path = key.empty() ? k : key + "." + k;
                    if (!schema.contains(k)) throw ConfigError("unknown config key " + path);
                    out[k] = yaml_as(kv.second, schema.at(k), path);
                }
                return out;
            }
            default:
                throw ConfigError("unsupported schema type at " + key);
        }
    } catch (const YAML::Exception&) {
        throw mismatch(schema.type_name());
    }
}

}  // namespace detail

/// Apply one dotted `key=value` override to a JSON config tree.
inline void apply_override(nlohmann::json& tree, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    nlohmann::json* node = &tree;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key " + key);
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    YAML::Node parsed;
    try {
        parsed = YAML::Load(value);
    } catch (const YAML::Exception& e) {
        throw ConfigError("cannot parse value for " + key + ": " + e.what());
    }
    *node = detail::yaml_as(parsed, *node, key);
}

/// defaults <- YAML text <- overrides, then validated.
inline PipelineConfig parse_config_text(const std::string& yaml_text, const std::vector<std::string>& overrides = {}) {
    nlohmann::json tree = to_json(PipelineConfig{});
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    if (root && !root.IsNull()) tree = detail::yaml_as(root, tree, "");
    for (const auto& o : overrides) apply_override(tree, o);
    PipelineConfig cfg;
    try {
        cfg = from_json(tree);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline PipelineConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw ConfigError("cannot open config file " + path.string());
    std::string text;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
    std::fclose(f);
    return parse_config_text(text, overrides);
}

/// Short stable identifier of a configuration (FNV-1a of its canonical JSON).
inline std::string config_id(const PipelineConfig& c) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_json(c).dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace offroad
