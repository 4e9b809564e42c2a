#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "offroad/augmentation.hpp"
#include "offroad/checkpoint.hpp"
#include "offroad/config.hpp"
#include "offroad/dataset.hpp"
#include "offroad/evaluation.hpp"
#include "offroad/model.hpp"
#include "offroad/optim.hpp"
#include "offroad/rng.hpp"

namespace offroad {

using Model = SegmentationModel<float>;

/// Predict class ids for one image of any size. The image is padded
/// bottom/right to a multiple of 32 and the prediction cropped back.
template <class T>
LabelMap predict_labels(SegmentationModel<T>& model, const Image& img, std::uint8_t pad_value = 0) {
    const int h = (img.height + 31) / 32 * 32, w = (img.width + 31) / 32 * 32;
    const Image padded = (h == img.height && w == img.width) ? img : pad_bottom_right(img, h, w, pad_value);
    LabelMap full = std::move(argmax_labels(segment(model, {&padded}))[0]);
    return (h == img.height && w == img.width) ? full : crop(full, 0, 0, img.height, img.width);
}

/// Training-time augmentation of one sample: geometric then photometric.
inline std::pair<Image, LabelMap> augment_sample(std::pair<Image, LabelMap> sample, const AugmentConfig& cfg,
                                                 RngStream rng) {
    if (cfg.geometric_enabled) sample = geometric_pipeline(sample.first, sample.second, cfg.geometric, rng);
    if (cfg.photometric_enabled) sample.first = photometric_distortion(sample.first, cfg.photometric, rng);
    return sample;
}

struct ValidationRecord {
    std::int64_t iteration = 0;
    double miou = 0.0;
    std::vector<std::optional<double>> per_class_iou;
    bool used_ema = false;
    std::int64_t ema_updates = 0;
};

struct LossRecord {
    std::int64_t iteration = 0;  // optimizer step index (0-based)
    double loss = 0.0;
    double lr = 0.0;
    std::uint64_t pixels = 0;
};

struct RunManifest {
    nlohmann::json config;
    std::string config_id;
    std::int64_t start_iteration = 0;
    std::int64_t end_iteration = 0;
    std::vector<LossRecord> losses;
    std::vector<ValidationRecord> validations;
    std::vector<std::string> checkpoints;
    std::vector<std::string> warnings;
};

inline nlohmann::json to_json(const RunManifest& m) {
    using nlohmann::json;
    json j;
    j["config"] = m.config;
    j["config_id"] = m.config_id;
    j["start_iteration"] = m.start_iteration;
    j["end_iteration"] = m.end_iteration;
    j["losses"] = json::array();
    for (const auto& l : m.losses)
        j["losses"].push_back({{"iteration", l.iteration}, {"loss", l.loss}, {"lr", l.lr}, {"pixels", l.pixels}});
    j["validations"] = json::array();
    for (const auto& v : m.validations) {
        json pc = json::array();
        for (const auto& x : v.per_class_iou) pc.push_back(x ? json(*x) : json(nullptr));
        j["validations"].push_back({{"iteration", v.iteration},
                                    {"miou", std::isnan(v.miou) ? json(nullptr) : json(v.miou)},
                                    {"per_class_iou", pc},
                                    {"parameters", v.used_ema ? "ema" : "live"},
                                    {"ema_updates", v.ema_updates}});
    }
    j["checkpoints"] = m.checkpoints;
    j["warnings"] = m.warnings;
    return j;
}

/// Owns the model, optimizer and EMA state of one training run.
///
/// Sample slot s (the s-th image drawn since iteration 0) is read from
/// position s mod N of the epoch-(s / N) permutation and augmented with its own
/// RngStream derived from (seed, s). The whole run is therefore a function of
/// the config alone, independent of worker count and of where it was resumed.
class Trainer {
public:
    Trainer(PipelineConfig cfg, Dataset train, std::optional<Dataset> val = std::nullopt)
        : cfg_((cfg.validate(), std::move(cfg))), train_(std::move(train)), val_(std::move(val)), model_(cfg_.model),
          ema_(cfg_.ema.decay) {
        if (train_.size() == 0) throw DataError("training dataset is empty");
        model_.init(cfg_.train.seed);
        params_ = model_.parameters();
        opt_ = OptimizerState<float>(cfg_.optim, params_);
    }

    /// Continue a run from a checkpoint written by this class.
    Trainer(const Checkpoint& ck, Dataset train, std::optional<Dataset> val = std::nullopt)
        : Trainer(ck.config, std::move(train), std::move(val)) {
        import_params(params_, ck.params);
        iteration_ = ck.iteration;
        opt_.step = ck.optimizer_step;
        opt_.m = ck.adam_m;
        opt_.v = ck.adam_v;
        if (ck.ema_initialized) {
            if (ck.ema_decay != cfg_.ema.decay) throw ConfigError("checkpoint EMA decay differs from its config");
            ema_.restore(ck.ema_shadow, ck.ema_updates, true);
        }
    }

    // params_ points into model_, so the trainer stays in place.
    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    const PipelineConfig& config() const { return cfg_; }
    Model& model() { return model_; }
    const std::vector<nn::Param<float>*>& parameters() const { return params_; }
    const EmaState& ema() const { return ema_; }
    const OptimizerState<float>& optimizer() const { return opt_; }
    std::int64_t iteration() const { return iteration_; }

    Checkpoint checkpoint() const {
        Checkpoint ck;
        ck.config = cfg_;
        ck.iteration = iteration_;
        ck.params = export_params(params_);
        ck.optimizer_step = opt_.step;
        ck.adam_m = opt_.m;
        ck.adam_v = opt_.v;
        ck.ema_initialized = ema_.initialized();
        ck.ema_decay = ema_.decay();
        ck.ema_updates = ema_.updates();
        ck.ema_shadow = ema_.shadow();
        return ck;
    }

    /// Augmented samples for slots [first, first + count).
    std::vector<std::pair<Image, LabelMap>> load_slots(std::uint64_t first, int count) {
        std::vector<std::size_t> idx(static_cast<std::size_t>(count));
        for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = dataset_index(first + static_cast<std::uint64_t>(i));
        auto work = [&](int i) {
            const std::uint64_t slot = first + static_cast<std::uint64_t>(i);
            return augment_sample(train_.load(idx[static_cast<std::size_t>(i)]), cfg_.augment,
                                  RngStream::derive(cfg_.train.seed, slot));
        };
        std::vector<std::pair<Image, LabelMap>> out(static_cast<std::size_t>(count));
        const int workers = std::min(cfg_.train.num_workers, count);
        if (workers <= 1) {
            for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = work(i);
            return out;
        }
        std::vector<std::future<void>> jobs;
        for (int wk = 0; wk < workers; ++wk)
            jobs.push_back(std::async(std::launch::async, [&, wk] {
                for (int i = wk; i < count; i += workers) out[static_cast<std::size_t>(i)] = work(i);
            }));
        for (auto& j : jobs) j.get();
        return out;
    }

    /// One optimizer step over batch_size x grad_accumulation_steps samples.
    LossRecord step() {
        const auto& tc = cfg_.train;
        const double lr = poly_lr(iteration_, cfg_.schedule);
        model_.zero_grad();
        double loss_sum = 0.0;
        std::uint64_t pixels = 0;
        for (int a = 0; a < tc.grad_accumulation_steps; ++a) {
            const std::uint64_t first = (static_cast<std::uint64_t>(iteration_) * tc.grad_accumulation_steps + a) *
                                        static_cast<std::uint64_t>(tc.batch_size);
            auto batch = load_slots(first, tc.batch_size);
            std::vector<const Image*> imgs;
            std::vector<const LabelMap*> labs;
            for (const auto& s : batch) {
                imgs.push_back(&s.first);
                labs.push_back(&s.second);
            }
            nn::Tensor<float> logits = segment(model_, imgs);
            const LossStats ls = cross_entropy_loss(logits, labs);
            if (!std::isfinite(ls.sum))
                throw NumericError("non-finite loss at iteration " + std::to_string(iteration_) + ", micro-batch " +
                                   std::to_string(a) + " (lr " + std::to_string(lr) + ")");
            loss_sum += ls.sum;
            pixels += ls.count;
            // Sum-reduced here; rescaled by the total pixel count below so that
            // accumulation matches a single large batch.
            model_.backward(cross_entropy_backward(logits, labs, 1.0));
        }
        if (pixels > 0) {
            const float scale = static_cast<float>(1.0 / static_cast<double>(pixels));
            for (auto* p : params_)
                for (auto& g : p->grad) g *= scale;
        }
        adamw_step(params_, opt_, lr);
        if (cfg_.ema.enabled) ema_.update(params_);
        LossRecord rec{iteration_, pixels ? loss_sum / static_cast<double>(pixels) : 0.0, lr, pixels};
        ++iteration_;
        return rec;
    }

    /// Evaluate on `data` with the EMA snapshot (when EMA is enabled) or the live weights.
    EvalResult evaluate(const Dataset& data, bool use_ema) {
        std::vector<EvalSample> samples;
        for (std::size_t i = 0; i < data.size(); ++i)
            samples.push_back({data.names[i], [&data, i] { return data.load(i); }});
        const bool swap = use_ema && ema_.initialized();
        std::vector<std::vector<float>> live;
        if (swap) {
            live = copy_values(params_);
            load_values(params_, ema_.snapshot<float>());
        }
        auto restore = [&] {
            if (swap) load_values(params_, live);
        };
        try {
            EvalResult r = evaluate_dataset(
                [&](const Image& img) { return predict_labels(model_, img, cfg_.augment.geometric.image_pad_value); },
                samples);
            restore();
            r.report.config_id = config_id(cfg_);
            r.report.model_id = std::string(swap ? "ema" : "live") + "@" + std::to_string(iteration_);
            return r;
        } catch (...) {
            restore();
            throw;
        }
    }

    /// Train until `stop_at` (default: schedule.total_iters), validating and
    /// checkpointing on the configured intervals. Writes the final checkpoint
    /// and manifest under `output_dir` when it is non-empty.
    RunManifest run(std::optional<std::int64_t> stop_at = std::nullopt, const std::filesystem::path& output_dir = {}) {
        const std::int64_t end = stop_at.value_or(cfg_.schedule.total_iters);
        if (end > cfg_.schedule.total_iters) throw ConfigError("stop iteration beyond schedule.total_iters");
        RunManifest m;
        m.config = to_json(cfg_);
        m.config_id = config_id(cfg_);
        m.start_iteration = iteration_;
        auto save = [&](const std::string& name) {
            if (output_dir.empty()) return;
            const auto path = output_dir / "checkpoints" / name;
            save_checkpoint(path, checkpoint());
            m.checkpoints.push_back(path.string());
        };
        while (iteration_ < end) {
            m.losses.push_back(step());
            if (val_ && iteration_ % cfg_.train.eval_interval == 0) m.validations.push_back(validate());
            if (iteration_ % cfg_.train.checkpoint_interval == 0) save(checkpoint_name(iteration_));
        }
        if (m.checkpoints.empty() || iteration_ % cfg_.train.checkpoint_interval != 0) save(checkpoint_name(iteration_));
        m.end_iteration = iteration_;
        if (!output_dir.empty()) {
            std::ofstream out(output_dir / "manifest.json");
            out << to_json(m).dump(2) << "\n";
        }
        return m;
    }

    ValidationRecord validate() {
        const bool use_ema = cfg_.ema.enabled;
        EvalResult r = evaluate(*val_, use_ema);
        return {iteration_, r.report.miou, r.report.per_class_iou, use_ema && ema_.initialized(), ema_.updates()};
    }

    static std::string checkpoint_name(std::int64_t it) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "iter_%08lld.ckpt", static_cast<long long>(it));
        return buf;
    }

private:
    std::size_t dataset_index(std::uint64_t slot) {
        const std::uint64_t n = train_.size();
        const std::uint64_t epoch = slot / n;
        if (!perm_epoch_ || *perm_epoch_ != epoch) {
            perm_.resize(n);
            for (std::uint64_t i = 0; i < n; ++i) perm_[i] = i;
            RngStream rng = RngStream::derive(cfg_.train.seed ^ 0x5eedf00dULL, epoch);
            for (std::uint64_t i = n; i > 1; --i) std::swap(perm_[i - 1], perm_[rng.below(i)]);
            perm_epoch_ = epoch;
        }
        return perm_[slot % n];
    }

    PipelineConfig cfg_;
    Dataset train_;
    std::optional<Dataset> val_;
    Model model_;
    std::vector<nn::Param<float>*> params_;
    OptimizerState<float> opt_;
    EmaState ema_;
    std::int64_t iteration_ = 0;
    std::vector<std::size_t> perm_;
    std::optional<std::uint64_t> perm_epoch_;
};

/// Model rebuilt from a checkpoint, with live or EMA weights.
inline Model model_from_checkpoint(const Checkpoint& ck, bool use_ema) {
    Model model(ck.config.model);
    auto params = model.parameters();
    import_params(params, ck.params);
    if (use_ema) {
        if (!ck.ema_initialized) throw ConfigError("checkpoint holds no EMA state; rerun without --use-ema");
        EmaState ema(ck.ema_decay);
        ema.restore(ck.ema_shadow, ck.ema_updates, true);
        load_values(params, ema.snapshot<float>());
    }
    return model;
}

/// Argmax masks for a list of images.
inline std::vector<LabelMap> predict(const Checkpoint& ck, const std::vector<Image>& images, bool use_ema) {
    Model model = model_from_checkpoint(ck, use_ema);
    std::vector<LabelMap> out;
    for (const auto& img : images) out.push_back(predict_labels(model, img, ck.config.augment.geometric.image_pad_value));
    return out;
}

}  // namespace offroad
