#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "offroad/error.hpp"
#include "offroad/nn/layers.hpp"
#include "offroad/raster.hpp"
#include "offroad/rng.hpp"
#include "offroad/taxonomy.hpp"

namespace offroad {

inline constexpr std::array<int, 4> kPyramidStrides = {4, 8, 16, 32};

struct ModelConfig {
    std::array<int, 4> backbone_channels{32, 64, 128, 256};
    std::array<int, 4> backbone_depths{1, 1, 1, 1};  // residual blocks per stage
    int decoder_channels = 128;
    std::vector<int> psp_bin_sizes{1, 2, 3, 6};
    int num_classes = kNumClasses;
    nn::NormKind norm_kind = nn::NormKind::group;
    int norm_groups = 8;
    std::array<double, 3> pixel_mean{123.675, 116.28, 103.53};
    std::array<double, 3> pixel_std{58.395, 57.12, 57.375};

    void validate() const {
        if (num_classes != kNumClasses) throw ConfigError("model.num_classes must be 9");
        for (int c : backbone_channels)
            if (c <= 0) throw ConfigError("model.backbone_channels must be positive");
        for (int d : backbone_depths)
            if (d < 0) throw ConfigError("model.backbone_depths must be non-negative");
        if (decoder_channels <= 0) throw ConfigError("model.decoder_channels must be positive");
        if (psp_bin_sizes.empty()) throw ConfigError("model.psp_bin_sizes must not be empty");
        for (std::size_t i = 0; i < psp_bin_sizes.size(); ++i) {
            if (psp_bin_sizes[i] <= 0) throw ConfigError("model.psp_bin_sizes must be positive");
            if (i > 0 && psp_bin_sizes[i] <= psp_bin_sizes[i - 1])
                throw ConfigError("model.psp_bin_sizes must be strictly increasing");
        }
        for (double s : pixel_std)
            if (!(s > 0.0)) throw ConfigError("model.pixel_std must be positive");
        if (norm_kind == nn::NormKind::group) {
            if (norm_groups <= 0) throw ConfigError("model.norm_groups must be positive");
            auto check = [&](int ch, const char* what) {
                const int g = std::min(norm_groups, ch);
                if (ch % g != 0)
                    throw ConfigError(std::string("model.norm_groups must divide ") + what);
            };
            for (int c : backbone_channels) check(c, "every backbone width");
            check(decoder_channels, "model.decoder_channels");
            // Pooled 1x1 PSP cells normalize over one group's channels only.
            if (decoder_channels / std::min(norm_groups, decoder_channels) < 2)
                throw ConfigError("model.decoder_channels / model.norm_groups must be at least 2");
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline const char* to_string(nn::NormKind k) { return k == nn::NormKind::group ? "group" : "none"; }

inline nn::NormKind norm_kind_from_string(const std::string& s) {
    if (s == "group") return nn::NormKind::group;
    if (s == "none") return nn::NormKind::none;
    throw ConfigError("model.norm_kind must be 'group' or 'none', got '" + s + "'");
}

/// Four feature rasters at strides 4, 8, 16 and 32.
template <class T>
struct FeaturePyramid {
    std::array<nn::Tensor<T>, 4> levels;
};

/// Normalized NCHW batch from 8-bit RGB images of identical size.
template <class T>
nn::Tensor<T> to_tensor(const std::vector<const Image*>& images, const ModelConfig& cfg) {
    if (images.empty()) throw ShapeError("empty image batch");
    const int h = images.front()->height, w = images.front()->width;
    nn::Tensor<T> t(static_cast<int>(images.size()), 3, h, w);
    for (int ni = 0; ni < t.n; ++ni) {
        const Image& img = *images[static_cast<std::size_t>(ni)];
        if (!img.same_shape(h, w)) throw ShapeError("images in a batch must share one size");
        for (int c = 0; c < 3; ++c) {
            const double mean = cfg.pixel_mean[static_cast<std::size_t>(c)];
            const double inv = 1.0 / cfg.pixel_std[static_cast<std::size_t>(c)];
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) t.at(ni, c, y, x) = static_cast<T>((img.at(y, x, c) - mean) * inv);
        }
    }
    return t;
}

template <class T>
class ResidualBlock {
public:
    ResidualBlock() = default;
    ResidualBlock(const std::string& name, int ch, const ModelConfig& cfg)
        : conv1_(name + ".conv1", ch, ch, 3, 1, nn::PadMode::zeros, cfg.norm_kind, cfg.norm_groups, true),
          conv2_(name + ".conv2", ch, ch, 3, 1, nn::PadMode::zeros, cfg.norm_kind, cfg.norm_groups, false) {}

    void init(RngStream& rng) {
        conv1_.init(rng);
        conv2_.init(rng);
    }

    template <class F>
    void visit(F&& f) {
        conv1_.visit(f);
        conv2_.visit(f);
    }

    nn::Tensor<T> forward(const nn::Tensor<T>& x) {
        nn::Tensor<T> y = conv2_.forward(conv1_.forward(x));
        nn::add_inplace(y, x);
        return relu_.forward(y);
    }

    nn::Tensor<T> backward(const nn::Tensor<T>& dy) {
        nn::Tensor<T> d = relu_.backward(dy);
        nn::Tensor<T> dx = conv1_.backward(conv2_.backward(d));
        nn::add_inplace(dx, d);
        return dx;
    }

private:
    nn::ConvNormAct<T> conv1_, conv2_;
    nn::Relu<T> relu_;
};

/// Small residual convolutional pyramid: a stride-4 stem, then one stage per
/// pyramid level, each stage after the first opening with a stride-2 conv.
template <class T>
class Backbone {
public:
    Backbone() = default;
    explicit Backbone(const ModelConfig& cfg) {
        const auto& ch = cfg.backbone_channels;
        stem_.emplace_back("backbone.stem.0", 3, ch[0], 3, 2, nn::PadMode::zeros, cfg.norm_kind, cfg.norm_groups);
        stem_.emplace_back("backbone.stem.1", ch[0], ch[0], 3, 2, nn::PadMode::zeros, cfg.norm_kind, cfg.norm_groups);
        for (int s = 0; s < 4; ++s) {
            const std::string name = "backbone.stage" + std::to_string(s);
            Stage stage;
            if (s > 0)
                stage.down.emplace_back(name + ".down", ch[s - 1], ch[s], 3, 2, nn::PadMode::zeros,
                                        cfg.norm_kind, cfg.norm_groups);
            for (int b = 0; b < cfg.backbone_depths[static_cast<std::size_t>(s)]; ++b)
                stage.blocks.emplace_back(name + ".block" + std::to_string(b), ch[s], cfg);
            stages_[static_cast<std::size_t>(s)] = std::move(stage);
        }
    }

    void init(RngStream& rng) {
        visit_modules([&](auto& m) { m.init(rng); });
    }

    template <class F>
    void visit(F&& f) {
        visit_modules([&](auto& m) { m.visit(f); });
    }

    FeaturePyramid<T> forward(const nn::Tensor<T>& x) {
        if (x.h % 32 != 0 || x.w % 32 != 0 || x.h == 0 || x.w == 0)
            throw ShapeError("input " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                             " must have height and width divisible by 32");
        FeaturePyramid<T> pyr;
        nn::Tensor<T> cur = x;
        for (auto& m : stem_) cur = m.forward(cur);
        for (std::size_t s = 0; s < 4; ++s) {
            for (auto& m : stages_[s].down) cur = m.forward(cur);
            for (auto& b : stages_[s].blocks) cur = b.forward(cur);
            pyr.levels[s] = cur;
        }
        return pyr;
    }

    /// Backpropagate per-level gradients; returns the gradient w.r.t. the input.
    nn::Tensor<T> backward(const std::array<nn::Tensor<T>, 4>& grads) {
        nn::Tensor<T> d = grads[3];
        for (int s = 3; s >= 0; --s) {
            auto& st = stages_[static_cast<std::size_t>(s)];
            if (s < 3) nn::add_inplace(d, grads[static_cast<std::size_t>(s)]);
            for (auto it = st.blocks.rbegin(); it != st.blocks.rend(); ++it) d = it->backward(d);
            for (auto it = st.down.rbegin(); it != st.down.rend(); ++it) d = it->backward(d);
        }
        for (auto it = stem_.rbegin(); it != stem_.rend(); ++it) d = it->backward(d);
        return d;
    }

private:
    struct Stage {
        std::vector<nn::ConvNormAct<T>> down;
        std::vector<ResidualBlock<T>> blocks;
    };

    template <class F>
    void visit_modules(F&& f) {
        for (auto& m : stem_) f(m);
        for (auto& st : stages_) {
            for (auto& m : st.down) f(m);
            for (auto& b : st.blocks) f(b);
        }
    }

    std::vector<nn::ConvNormAct<T>> stem_;
    std::array<Stage, 4> stages_;
};

/// UPerNet-style decoder.
///
/// Context branch: the stride-32 level is average-pooled onto each bin grid,
/// projected, upsampled back and concatenated with the level itself, then
/// projected to `decoder_channels`; the result replaces the top level.
/// Fusion branch: 1x1 lateral projections of the finer levels receive the
/// upsampled coarser level top-down, each is refined by a 3x3 conv, all four
/// are resized to stride 4 and fused by concatenation + 3x3 projection.
///
/// 3x3 convolutions here use replicate padding, so a spatially constant
/// pyramid produces a spatially constant output.
template <class T>
class UperDecoder {
public:
    UperDecoder() = default;
    explicit UperDecoder(const ModelConfig& cfg) : bins_(cfg.psp_bin_sizes), channels_(cfg.decoder_channels) {
        const auto& ch = cfg.backbone_channels;
        const int D = cfg.decoder_channels;
        const auto nk = cfg.norm_kind;
        const int g = cfg.norm_groups;
        for (std::size_t j = 0; j < bins_.size(); ++j)
            psp_.emplace_back("decoder.psp.pool" + std::to_string(bins_[j]), ch[3], D, 1, 1, nn::PadMode::zeros, nk, g);
        psp_bottleneck_ = nn::ConvNormAct<T>("decoder.psp.bottleneck", ch[3] + static_cast<int>(bins_.size()) * D, D,
                                             3, 1, nn::PadMode::replicate, nk, g);
        for (int i = 0; i < 3; ++i) {
            lateral_[static_cast<std::size_t>(i)] = nn::ConvNormAct<T>(
                "decoder.lateral" + std::to_string(i), ch[static_cast<std::size_t>(i)], D, 1, 1, nn::PadMode::zeros, nk, g);
            fpn_[static_cast<std::size_t>(i)] =
                nn::ConvNormAct<T>("decoder.fpn" + std::to_string(i), D, D, 3, 1, nn::PadMode::replicate, nk, g);
        }
        fpn_bottleneck_ = nn::ConvNormAct<T>("decoder.fpn_bottleneck", 4 * D, D, 3, 1, nn::PadMode::replicate, nk, g);
    }

    int channels() const { return channels_; }

    void init(RngStream& rng) {
        visit_modules([&](auto& m) { m.init(rng); });
    }

    template <class F>
    void visit(F&& f) {
        visit_modules([&](auto& m) { m.visit(f); });
    }

    nn::Tensor<T> forward(const FeaturePyramid<T>& pyr) {
        const auto& top = pyr.levels[3];
        for (int b : bins_)
            if (b > top.h || b > top.w)
                throw ShapeError("psp bin size " + std::to_string(b) + " exceeds the stride-32 feature size " +
                                 std::to_string(top.h) + "x" + std::to_string(top.w));
        for (std::size_t i = 0; i < 4; ++i) {
            dims_[i] = {pyr.levels[i].h, pyr.levels[i].w};
            level_channels_[i] = pyr.levels[i].c;
        }

        // Context branch.
        std::vector<nn::Tensor<T>> up;
        up.reserve(bins_.size());
        for (std::size_t j = 0; j < bins_.size(); ++j) {
            nn::Tensor<T> q = psp_[j].forward(nn::adaptive_avg_pool(top, bins_[j]));
            up.push_back(nn::resize_bilinear(q, top.h, top.w));
        }
        std::vector<const nn::Tensor<T>*> parts{&top};
        for (auto& u : up) parts.push_back(&u);
        std::array<nn::Tensor<T>, 4> lat;
        lat[3] = psp_bottleneck_.forward(nn::concat_channels(parts));

        // Fusion branch.
        for (std::size_t i = 0; i < 3; ++i) lat[i] = lateral_[i].forward(pyr.levels[i]);
        for (std::size_t i = 3; i >= 1; --i)
            nn::add_inplace(lat[i - 1], nn::resize_bilinear(lat[i], dims_[i - 1][0], dims_[i - 1][1]));
        std::array<nn::Tensor<T>, 4> outs;
        for (std::size_t i = 0; i < 3; ++i) outs[i] = fpn_[i].forward(lat[i]);
        outs[3] = std::move(lat[3]);
        std::array<nn::Tensor<T>, 4> resized;
        resized[0] = std::move(outs[0]);
        for (std::size_t i = 1; i < 4; ++i) resized[i] = nn::resize_bilinear(outs[i], dims_[0][0], dims_[0][1]);
        return fpn_bottleneck_.forward(nn::concat_channels<T>({&resized[0], &resized[1], &resized[2], &resized[3]}));
    }

    std::array<nn::Tensor<T>, 4> backward(const nn::Tensor<T>& dfused) {
        const int D = channels_;
        auto dparts = nn::split_channels(fpn_bottleneck_.backward(dfused), {D, D, D, D});
        std::array<nn::Tensor<T>, 4> dlat;
        dlat[0] = fpn_[0].backward(dparts[0]);
        for (std::size_t i = 1; i < 4; ++i) {
            nn::Tensor<T> d = nn::resize_bilinear_backward(dparts[i], dims_[i][0], dims_[i][1]);
            dlat[i] = i < 3 ? fpn_[i].backward(d) : std::move(d);
        }
        for (std::size_t i = 1; i < 4; ++i)
            nn::add_inplace(dlat[i], nn::resize_bilinear_backward(dlat[i - 1], dims_[i][0], dims_[i][1]));

        std::array<nn::Tensor<T>, 4> dlevels;
        for (std::size_t i = 0; i < 3; ++i) dlevels[i] = lateral_[i].backward(dlat[i]);

        std::vector<int> widths{level_channels_[3]};
        for (std::size_t j = 0; j < bins_.size(); ++j) widths.push_back(D);
        auto dctx = nn::split_channels(psp_bottleneck_.backward(dlat[3]), widths);
        dlevels[3] = std::move(dctx[0]);
        for (std::size_t j = 0; j < bins_.size(); ++j) {
            nn::Tensor<T> dq = nn::resize_bilinear_backward(dctx[j + 1], bins_[j], bins_[j]);
            nn::add_inplace(dlevels[3], nn::adaptive_avg_pool_backward(psp_[j].backward(dq), dims_[3][0], dims_[3][1]));
        }
        return dlevels;
    }

private:
    template <class F>
    void visit_modules(F&& f) {
        for (auto& m : psp_) f(m);
        f(psp_bottleneck_);
        for (auto& m : lateral_) f(m);
        for (auto& m : fpn_) f(m);
        f(fpn_bottleneck_);
    }

    std::vector<int> bins_;
    int channels_ = 0;
    std::vector<nn::ConvNormAct<T>> psp_;
    nn::ConvNormAct<T> psp_bottleneck_;
    std::array<nn::ConvNormAct<T>, 3> lateral_;
    std::array<nn::ConvNormAct<T>, 3> fpn_;
    nn::ConvNormAct<T> fpn_bottleneck_;
    std::array<std::array<int, 2>, 4> dims_{};
    std::array<int, 4> level_channels_{};
};

/// Backbone + decoder + 1x1 classifier head, upsampled bilinearly to the input size.
template <class T>
class SegmentationModel {
public:
    explicit SegmentationModel(const ModelConfig& cfg)
        : cfg_(cfg), backbone_((cfg.validate(), cfg)), decoder_(cfg),
          head_("head.cls", cfg.decoder_channels, cfg.num_classes, 1, 1, nn::PadMode::zeros, true) {}

    const ModelConfig& config() const { return cfg_; }
    Backbone<T>& backbone() { return backbone_; }
    UperDecoder<T>& decoder() { return decoder_; }

    void init(std::uint64_t seed) {
        RngStream rng = RngStream::derive(seed, 0x1417);
        backbone_.init(rng);
        decoder_.init(rng);
        head_.init_normal_weights(0.01, rng);
    }

    /// Visits every trainable parameter in a fixed registration order.
    template <class F>
    void visit(F&& f) {
        backbone_.visit(f);
        decoder_.visit(f);
        head_.visit(f);
    }

    std::vector<nn::Param<T>*> parameters() {
        std::vector<nn::Param<T>*> out;
        visit([&](nn::Param<T>& p) { out.push_back(&p); });
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        visit([&](nn::Param<T>& p) { n += p.size(); });
        return n;
    }

    void zero_grad() {
        visit([](nn::Param<T>& p) { p.zero_grad(); });
    }

    /// Raw logits, N x 9 x H x W.
    nn::Tensor<T> forward(const nn::Tensor<T>& x) {
        input_h_ = x.h;
        input_w_ = x.w;
        FeaturePyramid<T> pyr = backbone_.forward(x);
        nn::Tensor<T> fused = decoder_.forward(pyr);
        nn::Tensor<T> low = head_.forward(fused);
        low_h_ = low.h;
        low_w_ = low.w;
        return nn::resize_bilinear(low, x.h, x.w);
    }

    /// Accumulates parameter gradients for the last forward call.
    nn::Tensor<T> backward(const nn::Tensor<T>& dlogits) {
        nn::Tensor<T> dlow = nn::resize_bilinear_backward(dlogits, low_h_, low_w_);
        nn::Tensor<T> dfused = head_.backward(dlow);
        return backbone_.backward(decoder_.backward(dfused));
    }

private:
    ModelConfig cfg_;
    Backbone<T> backbone_;
    UperDecoder<T> decoder_;
    nn::Conv2d<T> head_;
    int input_h_ = 0, input_w_ = 0, low_h_ = 0, low_w_ = 0;
};

/// Logit batch from a batch of images, normalized per the model config.
template <class T>
nn::Tensor<T> segment(SegmentationModel<T>& model, const std::vector<const Image*>& images) {
    return model.forward(to_tensor<T>(images, model.config()));
}

struct LossStats {
    double sum = 0.0;         // summed negative log-likelihood
    std::size_t count = 0;    // non-ignored pixels
    double mean = 0.0;        // sum / count, or 0 when empty
    bool empty = false;       // every pixel was ignored
};

namespace detail {
inline void check_loss_inputs(int n, int c, int h, int w, const std::vector<const LabelMap*>& labels) {
    if (c != kNumClasses) throw ShapeError("logits must have 9 channels");
    if (static_cast<int>(labels.size()) != n) throw ShapeError("label batch size differs from logits");
    for (const auto* l : labels)
        if (!l->same_shape(h, w)) throw ShapeError("label map shape differs from logits");
}
}  // namespace detail

/// Pixel-wise softmax cross-entropy, averaged over non-ignored pixels.
template <class T>
LossStats cross_entropy_loss(const nn::Tensor<T>& logits, const std::vector<const LabelMap*>& labels,
                             std::uint8_t ignore_id = kIgnoreId) {
    detail::check_loss_inputs(logits.n, logits.c, logits.h, logits.w, labels);
    LossStats s;
    const std::size_t plane = logits.plane();
    for (int ni = 0; ni < logits.n; ++ni) {
        const T* img = logits.image(ni);
        const auto& lab = labels[static_cast<std::size_t>(ni)]->data;
        for (std::size_t p = 0; p < plane; ++p) {
            const std::uint8_t y = lab[p];
            if (y == ignore_id) continue;
            if (y >= logits.c) throw DataError("label id " + std::to_string(y) + " outside the class range");
            double mx = img[p];
            for (int k = 1; k < logits.c; ++k) mx = std::max(mx, static_cast<double>(img[k * plane + p]));
            double z = 0.0;
            for (int k = 0; k < logits.c; ++k) z += std::exp(img[k * plane + p] - mx);
            s.sum += std::log(z) + mx - img[y * plane + p];
            ++s.count;
        }
    }
    s.empty = s.count == 0;
    s.mean = s.empty ? 0.0 : s.sum / static_cast<double>(s.count);
    return s;
}

/// Gradient of `scale` times the summed cross-entropy w.r.t. the logits.
/// With scale = 1 / count this is the gradient of the mean loss.
template <class T>
nn::Tensor<T> cross_entropy_backward(const nn::Tensor<T>& logits, const std::vector<const LabelMap*>& labels,
                                     double scale, std::uint8_t ignore_id = kIgnoreId) {
    detail::check_loss_inputs(logits.n, logits.c, logits.h, logits.w, labels);
    nn::Tensor<T> d(logits.n, logits.c, logits.h, logits.w);
    const std::size_t plane = logits.plane();
    std::vector<double> prob(static_cast<std::size_t>(logits.c));
    for (int ni = 0; ni < logits.n; ++ni) {
        const T* img = logits.image(ni);
        T* out = d.image(ni);
        const auto& lab = labels[static_cast<std::size_t>(ni)]->data;
        for (std::size_t p = 0; p < plane; ++p) {
            const std::uint8_t y = lab[p];
            if (y == ignore_id) continue;
            double mx = img[p];
            for (int k = 1; k < logits.c; ++k) mx = std::max(mx, static_cast<double>(img[k * plane + p]));
            double z = 0.0;
            for (int k = 0; k < logits.c; ++k) z += (prob[static_cast<std::size_t>(k)] = std::exp(img[k * plane + p] - mx));
            for (int k = 0; k < logits.c; ++k)
                out[k * plane + p] = static_cast<T>(scale * (prob[static_cast<std::size_t>(k)] / z - (k == y ? 1.0 : 0.0)));
        }
    }
    return d;
}

/// Per-pixel argmax over the class axis; ties resolve to the lowest class id.
template <class T>
std::vector<LabelMap> argmax_labels(const nn::Tensor<T>& logits) {
    std::vector<LabelMap> out;
    const std::size_t plane = logits.plane();
    for (int ni = 0; ni < logits.n; ++ni) {
        LabelMap m(logits.h, logits.w);
        const T* img = logits.image(ni);
        for (std::size_t p = 0; p < plane; ++p) {
            int best = 0;
            for (int k = 1; k < logits.c; ++k)
                if (img[k * plane + p] > img[best * plane + p]) best = k;
            m.data[p] = static_cast<std::uint8_t>(best);
        }
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace offroad
