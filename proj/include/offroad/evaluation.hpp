#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "offroad/error.hpp"
#include "offroad/raster.hpp"
#include "offroad/taxonomy.hpp"

namespace offroad {

/// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes = kNumClasses)
        : k_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

    int num_classes() const { return k_; }
    std::uint64_t operator()(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * k_ + pred]; }
    std::uint64_t& operator()(int gt, int pred) { return counts_[static_cast<std::size_t>(gt) * k_ + pred]; }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto c : counts_) t += c;
        return t;
    }

    ConfusionMatrix& merge(const ConfusionMatrix& other) {
        if (other.k_ != k_) throw ShapeError("cannot merge confusion matrices of different class counts");
        for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
        return *this;
    }

    friend ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) { return a.merge(b); }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

    const std::vector<std::uint64_t>& counts() const { return counts_; }

private:
    int k_;
    std::vector<std::uint64_t> counts_;
};

/// cm[gt, pred] += 1 for every pixel whose ground truth is not `ignore_id`.
inline void confusion_accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt,
                                 std::uint8_t ignore_id = kIgnoreId) {
    if (!pred.same_shape(gt.height, gt.width)) throw ShapeError("prediction and ground truth differ in shape");
    const int k = cm.num_classes();
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        const int g = gt.data[i];
        if (g == ignore_id) continue;
        const int p = pred.data[i];
        if (g >= k) throw DataError("ground-truth id " + std::to_string(g) + " out of range");
        if (p >= k) throw DataError("predicted id " + std::to_string(p) + " out of range");
        ++cm(g, p);
    }
}

/// Per-class IoU; std::nullopt marks a class with zero union.
struct IouResult {
    std::vector<std::optional<double>> per_class;
    double miou = std::nan("");
};

/// Arithmetic mean over the classes that have a value; NaN when none do.
inline double mean_iou(std::span<const std::optional<double>> per_class) {
    double sum = 0.0;
    int n = 0;
    for (const auto& v : per_class)
        if (v) {
            sum += *v;
            ++n;
        }
    return n ? sum / n : std::nan("");
}

inline IouResult iou_from_confusion(const ConfusionMatrix& cm) {
    const int k = cm.num_classes();
    IouResult r;
    r.per_class.resize(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        const std::uint64_t tp = cm(c, c);
        std::uint64_t fp = 0, fn = 0;
        for (int j = 0; j < k; ++j) {
            if (j == c) continue;
            fp += cm(j, c);
            fn += cm(c, j);
        }
        const std::uint64_t uni = tp + fp + fn;
        if (uni > 0) r.per_class[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
    }
    r.miou = mean_iou(r.per_class);
    return r;
}

struct EvalReport {
    std::string model_id;
    std::string config_id;
    std::vector<std::optional<double>> per_class_iou;  // fractions in [0, 1]
    double miou = std::nan("");
    std::vector<std::uint64_t> gt_pixels;    // per class
    std::vector<std::uint64_t> pred_pixels;  // per class, over non-ignored ground truth
    std::uint64_t evaluated_pixels = 0;
    std::uint64_t images = 0;
    std::uint64_t skipped = 0;

    std::vector<int> zero_union_classes() const {
        std::vector<int> out;
        for (std::size_t i = 0; i < per_class_iou.size(); ++i)
            if (!per_class_iou[i]) out.push_back(static_cast<int>(i));
        return out;
    }
};

inline EvalReport make_report(const ConfusionMatrix& cm) {
    const int k = cm.num_classes();
    auto iou = iou_from_confusion(cm);
    EvalReport r;
    r.per_class_iou = std::move(iou.per_class);
    r.miou = iou.miou;
    r.gt_pixels.assign(static_cast<std::size_t>(k), 0);
    r.pred_pixels.assign(static_cast<std::size_t>(k), 0);
    for (int g = 0; g < k; ++g)
        for (int p = 0; p < k; ++p) {
            r.gt_pixels[static_cast<std::size_t>(g)] += cm(g, p);
            r.pred_pixels[static_cast<std::size_t>(p)] += cm(g, p);
        }
    r.evaluated_pixels = cm.total();
    return r;
}

/// One sample as seen by the evaluator.
struct EvalSample {
    std::string name;
    std::function<std::pair<Image, LabelMap>()> load;  // may throw DataError
};

struct EvalResult {
    ConfusionMatrix matrix;
    EvalReport report;
    std::vector<std::string> warnings;
};

/// Stream every sample through `predict` into one confusion matrix.
/// Samples that fail to load are skipped with a warning and counted.
template <class Predictor>
EvalResult evaluate_dataset(Predictor&& predict, const std::vector<EvalSample>& samples,
                            std::uint8_t ignore_id = kIgnoreId) {
    if (samples.empty()) throw DataError("evaluation dataset is empty");
    EvalResult res{ConfusionMatrix(kNumClasses), {}, {}};
    std::uint64_t images = 0, skipped = 0;
    for (const auto& s : samples) {
        std::pair<Image, LabelMap> data;
        try {
            data = s.load();
        } catch (const Error& e) {
            res.warnings.push_back("skipped " + s.name + ": " + e.what());
            ++skipped;
            continue;
        }
        LabelMap pred = predict(data.first);
        confusion_accumulate(res.matrix, pred, data.second, ignore_id);
        ++images;
    }
    res.report = make_report(res.matrix);
    res.report.images = images;
    res.report.skipped = skipped;
    return res;
}

namespace detail {
inline std::string percent_cell(const std::optional<double>& v) {
    if (!v || std::isnan(*v)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
    return buf;
}
}  // namespace detail

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["model_id"] = r.model_id;
    j["config_id"] = r.config_id;
    j["classes"] = nlohmann::json::array();
    for (auto name : Taxonomy::classes) j["classes"].push_back(std::string(name));
    j["per_class_iou"] = nlohmann::json::array();
    for (const auto& v : r.per_class_iou) j["per_class_iou"].push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
    j["miou"] = std::isnan(r.miou) ? nlohmann::json(nullptr) : nlohmann::json(r.miou);
    j["gt_pixels"] = r.gt_pixels;
    j["pred_pixels"] = r.pred_pixels;
    j["evaluated_pixels"] = r.evaluated_pixels;
    j["images"] = r.images;
    j["skipped"] = r.skipped;
    j["zero_union_classes"] = r.zero_union_classes();
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.model_id = j.at("model_id").get<std::string>();
    r.config_id = j.at("config_id").get<std::string>();
    for (const auto& v : j.at("per_class_iou"))
        r.per_class_iou.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    r.miou = j.at("miou").is_null() ? std::nan("") : j.at("miou").get<double>();
    r.gt_pixels = j.at("gt_pixels").get<std::vector<std::uint64_t>>();
    r.pred_pixels = j.at("pred_pixels").get<std::vector<std::uint64_t>>();
    r.evaluated_pixels = j.at("evaluated_pixels").get<std::uint64_t>();
    r.images = j.at("images").get<std::uint64_t>();
    r.skipped = j.at("skipped").get<std::uint64_t>();
    return r;
}

enum class ReportFormat { markdown, json };

/// Markdown table (mIoU first, then the classes in taxonomy order, as
/// percentages with two decimals) or the JSON form of the report.
inline std::string render_report(const EvalReport& r, ReportFormat fmt) {
    if (fmt == ReportFormat::json) return report_to_json(r).dump(2) + "\n";
    std::string head = "| network | mIoU |";
    std::string rule = "|---|---:|";
    for (auto name : Taxonomy::classes) {
        head += " " + std::string(name) + " |";
        rule += "---:|";
    }
    std::string row = "| " + (r.model_id.empty() ? std::string("model") : r.model_id) + " | " +
                      detail::percent_cell(std::isnan(r.miou) ? std::nullopt : std::optional<double>(r.miou)) + " |";
    for (std::size_t i = 0; i < Taxonomy::classes.size(); ++i)
        row += " " + detail::percent_cell(i < r.per_class_iou.size() ? r.per_class_iou[i] : std::nullopt) + " |";
    return head + "\n" + rule + "\n" + row + "\n";
}

}  // namespace offroad
