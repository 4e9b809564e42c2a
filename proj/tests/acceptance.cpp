// Acceptance runner: one PASS/FAIL/SKIP line per criterion, exit status 1 if
// any criterion fails. Each check is timed against its runtime budget.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>

#include "offroad/augmentation.hpp"
#include "offroad/evaluation.hpp"
#include "offroad/optim.hpp"
#include "offroad/taxonomy.hpp"
#include "offroad/train.hpp"

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "table_rows.hpp"
#include "toy.hpp"

using namespace offroad;

namespace {

struct Outcome {
    enum Kind { pass, fail, skip } kind;
    std::string detail;
};

Outcome check(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

int failures = 0;

void run(const char* name, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {Outcome::fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.kind == Outcome::pass && secs > budget_s) o = {Outcome::fail, o.detail + "; over the time budget"};
    const char* tag = o.kind == Outcome::pass ? "PASS" : o.kind == Outcome::fail ? "FAIL" : "SKIP";
    if (o.kind == Outcome::fail) ++failures;
    std::printf("%s  %-28s %s [%.2fs / %.0fs]\n", tag, name, o.detail.c_str(), secs, budget_s);
    std::fflush(stdout);
}

Outcome table_arithmetic() {
    std::string detail;
    bool ok = true;
    for (const auto& r : oracle::kTableRows) {
        std::vector<std::optional<double>> v(r.per_class.begin(), r.per_class.end());
        const double m = mean_iou(v);
        ok &= std::abs(m - r.miou) <= 0.005;
        detail += fmt("%s%.4f vs %.2f", detail.empty() ? "" : ", ", m, r.miou);
    }
    return check(ok, detail);
}

Outcome metric_oracle() {
    RngStream rng(2024);
    const std::vector<int> gtv{0, 1, 2, 3, 4, 5, 6, 7, 8, 255}, pv{0, 1, 2, 3, 4, 5, 6, 7, 8};
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const LabelMap pred = oracle::random_labels(16, 16, pv, rng);
        const LabelMap gt = oracle::random_labels(16, 16, gtv, rng);
        ConfusionMatrix cm;
        confusion_accumulate(cm, pred, gt);
        const auto ref = oracle::confusion(pred, gt, 9);
        bool same = true;
        for (int g = 0; g < 9; ++g)
            for (int p = 0; p < 9; ++p) same &= cm(g, p) == ref[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
        const auto iou = iou_from_confusion(cm);
        const auto sets = oracle::iou_by_sets({&pred}, {&gt}, 9);
        double sum = 0.0;
        int n = 0;
        for (int k = 0; k < 9; ++k) {
            const auto& v = iou.per_class[static_cast<std::size_t>(k)];
            const double s = sets[static_cast<std::size_t>(k)];
            if (std::isnan(s)) {
                same &= !v.has_value();
            } else {
                same &= v.has_value() && *v == s;
                sum += s;
                ++n;
            }
        }
        same &= iou.miou == sum / n;
        mismatches += !same;
    }
    return check(mismatches == 0, fmt("1000 random 16x16 pairs, %d mismatches", mismatches));
}

Outcome ema_closed_form() {
    const double alpha = 0.999;
    const std::vector<double> a{0.3, -2.0, 5.0}, c{-1.7, 4.0, 5.0};
    EmaState e(alpha);
    e.restore({a}, 0, true);
    double worst = 0.0;
    for (int t = 1; t <= 10000; ++t) {
        e.update(std::vector<std::vector<double>>{c});
        const double at = std::pow(alpha, t);
        for (std::size_t j = 0; j < a.size(); ++j)
            worst = std::max(worst, std::abs(e.shadow()[0][j] - (at * a[j] + (1.0 - at) * c[j])));
    }
    // Isolation: a snapshot is unaffected by later updates and does not count as one.
    nn::Param<double> p("w", {3});
    p.value = {1, 2, 3};
    EmaState iso(alpha);
    iso.init_from<double>({&p});
    const bool init_equal = iso.snapshot<double>()[0] == p.value;
    const auto snap = iso.snapshot<double>();
    const auto count = iso.updates();
    p.value = {7, 8, 9};
    iso.update<double>({&p});
    const bool isolated = snap[0] == std::vector<double>{1, 2, 3} && iso.updates() == count + 1 &&
                          p.value == std::vector<double>{7, 8, 9};
    return check(worst <= 1e-12 && init_equal && isolated,
                 fmt("max |iterative - closed form| = %.2e over t <= 1e4; snapshot isolation %s", worst,
                     init_equal && isolated ? "ok" : "broken"));
}

Outcome schedule() {
    const ScheduleConfig cfg;
    const bool ends = poly_lr(0, cfg) == 6e-5 && poly_lr(cfg.total_iters, cfg) == 0.0;
    RngStream rng(5);
    std::vector<std::int64_t> ts{0, cfg.total_iters};
    for (int i = 0; i < 10000; ++i) ts.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(cfg.total_iters) + 1)));
    std::sort(ts.begin(), ts.end());
    bool monotone = true;
    for (std::size_t i = 1; i < ts.size(); ++i) monotone &= poly_lr(ts[i], cfg) <= poly_lr(ts[i - 1], cfg);
    return check(ends && monotone, fmt("lr(0)=%.1e lr(T)=%g lr(T/2)=%.4e, monotone over 10^4 samples: %s",
                                       poly_lr(0, cfg), poly_lr(cfg.total_iters, cfg), poly_lr(cfg.total_iters / 2, cfg),
                                       monotone ? "yes" : "no"));
}

Outcome gradient_check() {
    const auto errors = oracle::gradient_check();
    double worst = 0.0;
    std::string worst_name;
    std::size_t entries = 0;
    bool live = true;
    for (const auto& e : errors) {
        entries += e.size;
        live &= e.analytic_norm > 0.0;
        if (e.rel_error > worst) {
            worst = e.rel_error;
            worst_name = e.name;
        }
    }
    return check(worst <= 1e-4 && live, fmt("%zu parameter groups, %zu entries, max relative error %.2e (%s)",
                                            errors.size(), entries, worst, worst_name.c_str()));
}

Outcome augmentation_suite() {
    RngStream data(77);
    auto random_image = [&](int h, int w) {
        Image img(h, w);
        for (auto& v : img.data) v = static_cast<std::uint8_t>(data.below(256));
        return img;
    };
    const Image img = random_image(24, 24);

    PhotometricConfig off;
    off.p_apply = 0.0;
    bool identity = true;
    for (std::uint64_t s = 0; s < 100; ++s) {
        RngStream r(s);
        identity &= photometric_distortion(img, off, r) == img;
    }

    const PhotometricConfig cfg;
    bool deterministic = true;
    for (std::uint64_t s = 0; s < 100; ++s) {
        RngStream a(s), b(s);
        deterministic &= photometric_distortion(img, cfg, a) == photometric_distortion(img, cfg, b);
    }

    // Extreme settings push values against both ends of the range.
    PhotometricConfig wide;
    wide.p_apply = 1.0;
    wide.brightness_delta = 255;
    wide.contrast_range = {0.01, 5.0};
    wide.saturation_range = {0.01, 5.0};
    wide.hue_delta = 180;
    bool in_range = true;
    for (int i = 0; i < 10000; ++i) {
        RngStream r(static_cast<std::uint64_t>(i));
        const Image in = random_image(4, 4);
        PhotometricTrace t;
        const Image out = photometric_distortion(in, i % 2 ? wide : cfg, r, &t);
        in_range &= out.same_shape(4, 4) && out.data.size() == in.data.size();
        for (ColorKind k : kColorOrder)
            if (t.applied(k) && !std::isfinite(*t.amounts[static_cast<std::size_t>(k)])) in_range = false;
    }

    std::array<int, 4> fired{};
    for (std::uint64_t s = 0; s < 1000; ++s) {
        RngStream r(1000 + s);
        PhotometricTrace t;
        photometric_distortion(img, cfg, r, &t);
        for (ColorKind k : kColorOrder) fired[static_cast<std::size_t>(k)] += t.applied(k);
    }
    double worst_rate_dev = 0.0;
    for (int n : fired) worst_rate_dev = std::max(worst_rate_dev, std::abs(n / 1000.0 - 0.5));

    int worst_hue = 0;
    for (int i = 0; i < 1000; ++i) {
        const Image in = random_image(4, 4);
        const double d = data.uniform(-360.0, 360.0);
        const Image back = color_transform(color_transform(in, ColorKind::hue, d), ColorKind::hue, 360.0 - d);
        const Image full = color_transform(in, ColorKind::hue, 360.0);
        for (std::size_t j = 0; j < in.data.size(); ++j) {
            worst_hue = std::max(worst_hue, std::abs(int(back.data[j]) - int(in.data[j])));
            worst_hue = std::max(worst_hue, std::abs(int(full.data[j]) - int(in.data[j])));
        }
    }

    const bool ok = identity && deterministic && in_range && worst_rate_dev <= 0.05 && worst_hue <= 2;
    return check(ok, fmt("p=0 identity %s, determinism %s, 10^4 fuzz in range %s, apply rates %d/%d/%d/%d per 1000, "
                         "hue round trip max diff %d",
                         identity ? "ok" : "broken", deterministic ? "ok" : "broken", in_range ? "ok" : "broken",
                         fired[0], fired[1], fired[2], fired[3], worst_hue));
}

Outcome overfit() {
    const PipelineConfig cfg = oracle::overfit_config();
    const Dataset data = oracle::synthetic_dataset(4, 64);
    Trainer t(cfg, data);
    const RunManifest m = t.run();
    double last10 = 0.0;
    for (std::size_t i = m.losses.size() - 10; i < m.losses.size(); ++i) last10 += m.losses[i].loss / 10.0;
    std::array<double, 3> windows{};
    for (std::size_t i = 0; i < 300; ++i) windows[i / 100] += m.losses[i].loss / 100.0;
    const bool decreasing = windows[1] < windows[0] && windows[2] < windows[1];
    const double live = t.evaluate(data, false).report.miou;
    const double ema = t.evaluate(data, true).report.miou;
    return check(live >= 0.95 && last10 < 0.05 && decreasing,
                 fmt("train mIoU %.4f (EMA %.4f), final loss %.4f (mean of last 10), 100-iteration window means "
                     "%.4f > %.4f > %.4f",
                     live, ema, last10, windows[0], windows[1], windows[2]));
}

Outcome determinism_and_resume() {
    const PipelineConfig cfg = oracle::tiny_config();
    auto state_equal = [](const Checkpoint& a, const Checkpoint& b) {
        return a.params == b.params && a.adam_m == b.adam_m && a.adam_v == b.adam_v && a.ema_shadow == b.ema_shadow &&
               a.optimizer_step == b.optimizer_step && a.iteration == b.iteration;
    };
    Trainer a(cfg, oracle::synthetic_dataset(4, 64));
    Trainer b(cfg, oracle::synthetic_dataset(4, 64));
    a.run();
    b.run();
    const bool repeat = state_equal(a.checkpoint(), b.checkpoint());

    const auto dir = std::filesystem::temp_directory_path() / "offroad_acceptance_resume";
    std::filesystem::remove_all(dir);
    Trainer first(cfg, oracle::synthetic_dataset(4, 64));
    first.run(cfg.schedule.total_iters / 2, dir);
    const Checkpoint mid = load_checkpoint(dir / "checkpoints" / Trainer::checkpoint_name(cfg.schedule.total_iters / 2));
    Trainer second(mid, oracle::synthetic_dataset(4, 64));
    second.run();
    const bool resumed = state_equal(second.checkpoint(), a.checkpoint());
    std::filesystem::remove_all(dir);
    return check(repeat && resumed, fmt("%lld iterations with augmentation: repeat run %s, resume from iteration %lld %s",
                                        static_cast<long long>(cfg.schedule.total_iters),
                                        repeat ? "bit-identical" : "differs",
                                        static_cast<long long>(cfg.schedule.total_iters / 2),
                                        resumed ? "bit-identical" : "differs"));
}

Outcome taxonomy_conservation() {
    const Mapping shipped = load_mapping(std::filesystem::path(OFFROAD_DATA_DIR) / "goose_mapping.csv");
    RngStream rng(31);
    std::vector<int> values;
    for (int v = 0; v < kNumRawClasses; ++v) values.push_back(v);
    values.push_back(kIgnoreId);
    int bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        Mapping m = shipped;
        if (trial % 2) {
            m = Mapping();
            for (int raw = 0; raw < kNumRawClasses; ++raw)
                if (rng.bernoulli(0.8)) m.assign(raw, static_cast<int>(rng.below(kNumClasses)));
        }
        const int h = 1 + static_cast<int>(rng.below(32)), w = 1 + static_cast<int>(rng.below(32));
        const LabelMap in = oracle::random_labels(h, w, values, rng);
        const LabelMap out = remap(in, m);
        const auto hin = oracle::histogram(in), hout = oracle::histogram(out);
        std::uint64_t total = 0;
        for (auto [v, n] : hout) total += n;
        const auto push = oracle::pushforward(hin, [&](int v) { return static_cast<int>(m(v)); });
        bad += !(total == in.pixels() && hout == push);
    }
    return check(bad == 0, fmt("1000 random maps (shipped and random tables), %d violations", bad));
}

Outcome goose_histogram() {
    const char* root = std::getenv("GOOSE_ROOT");
    if (!root || !*root) return {Outcome::skip, "set GOOSE_ROOT to a GOOSE train root (images/, labels/) to run"};
    const Mapping m = load_mapping(std::filesystem::path(OFFROAD_DATA_DIR) / "goose_mapping.csv");
    const auto refs = load_dataset({root});
    std::array<std::uint64_t, kNumClasses> counts{};
    std::uint64_t total = 0;
    for (const auto& r : refs) {
        const Histogram h = class_histogram(remap(io::read_labels(r.labels), m));
        for (int k = 0; k < kNumClasses; ++k) {
            counts[static_cast<std::size_t>(k)] += h[static_cast<std::size_t>(k)];
            total += h[static_cast<std::size_t>(k)];
        }
    }
    std::array<std::uint64_t, kNumClasses> sorted = counts;
    std::sort(sorted.rbegin(), sorted.rend());
    const double top3 = total ? 100.0 * static_cast<double>(sorted[0] + sorted[1] + sorted[2]) / static_cast<double>(total) : 0.0;
    return check(std::abs(top3 - 90.0) <= 3.0, fmt("%zu label maps, top-3 classes cover %.2f%% of labeled pixels", refs.size(), top3));
}

}  // namespace

int main() {
    run("table-arithmetic", 1, table_arithmetic);
    run("metric-oracle", 30, metric_oracle);
    run("ema-closed-form", 5, ema_closed_form);
    run("schedule", 1, schedule);
    run("gradient-check", 300, gradient_check);
    run("augmentation-suite", 120, augmentation_suite);
    run("overfit-sanity", 600, overfit);
    run("determinism-resume", 1200, determinism_and_resume);
    run("taxonomy-conservation", 30, taxonomy_conservation);
    run("goose-histogram (optional)", 3600, goose_histogram);
    std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
