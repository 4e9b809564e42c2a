// Command-line front end: train, eval, predict, preview, synth.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "offroad/augmentation.hpp"
#include "offroad/checkpoint.hpp"
#include "offroad/config.hpp"
#include "offroad/dataset.hpp"
#include "offroad/evaluation.hpp"
#include "offroad/io.hpp"
#include "offroad/synthetic.hpp"
#include "offroad/train.hpp"

namespace fs = std::filesystem;
using namespace offroad;

namespace {

std::vector<fs::path> as_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

std::optional<Dataset> dataset_from_roots(const std::vector<std::string>& roots, const Mapping& mapping) {
    if (roots.empty()) return std::nullopt;
    return disk_dataset(load_dataset(as_paths(roots)), mapping);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& resume) {
    std::optional<Checkpoint> ck;
    PipelineConfig cfg;
    if (!resume.empty()) {
        ck = load_checkpoint(resume);
        cfg = ck->config;
        if (!overrides.empty() || !config_path.empty())
            std::fprintf(stderr, "note: resuming uses the checkpoint's config; --config and overrides are ignored\n");
    } else {
        cfg = config_path.empty() ? parse_config_text("", overrides) : parse_config(config_path, overrides);
    }
    const Mapping mapping = mapping_for(cfg.data.mapping);
    auto train = dataset_from_roots(cfg.data.train_roots, mapping);
    if (!train) throw ConfigError("data.train_roots is empty");
    auto val = dataset_from_roots(cfg.data.val_roots, mapping);

    std::unique_ptr<Trainer> trainer = ck ? std::make_unique<Trainer>(*ck, std::move(*train), std::move(val))
                                          : std::make_unique<Trainer>(cfg, std::move(*train), std::move(val));
    std::printf("config %s: %zu parameters, effective batch %d, iterations %lld -> %lld\n", config_id(cfg).c_str(),
                trainer->model().parameter_count(), cfg.effective_batch(),
                static_cast<long long>(trainer->iteration()), static_cast<long long>(cfg.schedule.total_iters));
    const fs::path out_dir = cfg.train.output_dir;
    RunManifest m = trainer->run(std::nullopt, out_dir);
    for (std::size_t i = 0; i < m.losses.size(); i += std::max<std::size_t>(1, m.losses.size() / 20))
        std::printf("iter %6lld  loss %.5f  lr %.3e\n", static_cast<long long>(m.losses[i].iteration), m.losses[i].loss,
                    m.losses[i].lr);
    for (const auto& v : m.validations)
        std::printf("validation @%lld (%s): mIoU %.2f\n", static_cast<long long>(v.iteration), v.used_ema ? "ema" : "live",
                    v.miou * 100.0);
    std::printf("manifest: %s\n", (out_dir / "manifest.json").string().c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& split, bool use_ema, const std::string& output,
             bool write_masks) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const auto& cfg = ck.config;
    std::vector<std::string> roots;
    if (split == "train")
        roots = cfg.data.train_roots;
    else if (split == "val")
        roots = cfg.data.val_roots;
    else
        throw ConfigError("unknown split '" + split + "' (expected train or val)");
    auto data = dataset_from_roots(roots, mapping_for(cfg.data.mapping));
    if (!data) throw ConfigError("no roots configured for split " + split);

    Model model = model_from_checkpoint(ck, use_ema);
    const fs::path out_dir = output.empty() ? fs::path(cfg.train.output_dir) / ("eval_" + split) : fs::path(output);
    std::vector<EvalSample> samples;
    for (std::size_t i = 0; i < data->size(); ++i) samples.push_back({data->names[i], [&, i] { return data->load(i); }});
    std::size_t idx = 0;
    EvalResult r = evaluate_dataset(
        [&](const Image& img) {
            LabelMap pred = predict_labels(model, img, cfg.augment.geometric.image_pad_value);
            if (write_masks || cfg.eval.write_masks) {
                const std::string& name = data->names[std::min(idx, data->size() - 1)];
                io::write_png(out_dir / "masks" / (name + ".png"), pred);
                io::write_png(out_dir / "color" / (name + ".png"), io::colorize(pred, cfg.eval.palette));
            }
            ++idx;
            return pred;
        },
        samples);
    r.report.model_id = std::string(use_ema ? "ema" : "live") + "@" + std::to_string(ck.iteration);
    r.report.config_id = config_id(cfg);
    for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    write_text(out_dir / "report.json", render_report(r.report, ReportFormat::json));
    write_text(out_dir / "report.md", render_report(r.report, ReportFormat::markdown));
    std::printf("%s", render_report(r.report, ReportFormat::markdown).c_str());
    return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& input, const std::string& output, bool use_ema) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    Model model = model_from_checkpoint(ck, use_ema);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(input))
        if (e.is_regular_file() && detail::has_ext(e.path(), {".png", ".jpg", ".jpeg"})) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no images found in " + input);
    for (const auto& f : files) {
        const LabelMap pred = predict_labels(model, io::read_image(f), ck.config.augment.geometric.image_pad_value);
        const std::string stem = f.stem().string();
        io::write_png(fs::path(output) / "masks" / (stem + ".png"), pred);
        io::write_png(fs::path(output) / "color" / (stem + ".png"), io::colorize(pred, ck.config.eval.palette));
    }
    std::printf("wrote %zu masks to %s\n", files.size(), output.c_str());
    return 0;
}

int cmd_preview(const std::string& image, const std::string& output, const std::string& config_path,
                const std::vector<std::string>& overrides) {
    const PipelineConfig cfg = config_path.empty() ? parse_config_text("", overrides) : parse_config(config_path, overrides);
    io::write_png(output, preview_grid(io::read_image(image), cfg.augment.photometric));
    std::printf("wrote %s\n", output.c_str());
    return 0;
}

int cmd_synth(const std::string& output, int count, int size, std::uint64_t seed) {
    for (int i = 0; i < count; ++i) {
        auto [img, lab] = synthetic_scene(size, size, seed, static_cast<std::uint64_t>(i));
        char stem[32];
        std::snprintf(stem, sizeof stem, "scene_%04d", i);
        io::write_png(fs::path(output) / "images" / (std::string(stem) + ".png"), img);
        io::write_png(fs::path(output) / "labels" / (std::string(stem) + ".png"), lab);
    }
    std::printf("wrote %d synthetic samples to %s\n", count, output.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Off-road semantic segmentation: training, evaluation and prediction"};
    app.require_subcommand(1);

    std::string config_path, resume;
    std::vector<std::string> overrides;
    auto* train = app.add_subcommand("train", "Train a model");
    train->add_option("--config", config_path, "YAML config file");
    train->add_option("--resume", resume, "Continue from a checkpoint");
    train->add_option("overrides", overrides, "Dotted key=value overrides");

    std::string checkpoint, split = "val", output;
    bool use_ema = false, write_masks = false;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--split", split, "train or val")->required();
    eval->add_flag("--use-ema", use_ema, "Evaluate the EMA weights");
    eval->add_option("--output", output, "Report directory (default: <output_dir>/eval_<split>)");
    eval->add_flag("--write-masks", write_masks, "Also write predicted and colorized masks");

    std::string input;
    auto* pred = app.add_subcommand("predict", "Write masks for a directory of images");
    pred->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    pred->add_option("--input", input, "Directory of images")->required();
    pred->add_option("--output", output, "Output directory")->required();
    pred->add_flag("--use-ema", use_ema, "Use the EMA weights");

    std::string image;
    auto* preview = app.add_subcommand("preview", "Render the photometric distortion preview grid");
    preview->add_option("--image", image, "Input image")->required();
    preview->add_option("--output", output, "Output PNG")->required();
    preview->add_option("--config", config_path, "YAML config file (photometric ranges)");
    preview->add_option("overrides", overrides, "Dotted key=value overrides");

    int count = 8, size = 64;
    std::uint64_t seed = 0;
    auto* synth = app.add_subcommand("synth", "Write a synthetic toy dataset");
    synth->add_option("--output", output, "Dataset root")->required();
    synth->add_option("--count", count, "Number of samples")->check(CLI::PositiveNumber);
    synth->add_option("--size", size, "Image side length")->check(CLI::PositiveNumber);
    synth->add_option("--seed", seed, "Seed");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*train) return cmd_train(config_path, overrides, resume);
        if (*eval) return cmd_eval(checkpoint, split, use_ema, output, write_masks);
        if (*pred) return cmd_predict(checkpoint, input, output, use_ema);
        if (*preview) return cmd_preview(image, output, config_path, overrides);
        if (*synth) return cmd_synth(output, count, size, seed);
    } catch (const offroad::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
