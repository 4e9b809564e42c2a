#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "offroad/error.hpp"
#include "offroad/io.hpp"
#include "offroad/raster.hpp"
#include "offroad/taxonomy.hpp"

namespace offroad {

/// One image/label pair on disk.
struct SampleRef {
    std::string stem;
    std::filesystem::path image;
    std::filesystem::path labels;

    friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

namespace detail {
inline bool has_ext(const std::filesystem::path& p, std::initializer_list<const char*> exts) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (const char* x : exts)
        if (e == x) return true;
    return false;
}
}  // namespace detail

/// Index `<root>/images/*.{png,jpg,jpeg}` against `<root>/labels/*.png` by
/// file stem. Samples are sorted by stem within a root; roots are concatenated
/// in the given order.
inline std::vector<SampleRef> load_dataset(const std::vector<std::filesystem::path>& roots) {
    std::vector<SampleRef> out;
    for (const auto& root : roots) {
        const auto img_dir = root / "images";
        const auto lab_dir = root / "labels";
        if (!std::filesystem::is_directory(img_dir)) throw DataError("missing directory " + img_dir.string());
        if (!std::filesystem::is_directory(lab_dir)) throw DataError("missing directory " + lab_dir.string());
        std::map<std::string, std::filesystem::path> images, labels;
        for (const auto& e : std::filesystem::directory_iterator(img_dir)) {
            if (!e.is_regular_file() || !detail::has_ext(e.path(), {".png", ".jpg", ".jpeg"})) continue;
            if (!images.emplace(e.path().stem().string(), e.path()).second)
                throw DataError("duplicate image stem '" + e.path().stem().string() + "' in " + img_dir.string());
        }
        for (const auto& e : std::filesystem::directory_iterator(lab_dir)) {
            if (!e.is_regular_file() || !detail::has_ext(e.path(), {".png"})) continue;
            labels.emplace(e.path().stem().string(), e.path());
        }
        for (const auto& [stem, path] : images) {
            auto it = labels.find(stem);
            if (it == labels.end())
                throw DataError("image '" + stem + "' in " + root.string() + " has no matching label map");
            out.push_back({stem, path, it->second});
        }
        for (const auto& [stem, path] : labels)
            if (!images.count(stem))
                throw DataError("label map '" + stem + "' in " + root.string() + " has no matching image");
    }
    return out;
}

/// Random-access sample source used by training and evaluation.
struct Dataset {
    std::vector<std::string> names;
    std::function<std::pair<Image, LabelMap>(std::size_t)> load;

    std::size_t size() const { return names.size(); }
};

/// Samples read from disk on access, labels remapped to challenge ids.
inline Dataset disk_dataset(std::vector<SampleRef> refs, const Mapping& mapping) {
    auto shared = std::make_shared<const std::vector<SampleRef>>(std::move(refs));
    Dataset d;
    for (const auto& r : *shared) d.names.push_back(r.stem);
    d.load = [shared, mapping](std::size_t i) {
        const SampleRef& r = shared->at(i);
        Image img = io::read_image(r.image);
        LabelMap lab = remap(io::read_labels(r.labels), mapping);
        if (!lab.same_shape(img.height, img.width))
            throw DataError("image and label map for '" + r.stem + "' differ in size");
        return std::pair<Image, LabelMap>(std::move(img), std::move(lab));
    };
    return d;
}

/// Samples held in memory.
inline Dataset memory_dataset(std::vector<std::pair<Image, LabelMap>> samples) {
    auto shared = std::make_shared<const std::vector<std::pair<Image, LabelMap>>>(std::move(samples));
    Dataset d;
    for (std::size_t i = 0; i < shared->size(); ++i) d.names.push_back("sample" + std::to_string(i));
    d.load = [shared](std::size_t i) { return shared->at(i); };
    return d;
}

/// Mapping named in the config, or the identity when none is set.
inline Mapping mapping_for(const std::string& path) {
    return path.empty() ? Mapping::identity() : load_mapping(path);
}

}  // namespace offroad
