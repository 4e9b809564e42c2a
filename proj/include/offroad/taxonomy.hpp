#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "offroad/error.hpp"
#include "offroad/raster.hpp"

namespace offroad {

inline constexpr int kNumClasses = 9;
inline constexpr int kNumRawClasses = 64;

/// The nine challenge categories, in report column order.
struct Taxonomy {
    static constexpr std::array<std::string_view, kNumClasses> classes = {
        "Other",        "Artificial Structure", "Artificial Ground",
        "Natural Ground", "Obstacle",           "Vehicle",
        "Vegetation",   "Human",                "Sky"};
    static constexpr std::uint8_t ignore_id = kIgnoreId;

    static constexpr std::string_view name(int id) {
        return id >= 0 && id < kNumClasses ? classes[static_cast<std::size_t>(id)] : "ignore";
    }
};

static_assert(Taxonomy::ignore_id >= kNumClasses);

/// Total function from raw dataset ids {0..63} to challenge ids {0..8} or ignore.
class Mapping {
public:
    /// Every raw id maps to ignore until assigned.
    Mapping() { table_.fill(kIgnoreId); }

    /// Explicit entries; absent raw ids fall back to ignore.
    static Mapping from_entries(const std::map<int, int>& entries) {
        Mapping m;
        for (auto [raw, target] : entries) m.assign(raw, target);
        return m;
    }

    /// Identity on challenge ids; used when label rasters are already remapped.
    static Mapping identity() {
        Mapping m;
        for (int k = 0; k < kNumClasses; ++k) m.assign(k, k);
        return m;
    }

    void assign(int raw, int target) {
        if (raw < 0 || raw >= kNumRawClasses)
            throw DataError("raw id " + std::to_string(raw) + " outside [0, 63]");
        if (!(target >= 0 && target < kNumClasses) && target != kIgnoreId)
            throw DataError("target id " + std::to_string(target) + " outside {0..8, 255}");
        table_[static_cast<std::size_t>(raw)] = static_cast<std::uint8_t>(target);
        explicit_[static_cast<std::size_t>(raw)] = true;
    }

    std::uint8_t operator()(int raw) const {
        if (raw == kIgnoreId) return kIgnoreId;
        if (raw < 0 || raw >= kNumRawClasses)
            throw DataError("invalid raw label id " + std::to_string(raw));
        return table_[static_cast<std::size_t>(raw)];
    }

    /// True when the raw id came from the table rather than the ignore fallback.
    bool has_entry(int raw) const {
        return raw >= 0 && raw < kNumRawClasses && explicit_[static_cast<std::size_t>(raw)];
    }

    int entry_count() const {
        int n = 0;
        for (bool b : explicit_) n += b;
        return n;
    }

private:
    std::array<std::uint8_t, kNumRawClasses> table_{};
    std::array<bool, kNumRawClasses> explicit_{};
};

namespace detail {

inline int parse_id(std::string_view field, const std::string& where) {
    auto b = field.find_first_not_of(" \t\r");
    auto e = field.find_last_not_of(" \t\r");
    if (b == std::string_view::npos) throw DataError(where + ": empty field");
    field = field.substr(b, e - b + 1);
    int value = 0;
    for (char c : field) {
        if (c < '0' || c > '9') throw DataError(where + ": not an integer: '" + std::string(field) + "'");
        value = value * 10 + (c - '0');
        if (value > 100000) throw DataError(where + ": integer out of range");
    }
    return value;
}

}  // namespace detail

/// Parse a `raw_id,target_id` table. Lines starting with '#' and blank lines
/// are skipped; the first remaining line must be the header.
inline Mapping parse_mapping(std::istream& in, const std::string& source = "<mapping>") {
    Mapping m;
    std::string line;
    int lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const std::string where = source + ":" + std::to_string(lineno);
        if (!header_seen) {
            if (line != "raw_id,target_id")
                throw DataError(where + ": expected header 'raw_id,target_id'");
            header_seen = true;
            continue;
        }
        auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
            throw DataError(where + ": expected exactly two comma-separated columns");
        int raw = detail::parse_id(std::string_view(line).substr(0, comma), where);
        int target = detail::parse_id(std::string_view(line).substr(comma + 1), where);
        if (m.has_entry(raw)) throw DataError(where + ": duplicate raw id " + std::to_string(raw));
        try {
            m.assign(raw, target);
        } catch (const DataError& e) {
            throw DataError(where + ": " + e.what());
        }
    }
    if (!header_seen) throw DataError(source + ": missing header 'raw_id,target_id'");
    return m;
}

inline Mapping load_mapping(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open mapping file " + path.string());
    return parse_mapping(in, path.string());
}

/// Elementwise lookup of raw ids through `mapping`.
inline LabelMap remap(const LabelMap& labels, const Mapping& mapping) {
    LabelMap out(labels.height, labels.width);
    std::array<std::uint8_t, 256> lut{};
    std::array<bool, 256> valid{};
    for (int v = 0; v < 256; ++v) {
        if (v < kNumRawClasses || v == kIgnoreId) {
            lut[static_cast<std::size_t>(v)] = mapping(v);
            valid[static_cast<std::size_t>(v)] = true;
        }
    }
    for (std::size_t i = 0; i < labels.data.size(); ++i) {
        const std::uint8_t v = labels.data[i];
        if (!valid[v]) throw DataError("invalid raw label id " + std::to_string(v));
        out.data[i] = lut[v];
    }
    return out;
}

/// Pixel count per label value; index 255 holds the ignore count.
using Histogram = std::array<std::uint64_t, 256>;

inline Histogram class_histogram(const LabelMap& labels) {
    Histogram h{};
    for (std::uint8_t v : labels.data) ++h[v];
    return h;
}

}  // namespace offroad
