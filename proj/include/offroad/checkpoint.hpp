#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "offroad/config.hpp"
#include "offroad/error.hpp"
#include "offroad/nn/tensor.hpp"
#include "offroad/optim.hpp"

// Checkpoint container, little-endian throughout:
//
//   char[8]  magic "OFFRDCKP"
//   u32      format version (1)
//   u64      config length L, then L bytes of canonical config JSON
//   i64      iteration (completed optimizer steps)
//   u32      parameter count P
//   P times: u32 name length, name bytes, u32 rank, rank x i32 dims,
//            f32 x numel values
//   i64      optimizer step count
//   P times: f32 x numel first moment, f32 x numel second moment
//   u8       EMA initialized flag
//   f64      EMA decay
//   i64      EMA update count
//   P times (when initialized): f64 x numel shadow values

namespace offroad {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'O', 'F', 'F', 'R', 'D', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
    PipelineConfig config;
    std::int64_t iteration = 0;
    std::vector<NamedTensor> params;
    std::int64_t optimizer_step = 0;
    std::vector<std::vector<float>> adam_m, adam_v;
    bool ema_initialized = false;
    double ema_decay = 0.999;
    std::int64_t ema_updates = 0;
    std::vector<std::vector<double>> ema_shadow;
};

namespace detail {

class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}
    template <class V>
    void pod(const V& v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    template <class V>
    void array(const std::vector<V>& v) {
        out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(V)));
    }
    void bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

private:
    std::ostream& out_;
};

class Reader {
public:
    Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}
    template <class V>
    V pod() {
        V v{};
        read(reinterpret_cast<char*>(&v), sizeof v);
        return v;
    }
    template <class V>
    std::vector<V> array(std::size_t n) {
        std::vector<V> v(n);
        read(reinterpret_cast<char*>(v.data()), n * sizeof(V));
        return v;
    }
    std::string bytes(std::size_t n) {
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }

private:
    void read(char* dst, std::size_t n) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw DataError(source_ + ": truncated checkpoint");
    }
    std::istream& in_;
    std::string source_;
};

inline std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
    detail::Writer w(out);
    out.write(kCheckpointMagic, 8);
    w.pod(kCheckpointVersion);
    const std::string cfg = to_json(ck.config).dump();
    w.pod(static_cast<std::uint64_t>(cfg.size()));
    w.bytes(cfg);
    w.pod(ck.iteration);
    w.pod(static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& p : ck.params) {
        if (p.values.size() != detail::numel(p.shape)) throw ShapeError("checkpoint tensor " + p.name + " size mismatch");
        w.pod(static_cast<std::uint32_t>(p.name.size()));
        w.bytes(p.name);
        w.pod(static_cast<std::uint32_t>(p.shape.size()));
        for (int d : p.shape) w.pod(static_cast<std::int32_t>(d));
        w.array(p.values);
    }
    w.pod(ck.optimizer_step);
    if (ck.adam_m.size() != ck.params.size() || ck.adam_v.size() != ck.params.size())
        throw ShapeError("optimizer state does not match checkpoint parameters");
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
        if (ck.adam_m[i].size() != ck.params[i].values.size() || ck.adam_v[i].size() != ck.params[i].values.size())
            throw ShapeError("optimizer moment size mismatch for " + ck.params[i].name);
        w.array(ck.adam_m[i]);
        w.array(ck.adam_v[i]);
    }
    w.pod(static_cast<std::uint8_t>(ck.ema_initialized));
    w.pod(ck.ema_decay);
    w.pod(ck.ema_updates);
    if (ck.ema_initialized) {
        if (ck.ema_shadow.size() != ck.params.size()) throw ShapeError("EMA state does not match checkpoint parameters");
        for (std::size_t i = 0; i < ck.params.size(); ++i) {
            if (ck.ema_shadow[i].size() != ck.params[i].values.size())
                throw ShapeError("EMA shadow size mismatch for " + ck.params[i].name);
            w.array(ck.ema_shadow[i]);
        }
    }
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& source = "<checkpoint>") {
    detail::Reader r(in, source);
    if (r.bytes(8) != std::string(kCheckpointMagic, 8)) throw DataError(source + ": not a checkpoint file");
    const auto version = r.pod<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw DataError(source + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    const auto cfg_len = r.pod<std::uint64_t>();
    if (cfg_len > (1u << 24)) throw DataError(source + ": implausible config length");
    try {
        ck.config = from_json(nlohmann::json::parse(r.bytes(cfg_len)));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(source + ": corrupt config echo: " + e.what());
    }
    ck.iteration = r.pod<std::int64_t>();
    const auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.bytes(r.pod<std::uint32_t>());
        const auto rank = r.pod<std::uint32_t>();
        if (rank > 8) throw DataError(source + ": implausible tensor rank for " + t.name);
        for (std::uint32_t d = 0; d < rank; ++d) t.shape.push_back(r.pod<std::int32_t>());
        t.values = r.array<float>(detail::numel(t.shape));
        ck.params.push_back(std::move(t));
    }
    ck.optimizer_step = r.pod<std::int64_t>();
    for (const auto& p : ck.params) {
        ck.adam_m.push_back(r.array<float>(p.values.size()));
        ck.adam_v.push_back(r.array<float>(p.values.size()));
    }
    ck.ema_initialized = r.pod<std::uint8_t>() != 0;
    ck.ema_decay = r.pod<double>();
    ck.ema_updates = r.pod<std::int64_t>();
    if (ck.ema_initialized)
        for (const auto& p : ck.params) ck.ema_shadow.push_back(r.array<double>(p.values.size()));
    return ck;
}

/// Write via a temporary file and rename, so a failed write never leaves a
/// truncated checkpoint under the final name.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
        write_checkpoint(out, ck);
        out.flush();
        if (!out) throw DataError("failed writing checkpoint " + tmp.string() + " (disk full?)");
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    return read_checkpoint(in, path.string());
}

/// Parameter values as named tensors, in registration order.
inline std::vector<NamedTensor> export_params(const std::vector<nn::Param<float>*>& params) {
    std::vector<NamedTensor> out;
    for (const auto* p : params) out.push_back({p->name, p->shape, p->value});
    return out;
}

/// Load named tensors into live parameters; names, order and shapes must match.
inline void import_params(const std::vector<nn::Param<float>*>& params, const std::vector<NamedTensor>& saved) {
    if (params.size() != saved.size())
        throw ConfigError("checkpoint has " + std::to_string(saved.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->name != saved[i].name || params[i]->shape != saved[i].shape)
            throw ConfigError("checkpoint tensor " + saved[i].name + " does not match model parameter " + params[i]->name);
        params[i]->value = saved[i].values;
    }
}

}  // namespace offroad
