#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "offroad/error.hpp"
#include "offroad/nn/tensor.hpp"

namespace offroad {

struct ScheduleConfig {
    double base_lr = 6e-5;
    std::int64_t total_iters = 96000;
    double power = 0.9;

    void validate() const {
        if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("schedule.base_lr must be > 0");
        if (total_iters < 0) throw ConfigError("schedule.total_iters must be >= 0");
        if (!(power > 0.0) || !std::isfinite(power)) throw ConfigError("schedule.power must be > 0");
    }

    friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

/// base_lr * (1 - t / T)^power for 0 <= t <= T.
inline double poly_lr(std::int64_t t, const ScheduleConfig& cfg) {
    if (t < 0 || t > cfg.total_iters)
        throw ConfigError("iteration " + std::to_string(t) + " outside [0, " + std::to_string(cfg.total_iters) + "]");
    if (cfg.total_iters == 0) return cfg.base_lr;
    if (t == cfg.total_iters) return 0.0;
    const double frac = 1.0 - static_cast<double>(t) / static_cast<double>(cfg.total_iters);
    return cfg.base_lr * std::pow(frac, cfg.power);
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    void validate() const {
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optim.beta1 must lie in [0, 1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optim.beta2 must lie in [0, 1)");
        if (!(eps > 0.0)) throw ConfigError("optim.eps must be > 0");
        if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be >= 0");
    }

    friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

/// AdamW moments for a list of parameters, kept in the parameters' precision.
template <class T>
struct OptimizerState {
    AdamWConfig cfg;
    std::int64_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    OptimizerState() = default;
    OptimizerState(const AdamWConfig& c, const std::vector<nn::Param<T>*>& params) : cfg(c) {
        cfg.validate();
        for (const auto* p : params) {
            m.emplace_back(p->size(), T(0));
            v.emplace_back(p->size(), T(0));
        }
    }
};

/// One decoupled-weight-decay Adam step using each parameter's `grad`.
///
/// All gradients are checked before anything is modified; a non-finite value
/// rejects the whole step and leaves parameters and state untouched.
template <class T>
void adamw_step(const std::vector<nn::Param<T>*>& params, OptimizerState<T>& state, double lr) {
    if (params.size() != state.m.size()) throw ShapeError("optimizer state does not match parameter list");
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = *params[i];
        if (p.size() != state.m[i].size()) throw ShapeError("optimizer state shape mismatch for " + p.name);
        for (std::size_t j = 0; j < p.size(); ++j)
            if (!std::isfinite(static_cast<double>(p.grad[j])))
                throw NumericError("non-finite gradient in " + p.name + " at element " + std::to_string(j) +
                                   " (value " + std::to_string(static_cast<double>(p.grad[j])) + "); step rejected");
    }
    const auto& c = state.cfg;
    const std::int64_t t = ++state.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double g = p.grad[j];
            const double mj = c.beta1 * m[j] + (1.0 - c.beta1) * g;
            const double vj = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            const double theta = p.value[j];
            p.value[j] = static_cast<T>(theta - lr * mhat / (std::sqrt(vhat) + c.eps) - lr * c.weight_decay * theta);
        }
    }
}

/// Exponential moving average of parameters, held in double precision.
class EmaState {
public:
    explicit EmaState(double decay = 0.999) : decay_(decay) {
        if (!(decay > 0.0 && decay < 1.0)) throw ConfigError("ema.decay must lie in (0, 1)");
    }

    double decay() const { return decay_; }
    std::int64_t updates() const { return updates_; }
    bool initialized() const { return initialized_; }
    const std::vector<std::vector<double>>& shadow() const { return shadow_; }

    /// Start tracking from the current parameter values.
    template <class T>
    void init_from(const std::vector<nn::Param<T>*>& params) {
        shadow_.clear();
        for (const auto* p : params) shadow_.emplace_back(p->value.begin(), p->value.end());
        initialized_ = true;
        updates_ = 0;
    }

    /// shadow <- decay * shadow + (1 - decay) * params. The first call on an
    /// uninitialized state copies the parameters and then applies the update.
    template <class T>
    void update(const std::vector<nn::Param<T>*>& params) {
        if (!initialized_) init_from(params);
        check_shapes(params);
        const double a = decay_, b = 1.0 - decay_;
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& s = shadow_[i];
            const auto& v = params[i]->value;
            for (std::size_t j = 0; j < s.size(); ++j) s[j] = a * s[j] + b * static_cast<double>(v[j]);
        }
        ++updates_;
    }

    /// Plain-vector overload for callers that track raw arrays.
    void update(const std::vector<std::vector<double>>& values) {
        if (!initialized_) {
            shadow_ = values;
            initialized_ = true;
        }
        if (values.size() != shadow_.size()) throw ShapeError("EMA shape mismatch");
        const double a = decay_, b = 1.0 - decay_;
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (values[i].size() != shadow_[i].size()) throw ShapeError("EMA shape mismatch");
            for (std::size_t j = 0; j < values[i].size(); ++j) shadow_[i][j] = a * shadow_[i][j] + b * values[i][j];
        }
        ++updates_;
    }

    /// Independent copy of the averaged parameters, converted to T.
    template <class T>
    std::vector<std::vector<T>> snapshot() const {
        if (!initialized_) throw ConfigError("EMA snapshot requested before initialization");
        std::vector<std::vector<T>> out;
        out.reserve(shadow_.size());
        for (const auto& s : shadow_) {
            std::vector<T> v(s.size());
            for (std::size_t j = 0; j < s.size(); ++j) v[j] = static_cast<T>(s[j]);
            out.push_back(std::move(v));
        }
        return out;
    }

    /// Restore from serialized state.
    void restore(std::vector<std::vector<double>> shadow, std::int64_t updates, bool initialized) {
        shadow_ = std::move(shadow);
        updates_ = updates;
        initialized_ = initialized;
    }

private:
    template <class T>
    void check_shapes(const std::vector<nn::Param<T>*>& params) const {
        if (params.size() != shadow_.size()) throw ShapeError("EMA tracks a different parameter list");
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params[i]->size() != shadow_[i].size())
                throw ShapeError("EMA shape mismatch for " + params[i]->name);
    }

    double decay_;
    std::int64_t updates_ = 0;
    bool initialized_ = false;
    std::vector<std::vector<double>> shadow_;
};

/// Copy a snapshot (EMA or saved) into live parameters.
template <class T>
void load_values(const std::vector<nn::Param<T>*>& params, const std::vector<std::vector<T>>& values) {
    if (params.size() != values.size()) throw ShapeError("parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->size() != values[i].size()) throw ShapeError("parameter shape mismatch for " + params[i]->name);
        params[i]->value = values[i];
    }
}

template <class T>
std::vector<std::vector<T>> copy_values(const std::vector<nn::Param<T>*>& params) {
    std::vector<std::vector<T>> out;
    out.reserve(params.size());
    for (const auto* p : params) out.push_back(p->value);
    return out;
}

}  // namespace offroad
