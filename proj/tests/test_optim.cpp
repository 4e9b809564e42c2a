#include <gtest/gtest.h>

#include <cmath>

#include "offroad/optim.hpp"
#include "offroad/rng.hpp"

using namespace offroad;

namespace {

nn::Param<double> scalar(double v, double g) {
    nn::Param<double> p("p", {1});
    p.value[0] = v;
    p.grad[0] = g;
    return p;
}

}  // namespace

TEST(PolyLr, Endpoints) {
    const ScheduleConfig cfg;
    EXPECT_EQ(poly_lr(0, cfg), 6e-5);
    EXPECT_EQ(poly_lr(cfg.total_iters, cfg), 0.0);
    EXPECT_THROW(poly_lr(cfg.total_iters + 1, cfg), ConfigError);
    EXPECT_THROW(poly_lr(-1, cfg), ConfigError);
}

TEST(PolyLr, Midpoint) {
    const ScheduleConfig cfg;
    const double expected = 6e-5 * std::exp(0.9 * std::log(0.5));
    EXPECT_NEAR(poly_lr(48000, cfg), expected, 1e-18);
    EXPECT_NEAR(poly_lr(48000, cfg), 3.2153e-5, 5e-10);
}

TEST(PolyLr, MonotoneNonIncreasing) {
    const ScheduleConfig cfg;
    double prev = poly_lr(0, cfg);
    for (std::int64_t t = 1; t <= cfg.total_iters; t += 7) {
        const double lr = poly_lr(t, cfg);
        ASSERT_LE(lr, prev) << t;
        prev = lr;
    }
}

TEST(ScheduleConfig, Validation) {
    ScheduleConfig c;
    c.base_lr = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.power = -1;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(AdamW, ZeroGradientNoDecayIsFixedPoint) {
    auto p = scalar(0.7, 0.0);
    OptimizerState<double> st({0.9, 0.999, 1e-8, 0.0}, {&p});
    for (int i = 0; i < 5; ++i) adamw_step<double>({&p}, st, 0.1);
    EXPECT_EQ(p.value[0], 0.7);
    EXPECT_EQ(st.step, 5);
}

TEST(AdamW, FirstStepIsLrTimesSign) {
    auto p = scalar(1.0, 1.0);
    OptimizerState<double> st({0.9, 0.999, 1e-8, 0.0}, {&p});
    adamw_step<double>({&p}, st, 0.1);
    EXPECT_NEAR(p.value[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
    EXPECT_NEAR(st.m[0][0], 0.1, 1e-15);
    EXPECT_NEAR(st.v[0][0], 0.001, 1e-15);
}

TEST(AdamW, DecoupledDecayOnly) {
    auto p = scalar(2.0, 0.0);
    OptimizerState<double> st({0.9, 0.999, 1e-8, 0.01}, {&p});
    adamw_step<double>({&p}, st, 0.1);
    EXPECT_EQ(p.value[0], 2.0 - 0.1 * 0.01 * 2.0);
    EXPECT_NEAR(p.value[0], 2.0 * 0.999, 1e-15);
}

TEST(AdamW, ScaleEquivariantFirstStep) {
    for (double g : {1e-3, 1.0, 1e3}) {
        auto p = scalar(0.0, g);
        OptimizerState<double> st({0.9, 0.999, 1e-12, 0.0}, {&p});
        adamw_step<double>({&p}, st, 0.01);
        EXPECT_NEAR(std::abs(p.value[0]), 0.01, 0.01 * 0.01) << g;
        for (int i = 0; i < 10; ++i) adamw_step<double>({&p}, st, 0.01);
        EXPECT_NEAR(std::abs(p.value[0]), 0.11, 0.11 * 0.01) << g;
    }
}

TEST(AdamW, NonFiniteGradientRejectsStep) {
    auto a = scalar(1.0, 0.5);
    auto b = scalar(2.0, std::nan(""));
    OptimizerState<double> st({}, {&a, &b});
    EXPECT_THROW(adamw_step<double>({&a, &b}, st, 0.1), NumericError);
    EXPECT_EQ(a.value[0], 1.0);
    EXPECT_EQ(st.step, 0);
    EXPECT_EQ(st.m[0][0], 0.0);
    b.grad[0] = INFINITY;
    EXPECT_THROW(adamw_step<double>({&a, &b}, st, 0.1), NumericError);
}

TEST(AdamW, SecondMomentNonNegative) {
    nn::Param<double> p("p", {64});
    OptimizerState<double> st({}, {&p});
    RngStream rng(3);
    for (int i = 0; i < 50; ++i) {
        for (auto& g : p.grad) g = rng.normal() * 10;
        adamw_step<double>({&p}, st, 1e-3);
        for (double v : st.v[0]) ASSERT_GE(v, 0.0);
    }
    EXPECT_EQ(st.step, 50);
}

TEST(Ema, DirectFormula) {
    EmaState e(0.999);
    e.restore({{0.0}}, 0, true);
    e.update(std::vector<std::vector<double>>{{1.0}});
    EXPECT_NEAR(e.shadow()[0][0], 0.001, 1e-15);
    EXPECT_EQ(e.updates(), 1);
}

TEST(Ema, ConvergedIsFixedPoint) {
    EmaState e(0.999);
    e.restore({{0.25, -3.0}}, 0, true);
    for (int i = 0; i < 100; ++i) e.update(std::vector<std::vector<double>>{{0.25, -3.0}});
    EXPECT_EQ(e.shadow()[0][0], 0.25);
    EXPECT_EQ(e.shadow()[0][1], -3.0);
}

TEST(Ema, ClosedForm) {
    const double alpha = 0.999, a = 0.3, c = -1.7;
    EmaState e(alpha);
    e.restore({{a}}, 0, true);
    double worst = 0.0;
    for (int t = 1; t <= 10000; ++t) {
        e.update(std::vector<std::vector<double>>{{c}});
        const double at = std::pow(alpha, t);
        worst = std::max(worst, std::abs(e.shadow()[0][0] - (at * a + (1.0 - at) * c)));
    }
    EXPECT_LE(worst, 1e-12);
}

TEST(Ema, ContractionTowardLiveParameters) {
    RngStream rng(4);
    EmaState e(0.9);
    std::vector<std::vector<double>> shadow{std::vector<double>(16)};
    for (auto& v : shadow[0]) v = rng.normal();
    e.restore(shadow, 0, true);
    for (int step = 0; step < 20; ++step) {
        std::vector<std::vector<double>> live{std::vector<double>(16)};
        for (auto& v : live[0]) v = rng.normal();
        const auto before = e.shadow();
        e.update(live);
        for (std::size_t j = 0; j < 16; ++j)
            EXPECT_NEAR(std::abs(e.shadow()[0][j] - live[0][j]), 0.9 * std::abs(before[0][j] - live[0][j]), 1e-12);
    }
}

TEST(Ema, SnapshotAfterInitEqualsLive) {
    nn::Param<float> p("w", {3});
    p.value = {1.5f, -2.25f, 3.0f};
    EmaState e;
    e.init_from<float>({&p});
    EXPECT_EQ(e.snapshot<float>()[0], p.value);
    EXPECT_EQ(e.updates(), 0);
}

TEST(Ema, SnapshotIsIsolated) {
    nn::Param<double> p("w", {4});
    p.value = {1, 2, 3, 4};
    EmaState e(0.5);
    e.update<double>({&p});
    const auto snap = e.snapshot<double>();
    const auto updates = e.updates();
    p.value = {10, 20, 30, 40};
    e.update<double>({&p});
    EXPECT_EQ(snap[0], (std::vector<double>{1, 2, 3, 4}));
    EXPECT_EQ(p.value, (std::vector<double>{10, 20, 30, 40}));
    EXPECT_EQ(updates + 1, e.updates());
    const auto again = e.snapshot<double>();
    (void)again;
    EXPECT_EQ(e.updates(), updates + 1);
}

TEST(Ema, FirstUpdateInitializesFromParameters) {
    nn::Param<double> p("w", {2});
    p.value = {0.5, -0.5};
    EmaState e(0.999);
    EXPECT_THROW(e.snapshot<double>(), ConfigError);
    e.update<double>({&p});
    EXPECT_EQ(e.shadow()[0][0], 0.5);
    EXPECT_EQ(e.updates(), 1);
}

TEST(Ema, ShapeMismatchAndDecayRange) {
    nn::Param<double> p("w", {2}), q("w", {3});
    EmaState e;
    e.update<double>({&p});
    EXPECT_THROW(e.update<double>({&q}), ShapeError);
    EXPECT_THROW(EmaState(1.0), ConfigError);
    EXPECT_THROW(EmaState(0.0), ConfigError);
}
