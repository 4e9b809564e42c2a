#pragma once

// Finite-difference gradient check of mean cross-entropy(segment(x)) with
// respect to every parameter tensor of a small double-precision model.

#include <cmath>
#include <string>
#include <vector>

#include "offroad/model.hpp"
#include "oracles.hpp"

namespace oracle {

struct GroupError {
    std::string name;
    std::size_t size = 0;
    double analytic_norm = 0.0;
    double rel_error = 0.0;  // ||a - n|| / max(||a||, ||n||)
};

inline offroad::ModelConfig gradcheck_model_config() {
    offroad::ModelConfig cfg;
    cfg.backbone_channels = {4, 8, 8, 8};
    cfg.backbone_depths = {1, 1, 1, 1};
    cfg.decoder_channels = 8;
    cfg.psp_bin_sizes = {1};
    cfg.norm_groups = 2;
    return cfg;
}

/// Per-parameter-tensor relative error on a 32x32 batch of two inputs.
inline std::vector<GroupError> gradient_check(std::uint64_t seed = 1, double h = 1e-5) {
    using namespace offroad;
    SegmentationModel<double> model(gradcheck_model_config());
    model.init(seed);

    RngStream rng(seed + 100);
    nn::Tensor<double> x(2, 3, 32, 32);
    for (auto& v : x.data) v = rng.normal();
    std::vector<LabelMap> labels;
    for (int i = 0; i < 2; ++i) labels.push_back(random_labels(32, 32, {0, 1, 2, 3, 4, 5, 6, 7, 8, 255}, rng));
    std::vector<const LabelMap*> lp{&labels[0], &labels[1]};

    auto loss = [&] { return cross_entropy_loss(model.forward(x), lp).mean; };

    model.zero_grad();
    const nn::Tensor<double> logits = model.forward(x);
    const LossStats s = cross_entropy_loss(logits, lp);
    model.backward(cross_entropy_backward(logits, lp, 1.0 / static_cast<double>(s.count)));

    std::vector<GroupError> out;
    for (nn::Param<double>* p : model.parameters()) {
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double numeric = central_difference(loss, p->value[i], h);
            const double analytic = p->grad[i];
            diff2 += (analytic - numeric) * (analytic - numeric);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
        }
        const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
        out.push_back({p->name, p->size(), std::sqrt(a2), std::sqrt(diff2) / denom});
    }
    return out;
}

}  // namespace oracle
