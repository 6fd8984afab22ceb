// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0

#include "cfpo/optimizer.hpp"

#include <cmath>
#include <string>

#include "cfpo/errors.hpp"

namespace cfpo {

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("optim.lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ValidationError("optim.beta1/beta2 must be in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw ValidationError("optim.eps must be > 0");
}

double gradient_norm(std::span<const double> grad) {
    double sq = 0.0;
    for (double g : grad) sq += g * g;
    return std::sqrt(sq);
}

double apply_update(PolicyParams& params, std::span<const double> grad, OptimizerState& state,
                    const OptimizerConfig& cfg) {
    if (grad.size() != params.theta.size()) throw ValidationError("gradient size does not match parameters");
    const double norm = gradient_norm(grad);
    if (!std::isfinite(norm)) {
        throw NumericError("non-finite gradient norm at parameter version " + std::to_string(params.version));
    }
    if (cfg.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < grad.size(); ++i) params.theta[i] -= cfg.learning_rate * grad[i];
    } else {
        if (state.m.size() != grad.size()) {
            state.m.assign(grad.size(), 0.0);
            state.v.assign(grad.size(), 0.0);
            state.step = 0;
        }
        ++state.step;
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
        for (std::size_t i = 0; i < grad.size(); ++i) {
            state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
            state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            const double mhat = state.m[i] / c1;
            const double vhat = state.v[i] / c2;
            params.theta[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
    ++params.version;
    return norm;
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
    if (name == "adam") return OptimizerKind::Adam;
    if (name == "sgd") return OptimizerKind::Sgd;
    throw ValidationError("unknown optim.kind \"" + std::string(name) + "\"");
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

} // namespace cfpo
