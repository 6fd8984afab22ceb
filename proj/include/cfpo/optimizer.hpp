// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "cfpo/policy.hpp"

namespace cfpo {

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;
};

/// sqrt(sum g^2), accumulated in index order.
double gradient_norm(std::span<const double> grad);

/// One descent step on `grad` (gradient of a loss to minimize). Throws
/// NumericError if the gradient norm is not finite; params.version is
/// incremented on success. Returns the gradient norm.
double apply_update(PolicyParams& params, std::span<const double> grad, OptimizerState& state,
                    const OptimizerConfig& cfg);

OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view to_string(OptimizerKind k);

} // namespace cfpo
