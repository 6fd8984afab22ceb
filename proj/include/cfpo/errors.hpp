// Copyright (c) 2026, cfpo developers
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cfpo {

// Bad input or configuration. Maps to exit code 1 / CFPO_ERR_VALIDATION.
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Numerical failure during training (non-finite gradients, etc.).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace cfpo
