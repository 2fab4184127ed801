#pragma once

#include <span>

#include "augcl/parameter.hpp"

namespace augcl {

struct AdamOptions {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update on every parameter, then zeroes the grads:
///
///   m <- b1 m + (1 - b1) g        v <- b2 v + (1 - b2) g^2
///   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
///
/// Throws ContractError (before touching anything) if a parameter has no grad.
template <std::floating_point T>
void adam_step(std::span<Parameter<T>* const> params, const AdamOptions& options);

}  // namespace augcl
