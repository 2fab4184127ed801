#pragma once

#include <cstddef>

#include "augcl/model.hpp"
#include "augcl/ops.hpp"
#include "augcl/tape.hpp"

namespace augcl {

inline constexpr double kStandardizeEps = 1e-5;
inline constexpr double kDefaultLambda = 0.005;
inline constexpr double kDefaultGamma = 0.5;

template <std::floating_point T>
struct CorrelationMatrix {
    Tensor<T> values;  // [d x d]
    std::size_t batch_size_used = 0;
};

struct LossBreakdown {
    double total = 0.0;
    double ssl_term = 0.0;
    double distill_a = 0.0;
    double distill_b = 0.0;
    double lambda = kDefaultLambda;
    double gamma = kDefaultGamma;
};

/// Gradient-free column standardization of a [n x d] tensor.
template <std::floating_point T>
Tensor<T> standardize_columns(const Tensor<T>& z, T eps = T(kStandardizeEps));

/// C = standardize(za)^T standardize(zb) / n, differentiable in both inputs.
template <std::floating_point T>
Var<T> cross_correlation(Var<T> za, Var<T> zb, T eps = T(kStandardizeEps));

template <std::floating_point T>
CorrelationMatrix<T> cross_correlation(const Tensor<T>& za, const Tensor<T>& zb, T eps = T(kStandardizeEps));

/// sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2 over cross_correlation(za, zb).
template <std::floating_point T>
Var<T> barlow_twins_loss(Var<T> za, Var<T> zb, T lambda);

template <std::floating_point T>
double barlow_twins_loss(const Tensor<T>& za, const Tensor<T>& zb, T lambda);

template <std::floating_point T>
struct LossResult {
    Var<T> total;
    LossBreakdown breakdown;
};

/// Barlow Twins alone, reported in breakdown form with zero distillation terms.
template <std::floating_point T>
LossResult<T> ssl_loss(Var<T> za, Var<T> zb, T lambda);

/// L_BT(za, zb) + gamma * (L_BT(zbar_a, g(za)) + L_BT(zbar_b, g(zb))).
/// The frozen targets are detached: no gradient ever reaches them.
template <std::floating_point T>
LossResult<T> cassle_loss(Var<T> za, Var<T> zb, Var<T> zbar_a, Var<T> zbar_b, Predictor<T>& g, T lambda, T gamma,
                          Mode predictor_mode = Mode::train);

}  // namespace augcl
