#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "augcl/tape.hpp"

namespace augcl {

enum class Mode { train, eval };

/// Running statistics of one batch-norm layer, one entry per channel.
template <std::floating_point T>
struct BatchNormStats {
    BatchNormStats() = default;
    explicit BatchNormStats(std::size_t channels) : running_mean(channels, T(0)), running_var(channels, T(1)) {}

    std::vector<T> running_mean;
    std::vector<T> running_var;

    bool operator==(const BatchNormStats&) const = default;
};

struct BatchNormOptions {
    double eps = 1e-5;
    double momentum = 0.1;
};

// Every op below records its output on the tape owning its inputs. All
// inputs of one call must live on the same tape.

/// [m x k] * [k x p] -> [m x p]
template <std::floating_point T>
Var<T> matmul(Var<T> a, Var<T> b);

/// 2-D transpose.
template <std::floating_point T>
Var<T> transpose(Var<T> a);

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b);

template <std::floating_point T>
Var<T> sub(Var<T> a, Var<T> b);

/// Elementwise product.
template <std::floating_point T>
Var<T> mul(Var<T> a, Var<T> b);

template <std::floating_point T>
Var<T> scale(Var<T> a, T factor);

/// Sum of all elements, as a [1] tensor.
template <std::floating_point T>
Var<T> sum(Var<T> a);

/// Adds bias[j] to column j of a [n x d] input.
template <std::floating_point T>
Var<T> add_bias(Var<T> x, Var<T> bias);

/// max(0, x); the subgradient at 0 is 0.
template <std::floating_point T>
Var<T> relu(Var<T> x);

template <std::floating_point T>
Var<T> reshape(Var<T> x, Shape shape);

/// Cross-correlation of [n x c x h x w] with [o x c x kh x kw] kernels and
/// zero padding. Output spatial size is floor((h + 2p - kh) / stride) + 1.
template <std::floating_point T>
Var<T> conv2d(Var<T> input, Var<T> kernels, std::size_t stride, std::size_t padding);

/// Non-overlapping max pooling (stride == window); trailing rows/cols dropped.
template <std::floating_point T>
Var<T> max_pool2d(Var<T> input, std::size_t window);

/// [n x c x h x w] -> [n x c]
template <std::floating_point T>
Var<T> global_avg_pool(Var<T> input);

/// Batch normalization over [n x d] (per column) or [n x c x h x w] (per
/// channel). Train mode uses batch statistics with population variance and
/// folds them into `running` with the configured momentum; eval mode reads
/// `running` only.
template <std::floating_point T>
Var<T> batch_norm(Var<T> input, Var<T> gamma, Var<T> beta, BatchNormStats<T>& running, Mode mode,
                  const BatchNormOptions& options = {});

template <std::floating_point T>
Var<T> batch_norm_eval(Var<T> input, Var<T> gamma, Var<T> beta, const BatchNormStats<T>& running,
                       const BatchNormOptions& options = {});

/// Column-wise (z - mean) / (std + eps) with population std.
template <std::floating_point T>
Var<T> standardize_columns(Var<T> z, T eps);

/// sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2 for a square C.
template <std::floating_point T>
Var<T> barlow_objective(Var<T> correlation, T lambda);

/// Mean softmax cross-entropy of [n x k] logits against integer labels.
template <std::floating_point T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);

}  // namespace augcl
