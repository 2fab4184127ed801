#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "augcl/parameter.hpp"
#include "augcl/tensor.hpp"

namespace augcl {

enum class GradMode { enabled, disabled };

template <std::floating_point T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <std::floating_point T>
class Var {
public:
    Var() = default;

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t axis) const { return value().dim(axis); }
    bool requires_grad() const;
    std::size_t id() const noexcept { return id_; }
    Tape<T>* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape<T>;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Wengert list for reverse-mode differentiation.
///
/// Nodes are appended in execution order, which is a topological order of
/// the graph; backward() walks it once in reverse. Gradients of leaves and
/// bound Parameters accumulate across backward() calls, intermediate
/// gradients are recomputed on every call.
template <std::floating_point T>
class Tape {
public:
    /// Receives d(loss)/d(output); pushes contributions to inputs via accumulate().
    using BackwardFn = std::function<void(Tape&, std::span<const T>)>;

    explicit Tape(GradMode mode = GradMode::enabled) : mode_(mode) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const noexcept { return mode_ == GradMode::enabled; }

    Var<T> constant(Tensor<T> value);
    /// Input that collects a gradient readable through grad().
    Var<T> leaf(Tensor<T> value);
    /// Trainable binding: gradients land in `param.value`'s grad buffer.
    Var<T> bind(Parameter<T>& param);
    /// Read-only binding: never receives a gradient.
    Var<T> bind(const Parameter<T>& param);

    /// Commits an op output. The value must be finite. `backward` may be empty
    /// for non-differentiable ops.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, std::string_view op,
                  BackwardFn backward);

    bool needs_grad(Var<T> v) const;
    /// Adds `g` to v's gradient; no-op if v does not require a gradient.
    void accumulate(Var<T> v, std::span<const T> g);

    void backward(Var<T> loss);

    /// Gradient of a leaf or intermediate after backward(). Throws if absent.
    std::span<const T> grad(Var<T> v) const;
    bool has_grad(Var<T> v) const;
    void zero_grad();

    std::size_t size() const noexcept { return nodes_.size(); }
    /// Number of backward closures executed by the most recent backward().
    std::size_t last_backward_visits() const noexcept { return last_visits_; }

    const Tensor<T>& value(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return node(id).requires_grad; }

private:
    struct Node {
        Tensor<T> value;
        const Tensor<T>* external = nullptr;
        Parameter<T>* param = nullptr;
        bool requires_grad = false;
        bool is_leaf = true;
        AlignedVector<T> grad;
        BackwardFn backward;
        std::string_view op;
    };

    const Node& node(std::size_t id) const;
    Node& node(std::size_t id);
    void check_owner(Var<T> v) const;

    GradMode mode_;
    std::deque<Node> nodes_;
    std::size_t last_visits_ = 0;
};

extern template class Tape<float>;
extern template class Tape<double>;

template <std::floating_point T>
const Tensor<T>& Var<T>::value() const {
    return tape_->value(id_);
}

template <std::floating_point T>
bool Var<T>::requires_grad() const {
    return tape_->requires_grad(id_);
}

}  // namespace augcl
