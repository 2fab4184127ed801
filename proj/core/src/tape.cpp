#include "augcl/tape.hpp"

#include <algorithm>

#include "augcl/errors.hpp"

namespace augcl {

template <std::floating_point T>
const typename Tape<T>::Node& Tape<T>::node(std::size_t id) const {
    if (id >= nodes_.size()) throw ContractError("variable does not belong to this tape");
    return nodes_[id];
}

template <std::floating_point T>
typename Tape<T>::Node& Tape<T>::node(std::size_t id) {
    if (id >= nodes_.size()) throw ContractError("variable does not belong to this tape");
    return nodes_[id];
}

template <std::floating_point T>
void Tape<T>::check_owner(Var<T> v) const {
    if (v.tape() != this) throw ContractError("variable recorded on a different tape");
}

template <std::floating_point T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
    const Node& n = node(id);
    return n.external ? *n.external : n.value;
}

template <std::floating_point T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    value.check_finite("constant");
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.op = "constant";
    return Var<T>(this, nodes_.size() - 1);
}

template <std::floating_point T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
    value.check_finite("leaf");
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.requires_grad = grad_enabled();
    n.op = "leaf";
    return Var<T>(this, nodes_.size() - 1);
}

template <std::floating_point T>
Var<T> Tape<T>::bind(Parameter<T>& param) {
    if (!grad_enabled()) return bind(std::as_const(param));
    Node& n = nodes_.emplace_back();
    n.external = &param.value;
    n.param = &param;
    n.requires_grad = true;
    n.op = "parameter";
    return Var<T>(this, nodes_.size() - 1);
}

template <std::floating_point T>
Var<T> Tape<T>::bind(const Parameter<T>& param) {
    Node& n = nodes_.emplace_back();
    n.external = &param.value;
    n.op = "frozen-parameter";
    return Var<T>(this, nodes_.size() - 1);
}

template <std::floating_point T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, std::string_view op,
                       BackwardFn backward) {
    value.check_finite(op);
    bool any = false;
    for (const Var<T>& in : inputs) {
        check_owner(in);
        any = any || node(in.id()).requires_grad;
    }
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.op = op;
    n.is_leaf = false;
    n.requires_grad = grad_enabled() && any && static_cast<bool>(backward);
    if (n.requires_grad) n.backward = std::move(backward);
    return Var<T>(this, nodes_.size() - 1);
}

template <std::floating_point T>
bool Tape<T>::needs_grad(Var<T> v) const {
    check_owner(v);
    return node(v.id()).requires_grad;
}

template <std::floating_point T>
void Tape<T>::accumulate(Var<T> v, std::span<const T> g) {
    check_owner(v);
    Node& n = node(v.id());
    if (!n.requires_grad) return;
    std::span<T> dst;
    if (n.param) {
        dst = n.param->value.ensure_grad();
    } else {
        if (n.grad.empty()) n.grad.assign(value(v.id()).numel(), T(0));
        dst = n.grad;
    }
    if (dst.size() != g.size()) throw DimensionError("gradient size mismatch in " + std::string(n.op));
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

template <std::floating_point T>
void Tape<T>::backward(Var<T> loss) {
    check_owner(loss);
    if (value(loss.id()).numel() != 1)
        throw ContractError("backward() needs a scalar loss, got " + shape_string(value(loss.id()).shape()));
    for (Node& n : nodes_) {
        if (!n.is_leaf) n.grad.clear();
    }
    last_visits_ = 0;
    if (!node(loss.id()).requires_grad) return;

    const std::vector<T> seed{T(1)};
    accumulate(loss, seed);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
        n.backward(*this, n.grad);
        ++last_visits_;
    }
}

template <std::floating_point T>
bool Tape<T>::has_grad(Var<T> v) const {
    check_owner(v);
    const Node& n = node(v.id());
    if (n.param) return n.param->value.has_grad();
    return !n.grad.empty();
}

template <std::floating_point T>
std::span<const T> Tape<T>::grad(Var<T> v) const {
    check_owner(v);
    const Node& n = node(v.id());
    if (n.param) return std::as_const(n.param->value).grad();
    if (n.grad.empty()) throw ContractError("no gradient recorded for node '" + std::string(n.op) + "'");
    return n.grad;
}

template <std::floating_point T>
void Tape<T>::zero_grad() {
    for (Node& n : nodes_) {
        if (n.param)
            n.param->value.zero_grad();
        else
            std::fill(n.grad.begin(), n.grad.end(), T(0));
    }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace augcl
