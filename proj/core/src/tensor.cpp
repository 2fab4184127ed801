#include "augcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "augcl/errors.hpp"

namespace augcl {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
    if (std::find(shape_.begin(), shape_.end(), std::size_t{0}) != shape_.end())
        throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
    data_.assign(shape_numel(shape_), fill);
}

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : Tensor(std::move(shape), AlignedVector<T>(data.begin(), data.end())) {}

template <std::floating_point T>
Tensor<T>::Tensor(Shape shape, AlignedVector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (std::find(shape_.begin(), shape_.end(), std::size_t{0}) != shape_.end())
        throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
    if (shape_numel(shape_) != data_.size())
        throw DimensionError("shape " + shape_string(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
}

template <std::floating_point T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t n = rows.size();
    const std::size_t m = n ? rows.begin()->size() : 0;
    AlignedVector<T> data;
    data.reserve(n * m);
    for (const auto& row : rows) {
        if (row.size() != m) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({n, m}, std::move(data));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, AlignedVector<T>(values));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::scalar(T value) {
    return Tensor({1}, AlignedVector<T>{value});
}

template <std::floating_point T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
    if (axis >= shape_.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
    return shape_[axis];
}

template <std::floating_point T>
std::size_t Tensor<T>::flat_index(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) throw DimensionError("index rank mismatch for " + shape_string(shape_));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= shape_[axis]) throw DimensionError("index out of range for " + shape_string(shape_));
        flat = flat * shape_[axis] + i;
        ++axis;
    }
    return flat;
}

template <std::floating_point T>
T& Tensor<T>::at(std::initializer_list<std::size_t> index) {
    return data_[flat_index(index)];
}

template <std::floating_point T>
const T& Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    return data_[flat_index(index)];
}

template <std::floating_point T>
T Tensor<T>::item() const {
    if (data_.size() != 1) throw ContractError("item() needs a single-element tensor, got " + shape_string(shape_));
    return data_[0];
}

template <std::floating_point T>
std::span<const T> Tensor<T>::grad() const {
    if (!grad_) throw ContractError("tensor has no gradient");
    return *grad_;
}

template <std::floating_point T>
std::span<T> Tensor<T>::grad() {
    if (!grad_) throw ContractError("tensor has no gradient");
    return *grad_;
}

template <std::floating_point T>
std::span<T> Tensor<T>::ensure_grad() {
    if (!grad_) grad_.emplace(data_.size(), T(0));
    return *grad_;
}

template <std::floating_point T>
void Tensor<T>::zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
}

template <std::floating_point T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size())
        throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
}

template <std::floating_point T>
void Tensor<T>::check_finite(std::string_view what) const {
    for (T v : data_) {
        if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + std::string(what));
    }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace augcl
