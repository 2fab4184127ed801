#pragma once

#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace augcl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);

/// 64-byte aligned allocation, so vectorized kernels see the same alignment
/// (and therefore the same summation order) for every buffer.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;
std::string shape_string(const Shape& shape);

/// Dense row-major n-dimensional array. Value semantic: copies are deep.
///
/// `grad` is optional and, when present, always has numel() entries.
template <std::floating_point T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> data);
    Tensor(Shape shape, AlignedVector<T> data);
    Tensor(Shape shape, std::initializer_list<T> values) : Tensor(std::move(shape), AlignedVector<T>(values)) {}

    /// Row-major 2-D literal, e.g. `Tensor<double>::matrix({{1, 2}, {3, 4}})`.
    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);
    static Tensor vector(std::initializer_list<T> values);
    static Tensor scalar(T value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    AlignedVector<T>& storage() noexcept { return data_; }
    const AlignedVector<T>& storage() const noexcept { return data_; }
    std::vector<T> to_vector() const { return {data_.begin(), data_.end()}; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    T& at(std::initializer_list<std::size_t> index);
    const T& at(std::initializer_list<std::size_t> index) const;
    T item() const;

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool flag) noexcept { requires_grad_ = flag; }

    bool has_grad() const noexcept { return grad_.has_value(); }
    std::span<const T> grad() const;
    std::span<T> grad();
    /// Allocates a zero gradient buffer if none exists and returns it.
    std::span<T> ensure_grad();
    void zero_grad();
    void clear_grad() noexcept { grad_.reset(); }

    Tensor reshaped(Shape shape) const;

    template <std::floating_point U>
    Tensor<U> cast() const {
        AlignedVector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    /// Throws NumericError naming `what` when any element is NaN or Inf.
    void check_finite(std::string_view what) const;

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    std::size_t flat_index(std::initializer_list<std::size_t> index) const;

    Shape shape_;
    AlignedVector<T> data_;
    bool requires_grad_ = false;
    std::optional<AlignedVector<T>> grad_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace augcl
