#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ifecf/errors.hpp"

namespace ifecf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape);

// Dense row-major array with shape metadata.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_)) {
            throw InputError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> span() noexcept { return data_; }
    std::span<const T> span() const noexcept { return data_; }
    std::vector<T>& values() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    // 2-D access (row, col) for matrices; no bounds checks.
    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept {
        return data_[r * shape_[1] + c];
    }
    // 3-D access.
    T& operator()(std::size_t a, std::size_t b, std::size_t c) noexcept {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }
    const T& operator()(std::size_t a, std::size_t b, std::size_t c) const noexcept {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void set_zero() { fill(T{0}); }

    // Same data, new shape of equal element count.
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != data_.size()) {
            throw InputError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <class U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

template <class T>
void require_shape(const Tensor<T>& t, const Shape& expected, const char* what) {
    if (t.shape() != expected) {
        throw InputError(std::string(what) + ": expected shape " + shape_str(expected) + ", got " +
                         shape_str(t.shape()));
    }
}

// a += b elementwise; shapes must agree.
template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw InputError("add_inplace: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace ifecf
