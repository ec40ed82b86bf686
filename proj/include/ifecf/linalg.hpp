#pragma once

// Small dense matrix products for the attention and predictor layers.
// Row-major, serial, fixed summation order.

#include "ifecf/tensor.hpp"

namespace ifecf {

// C (+)= A * B, A m x k, B k x n.
template <class T>
void matmul(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, bool accumulate = false) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw InputError("matmul: inner dimensions differ");
    if (!accumulate) c = Tensor<T>({m, n});
    else if (c.shape() != Shape{m, n}) throw InputError("matmul: accumulator shape mismatch");
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = &c(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a(i, p);
            const T* brow = &b(p, 0);
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> c;
    matmul(a, b, c);
    return c;
}

// C (+)= A * B^T, A m x k, B n x k.
template <class T>
void matmul_nt(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, bool accumulate = false) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) throw InputError("matmul_nt: inner dimensions differ");
    if (!accumulate) c = Tensor<T>({m, n});
    else if (c.shape() != Shape{m, n}) throw InputError("matmul_nt: accumulator shape mismatch");
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = &a(i, 0);
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = &b(j, 0);
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c(i, j) += acc;
        }
    }
}

// C (+)= A^T * B, A k x m, B k x n.
template <class T>
void matmul_tn(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, bool accumulate = false) {
    const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw InputError("matmul_tn: inner dimensions differ");
    if (!accumulate) c = Tensor<T>({m, n});
    else if (c.shape() != Shape{m, n}) throw InputError("matmul_tn: accumulator shape mismatch");
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = &a(p, 0);
        const T* brow = &b(p, 0);
        for (std::size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            T* crow = &c(i, 0);
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace ifecf
