#pragma once

// Register-tiled single-threaded GEMM used by the parallel conv kernels.
//
//   C[m][n] += sum_k A(m, k) * B[k][n]
//
// A is addressed as a[m * a_rs + k * a_cs] so transposed operands need no
// copy. Each C entry is accumulated in ascending k starting from its current
// value, so results do not depend on tiling or thread count.

#include <algorithm>
#include <cstddef>
#include <cstring>

namespace ifecf::kernels::detail {

template <class T>
struct Simd {
    static constexpr std::size_t lanes = 32 / sizeof(T);
    typedef T type __attribute__((vector_size(32)));
};

template <class T>
void gemm_accumulate(std::size_t m_count, std::size_t n_count, std::size_t k_count, const T* a,
                     std::size_t a_rs, std::size_t a_cs, const T* b, std::size_t ldb, T* c,
                     std::size_t ldc) {
    using V = typename Simd<T>::type;
    constexpr std::size_t L = Simd<T>::lanes;
    constexpr std::size_t MR = 6;

    const auto load = [](const T* p) {
        V v;
        std::memcpy(&v, p, sizeof(V));
        return v;
    };
    const auto store = [](T* p, const V& v) { std::memcpy(p, &v, sizeof(V)); };

    std::size_t m0 = 0;
    for (; m0 + MR <= m_count; m0 += MR) {
        const T* ap = a + m0 * a_rs;
        std::size_t n0 = 0;
        for (; n0 + 2 * L <= n_count; n0 += 2 * L) {
            V acc[MR][2];
            for (std::size_t i = 0; i < MR; ++i) {
                acc[i][0] = load(c + (m0 + i) * ldc + n0);
                acc[i][1] = load(c + (m0 + i) * ldc + n0 + L);
            }
            for (std::size_t k = 0; k < k_count; ++k) {
                const V b0 = load(b + k * ldb + n0);
                const V b1 = load(b + k * ldb + n0 + L);
                const T* ak = ap + k * a_cs;
                for (std::size_t i = 0; i < MR; ++i) {
                    const T av = ak[i * a_rs];
                    acc[i][0] += av * b0;
                    acc[i][1] += av * b1;
                }
            }
            for (std::size_t i = 0; i < MR; ++i) {
                store(c + (m0 + i) * ldc + n0, acc[i][0]);
                store(c + (m0 + i) * ldc + n0 + L, acc[i][1]);
            }
        }
        for (; n0 + L <= n_count; n0 += L) {
            V acc[MR];
            for (std::size_t i = 0; i < MR; ++i) acc[i] = load(c + (m0 + i) * ldc + n0);
            for (std::size_t k = 0; k < k_count; ++k) {
                const V b0 = load(b + k * ldb + n0);
                const T* ak = ap + k * a_cs;
                for (std::size_t i = 0; i < MR; ++i) acc[i] += ak[i * a_rs] * b0;
            }
            for (std::size_t i = 0; i < MR; ++i) store(c + (m0 + i) * ldc + n0, acc[i]);
        }
        for (std::size_t i = m0; i < m0 + MR; ++i) {
            for (std::size_t n = n0; n < n_count; ++n) {
                T s = c[i * ldc + n];
                for (std::size_t k = 0; k < k_count; ++k) s += a[i * a_rs + k * a_cs] * b[k * ldb + n];
                c[i * ldc + n] = s;
            }
        }
    }
    for (std::size_t i = m0; i < m_count; ++i) {
        T* ci = c + i * ldc;
        for (std::size_t k = 0; k < k_count; ++k) {
            const T av = a[i * a_rs + k * a_cs];
            const T* bk = b + k * ldb;
            for (std::size_t n = 0; n < n_count; ++n) ci[n] += av * bk[n];
        }
    }
}

// dst[c][r] = src[r][c] for an rows x cols source.
template <class T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
    constexpr std::size_t B = 16;
    for (std::size_t r0 = 0; r0 < rows; r0 += B)
        for (std::size_t c0 = 0; c0 < cols; c0 += B)
            for (std::size_t r = r0; r < std::min(rows, r0 + B); ++r)
                for (std::size_t c = c0; c < std::min(cols, c0 + B); ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace ifecf::kernels::detail
