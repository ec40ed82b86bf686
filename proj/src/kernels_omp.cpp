// OpenMP kernels. Each parallel job owns a disjoint slice of the output, and
// every reduction runs inside one job in a fixed order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ifecf/kernels.hpp"
#include "gemm.hpp"
#include "kernel_instantiations.hpp"

namespace ifecf::kernels {
namespace {

using Index = long long;

struct TapRange {
    std::size_t lo = 0;
    std::size_t hi = 0;
};

// Output indices o for which o*stride + tap - pad lands inside [0, extent).
TapRange tap_range(std::size_t out_extent, std::size_t extent, std::size_t stride,
                   std::size_t tap, std::size_t pad) {
    TapRange r;
    r.lo = tap >= pad ? 0 : (pad - tap + stride - 1) / stride;
    if (extent - 1 + pad < tap) return {0, 0};
    r.hi = std::min(out_extent, (extent - 1 + pad - tap) / stride + 1);
    if (r.hi < r.lo) r.hi = r.lo;
    return r;
}

bool is_pointwise(const Conv2dGeometry& g) {
    return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.pad_top == 0 &&
           g.pad_left == 0 && g.out_h == g.in_h && g.out_w == g.in_w;
}

// Eight independent partial sums, combined pairwise; vectorizes without
// reassociation flags and stays deterministic.
template <class T>
T dot(const T* __restrict a, const T* __restrict b, std::size_t len) {
    T acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= len; i += 8)
        for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    T tail = 0;
    for (; i < len; ++i) tail += a[i] * b[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <class T>
T sum(const T* a, std::size_t len) {
    T acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= len; i += 8)
        for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j];
    T tail = 0;
    for (; i < len; ++i) tail += a[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

template <class T>
T centered_square_sum(const T* a, std::size_t len, T mu) {
    T acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= len; i += 8)
        for (std::size_t j = 0; j < 8; ++j) acc[j] += (a[i + j] - mu) * (a[i + j] - mu);
    T tail = 0;
    for (; i < len; ++i) tail += (a[i] - mu) * (a[i] - mu);
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

// out_plane += w * shifted(in_plane) for one kernel tap.
template <class T>
void accumulate_tap(const Conv2dGeometry& g, std::size_t ky, std::size_t kx, T w,
                    const T* __restrict in, T* __restrict out) {
    const TapRange ry = tap_range(g.out_h, g.in_h, g.stride, ky, g.pad_top);
    const TapRange rx = tap_range(g.out_w, g.in_w, g.stride, kx, g.pad_left);
    for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
        const T* src = in + (oy * g.stride + ky - g.pad_top) * g.in_w;
        T* dst = out + oy * g.out_w;
        if (g.stride == 1) {
            const T* s = src + kx - g.pad_left;
            for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) dst[ox] += w * s[ox];
        } else {
            for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                dst[ox] += w * src[ox * g.stride + kx - g.pad_left];
        }
    }
}

// in_grad_plane += w * scatter(out_grad_plane) for one kernel tap.
template <class T>
void scatter_tap(const Conv2dGeometry& g, std::size_t ky, std::size_t kx, T w,
                 const T* __restrict grad_out, T* __restrict grad_in) {
    const TapRange ry = tap_range(g.out_h, g.in_h, g.stride, ky, g.pad_top);
    const TapRange rx = tap_range(g.out_w, g.in_w, g.stride, kx, g.pad_left);
    for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
        T* dst = grad_in + (oy * g.stride + ky - g.pad_top) * g.in_w;
        const T* src = grad_out + oy * g.out_w;
        if (g.stride == 1) {
            T* d = dst + kx - g.pad_left;
            for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) d[ox] += w * src[ox];
        } else {
            for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                dst[ox * g.stride + kx - g.pad_left] += w * src[ox];
        }
    }
}

// sum over valid positions of grad_out * shifted(in) for one kernel tap.
template <class T>
T correlate_tap(const Conv2dGeometry& g, std::size_t ky, std::size_t kx, const T* in,
                const T* grad_out) {
    const TapRange ry = tap_range(g.out_h, g.in_h, g.stride, ky, g.pad_top);
    const TapRange rx = tap_range(g.out_w, g.in_w, g.stride, kx, g.pad_left);
    T acc = 0;
    if (rx.hi <= rx.lo) return acc;
    for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
        const T* src = in + (oy * g.stride + ky - g.pad_top) * g.in_w;
        const T* go = grad_out + oy * g.out_w;
        if (g.stride == 1) {
            acc += dot(go + rx.lo, src + rx.lo + kx - g.pad_left, rx.hi - rx.lo);
        } else {
            for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                acc += go[ox] * src[ox * g.stride + kx - g.pad_left];
        }
    }
    return acc;
}

// Rows of output channels handed to one parallel job; a multiple of the GEMM tile height.
constexpr std::size_t kRowBlock = 48;

// Column matrix of one sample: row (ci, ky, kx), column output position.
template <class T>
void im2col(const Conv2dGeometry& g, const T* in, T* col) {
    const std::size_t out_plane = g.out_plane();
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                T* row = col + ((ci * g.kernel_h + ky) * g.kernel_w + kx) * out_plane;
                std::fill(row, row + out_plane, T{0});
                const TapRange ry = tap_range(g.out_h, g.in_h, g.stride, ky, g.pad_top);
                const TapRange rx = tap_range(g.out_w, g.in_w, g.stride, kx, g.pad_left);
                const T* plane = in + ci * g.in_plane();
                for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                    const T* src = plane + (oy * g.stride + ky - g.pad_top) * g.in_w;
                    for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                        row[oy * g.out_w + ox] = src[ox * g.stride + kx - g.pad_left];
                }
            }
}

// Adds a column-matrix gradient back onto the input planes of one sample.
template <class T>
void col2im_add(const Conv2dGeometry& g, const T* col, T* in) {
    const std::size_t out_plane = g.out_plane();
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const T* row = col + ((ci * g.kernel_h + ky) * g.kernel_w + kx) * out_plane;
                const TapRange ry = tap_range(g.out_h, g.in_h, g.stride, ky, g.pad_top);
                const TapRange rx = tap_range(g.out_w, g.in_w, g.stride, kx, g.pad_left);
                T* plane = in + ci * g.in_plane();
                for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                    T* dst = plane + (oy * g.stride + ky - g.pad_top) * g.in_w;
                    for (std::size_t ox = rx.lo; ox < rx.hi; ++ox)
                        dst[ox * g.stride + kx - g.pad_left] += row[oy * g.out_w + ox];
                }
            }
}

}  // namespace

template <class T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output) {
    const bool pointwise = is_pointwise(g);
    const std::size_t out_plane = g.out_plane();
    const std::size_t depth = g.in_channels * g.kernel_area();
    const std::size_t blocks = (g.out_channels + kRowBlock - 1) / kRowBlock;
    std::vector<T> cols(pointwise ? 0 : g.batch * depth * out_plane);
    if (!pointwise) {
#pragma omp parallel for schedule(static)
        for (Index n = 0; n < static_cast<Index>(g.batch); ++n) {
            const auto i = static_cast<std::size_t>(n);
            im2col(g, input.data() + i * g.in_channels * g.in_plane(), cols.data() + i * depth * out_plane);
        }
    }
#pragma omp parallel for schedule(static)
    for (Index job = 0; job < static_cast<Index>(g.batch * blocks); ++job) {
        const std::size_t n = static_cast<std::size_t>(job) / blocks;
        const std::size_t co0 = (static_cast<std::size_t>(job) % blocks) * kRowBlock;
        const std::size_t rows = std::min(kRowBlock, g.out_channels - co0);
        T* out = output.data() + (n * g.out_channels + co0) * out_plane;
        for (std::size_t r = 0; r < rows; ++r)
            std::fill(out + r * out_plane, out + (r + 1) * out_plane, bias.empty() ? T{0} : bias[co0 + r]);
        const T* col = pointwise ? input.data() + n * g.in_channels * g.in_plane()
                                 : cols.data() + n * depth * out_plane;
        detail::gemm_accumulate(rows, out_plane, depth, weight.data() + co0 * depth, depth, std::size_t{1}, col,
                                out_plane, out, out_plane);
    }
}

template <class T>
void conv2d_backward(const Conv2dGeometry& g, std::span<const T> input, std::span<const T> weight,
                     std::span<const T> grad_output, std::span<T> grad_input,
                     std::span<T> grad_weight, std::span<T> grad_bias) {
    const bool pointwise = is_pointwise(g);
    const std::size_t out_plane = g.out_plane();
    const std::size_t depth = g.in_channels * g.kernel_area();

    if (!grad_input.empty()) {
        if (pointwise) {
            const std::size_t blocks = (g.in_channels + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
            for (Index job = 0; job < static_cast<Index>(g.batch * blocks); ++job) {
                const std::size_t n = static_cast<std::size_t>(job) / blocks;
                const std::size_t ci0 = (static_cast<std::size_t>(job) % blocks) * kRowBlock;
                const std::size_t rows = std::min(kRowBlock, g.in_channels - ci0);
                T* gin = grad_input.data() + (n * g.in_channels + ci0) * out_plane;
                std::fill(gin, gin + rows * out_plane, T{0});
                detail::gemm_accumulate(rows, out_plane, g.out_channels, weight.data() + ci0, std::size_t{1},
                                        g.in_channels, grad_output.data() + n * g.out_channels * out_plane,
                                        out_plane, gin, out_plane);
            }
        } else {
#pragma omp parallel for schedule(static)
            for (Index n = 0; n < static_cast<Index>(g.batch); ++n) {
                const auto i = static_cast<std::size_t>(n);
                std::vector<T> gcol(depth * out_plane, T{0});
                detail::gemm_accumulate(depth, out_plane, g.out_channels, weight.data(), std::size_t{1}, depth,
                                        grad_output.data() + i * g.out_channels * out_plane, out_plane,
                                        gcol.data(), out_plane);
                T* gin = grad_input.data() + i * g.in_channels * g.in_plane();
                std::fill(gin, gin + g.in_channels * g.in_plane(), T{0});
                col2im_add(g, gcol.data(), gin);
            }
        }
    }

    // Transposed column matrices (position x depth) turn the weight gradient
    // into a plain GEMM per sample.
    std::vector<T> cols_t(g.batch * out_plane * depth);
#pragma omp parallel for schedule(static)
    for (Index n = 0; n < static_cast<Index>(g.batch); ++n) {
        const auto i = static_cast<std::size_t>(n);
        const T* in = input.data() + i * g.in_channels * g.in_plane();
        if (pointwise) {
            detail::transpose(in, depth, out_plane, cols_t.data() + i * out_plane * depth);
        } else {
            std::vector<T> col(depth * out_plane);
            im2col(g, in, col.data());
            detail::transpose(col.data(), depth, out_plane, cols_t.data() + i * out_plane * depth);
        }
    }
    const std::size_t blocks = (g.out_channels + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
    for (Index b = 0; b < static_cast<Index>(blocks); ++b) {
        const std::size_t co0 = static_cast<std::size_t>(b) * kRowBlock;
        const std::size_t rows = std::min(kRowBlock, g.out_channels - co0);
        T* gw = grad_weight.data() + co0 * depth;
        std::fill(gw, gw + rows * depth, T{0});
        for (std::size_t n = 0; n < g.batch; ++n) {
            detail::gemm_accumulate(rows, depth, out_plane,
                                    grad_output.data() + (n * g.out_channels + co0) * out_plane, out_plane,
                                    std::size_t{1}, cols_t.data() + n * out_plane * depth, depth, gw, depth);
        }
        if (!grad_bias.empty()) {
            for (std::size_t r = 0; r < rows; ++r) {
                T acc = 0;
                for (std::size_t n = 0; n < g.batch; ++n)
                    acc += sum(grad_output.data() + (n * g.out_channels + co0 + r) * out_plane, out_plane);
                grad_bias[co0 + r] = acc;
            }
        }
    }
}

template <class T>
void depthwise_forward(const Conv2dGeometry& g, std::span<const T> input, std::span<const T> weight,
                       std::span<const T> bias, std::span<T> output) {
    const std::size_t in_plane = g.in_plane();
    const std::size_t out_plane = g.out_plane();
    const std::size_t taps = g.kernel_area();
#pragma omp parallel for schedule(static)
    for (Index job = 0; job < static_cast<Index>(g.batch * g.in_channels); ++job) {
        const std::size_t c = static_cast<std::size_t>(job) % g.in_channels;
        const T* in = input.data() + static_cast<std::size_t>(job) * in_plane;
        T* out = output.data() + static_cast<std::size_t>(job) * out_plane;
        std::fill(out, out + out_plane, bias.empty() ? T{0} : bias[c]);
        const T* w = weight.data() + c * taps;
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx)
                accumulate_tap(g, ky, kx, w[ky * g.kernel_w + kx], in, out);
    }
}

template <class T>
void depthwise_backward(const Conv2dGeometry& g, std::span<const T> input,
                        std::span<const T> weight, std::span<const T> grad_output,
                        std::span<T> grad_input, std::span<T> grad_weight,
                        std::span<T> grad_bias) {
    const std::size_t in_plane = g.in_plane();
    const std::size_t out_plane = g.out_plane();
    const std::size_t taps = g.kernel_area();
    if (!grad_input.empty()) {
#pragma omp parallel for schedule(static)
        for (Index job = 0; job < static_cast<Index>(g.batch * g.in_channels); ++job) {
            const std::size_t c = static_cast<std::size_t>(job) % g.in_channels;
            T* gin = grad_input.data() + static_cast<std::size_t>(job) * in_plane;
            const T* go = grad_output.data() + static_cast<std::size_t>(job) * out_plane;
            std::fill(gin, gin + in_plane, T{0});
            const T* w = weight.data() + c * taps;
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
                for (std::size_t kx = 0; kx < g.kernel_w; ++kx)
                    scatter_tap(g, ky, kx, w[ky * g.kernel_w + kx], go, gin);
        }
    }
#pragma omp parallel for schedule(static)
    for (Index c_i = 0; c_i < static_cast<Index>(g.in_channels); ++c_i) {
        const auto c = static_cast<std::size_t>(c_i);
        T* gw = grad_weight.data() + c * taps;
        for (std::size_t t = 0; t < taps; ++t) gw[t] = T{0};
        T bias_acc = 0;
        for (std::size_t n = 0; n < g.batch; ++n) {
            const T* go = grad_output.data() + (n * g.in_channels + c) * out_plane;
            const T* in = input.data() + (n * g.in_channels + c) * in_plane;
            bias_acc += sum(go, out_plane);
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
                for (std::size_t kx = 0; kx < g.kernel_w; ++kx)
                    gw[ky * g.kernel_w + kx] += correlate_tap(g, ky, kx, in, go);
        }
        if (!grad_bias.empty()) grad_bias[c] = bias_acc;
    }
}

template <class T>
void batchnorm_forward_train(std::size_t n, std::size_t c, std::size_t plane,
                             std::span<const T> input, std::span<const T> gamma,
                             std::span<const T> beta, T eps, std::span<T> output,
                             std::span<T> mean, std::span<T> inv_std, std::span<const T> slope) {
    const T count = static_cast<T>(n * plane);
#pragma omp parallel for schedule(static)
    for (Index ch_i = 0; ch_i < static_cast<Index>(c); ++ch_i) {
        const auto ch = static_cast<std::size_t>(ch_i);
        T s = 0;
        for (std::size_t b = 0; b < n; ++b) s += sum(input.data() + (b * c + ch) * plane, plane);
        const T mu = s / count;
        T sq = 0;
        for (std::size_t b = 0; b < n; ++b) sq += centered_square_sum(input.data() + (b * c + ch) * plane, plane, mu);
        const T istd = T{1} / std::sqrt(sq / count + eps);
        mean[ch] = mu;
        inv_std[ch] = istd;
        const T scale = gamma[ch] * istd;
        const T shift = beta[ch] - mu * scale;
        const T a = slope.empty() ? T{1} : slope[ch];
        for (std::size_t b = 0; b < n; ++b) {
            const T* x = input.data() + (b * c + ch) * plane;
            T* y = output.data() + (b * c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                const T z = x[p] * scale + shift;
                y[p] = z > T{0} ? z : a * z;
            }
        }
    }
}

template <class T>
void batchnorm_forward_eval(std::size_t n, std::size_t c, std::size_t plane,
                            std::span<const T> input, std::span<const T> gamma,
                            std::span<const T> beta, std::span<const T> running_mean,
                            std::span<const T> running_var, T eps, std::span<T> output,
                            std::span<const T> slope) {
#pragma omp parallel for schedule(static)
    for (Index job = 0; job < static_cast<Index>(n * c); ++job) {
        const std::size_t ch = static_cast<std::size_t>(job) % c;
        const T scale = gamma[ch] / std::sqrt(running_var[ch] + eps);
        const T shift = beta[ch] - running_mean[ch] * scale;
        const T a = slope.empty() ? T{1} : slope[ch];
        const T* x = input.data() + static_cast<std::size_t>(job) * plane;
        T* y = output.data() + static_cast<std::size_t>(job) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            const T z = x[p] * scale + shift;
            y[p] = z > T{0} ? z : a * z;
        }
    }
}

template <class T>
void batchnorm_backward(std::size_t n, std::size_t c, std::size_t plane, std::span<const T> input,
                        std::span<const T> mean, std::span<const T> inv_std,
                        std::span<const T> gamma, std::span<const T> grad_output,
                        std::span<T> grad_input, std::span<T> grad_gamma,
                        std::span<T> grad_beta) {
    const T count = static_cast<T>(n * plane);
#pragma omp parallel for schedule(static)
    for (Index ch_i = 0; ch_i < static_cast<Index>(c); ++ch_i) {
        const auto ch = static_cast<std::size_t>(ch_i);
        const T mu = mean[ch];
        const T istd = inv_std[ch];
        T dbeta = 0;
        T dxhat_dot = 0;
        for (std::size_t b = 0; b < n; ++b) {
            const T* x = input.data() + (b * c + ch) * plane;
            const T* go = grad_output.data() + (b * c + ch) * plane;
            dbeta += sum(go, plane);
            T d = 0;
            for (std::size_t p = 0; p < plane; ++p) d += go[p] * (x[p] - mu);
            dxhat_dot += d;
        }
        const T dgamma = dxhat_dot * istd;
        grad_gamma[ch] = dgamma;
        grad_beta[ch] = dbeta;
        const T k = gamma[ch] * istd / count;
        for (std::size_t b = 0; b < n; ++b) {
            const T* x = input.data() + (b * c + ch) * plane;
            const T* go = grad_output.data() + (b * c + ch) * plane;
            T* gi = grad_input.data() + (b * c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p)
                gi[p] = k * (count * go[p] - dbeta - (x[p] - mu) * istd * dgamma);
        }
    }
}

template <class T>
void prelu_forward(std::size_t n, std::size_t c, std::size_t plane, std::span<const T> input,
                   std::span<const T> slope, std::span<T> output) {
#pragma omp parallel for schedule(static)
    for (Index job = 0; job < static_cast<Index>(n * c); ++job) {
        const T a = slope[static_cast<std::size_t>(job) % c];
        const T* x = input.data() + static_cast<std::size_t>(job) * plane;
        T* y = output.data() + static_cast<std::size_t>(job) * plane;
        for (std::size_t p = 0; p < plane; ++p) y[p] = x[p] > T{0} ? x[p] : a * x[p];
    }
}

template <class T>
void prelu_backward(std::size_t n, std::size_t c, std::size_t plane, std::span<const T> input,
                    std::span<const T> slope, std::span<const T> grad_output,
                    std::span<T> grad_input, std::span<T> grad_slope) {
#pragma omp parallel for schedule(static)
    for (Index ch_i = 0; ch_i < static_cast<Index>(c); ++ch_i) {
        const auto ch = static_cast<std::size_t>(ch_i);
        const T a = slope[ch];
        T ds = 0;
        for (std::size_t b = 0; b < n; ++b) {
            const T* x = input.data() + (b * c + ch) * plane;
            const T* go = grad_output.data() + (b * c + ch) * plane;
            T* gi = grad_input.data() + (b * c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                const bool pos = x[p] > T{0};
                gi[p] = pos ? go[p] : a * go[p];
                ds += pos ? T{0} : go[p] * x[p];
            }
        }
        grad_slope[ch] = ds;
    }
}

IFECF_INSTANTIATE_KERNELS(float)
IFECF_INSTANTIATE_KERNELS(double)

}  // namespace ifecf::kernels
