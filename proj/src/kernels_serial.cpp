// Reference kernels: one output element at a time, explicit bounds checks.

#include <cmath>
#include <cstddef>
#include <span>

#include "ifecf/errors.hpp"
#include "ifecf/kernels.hpp"
#include "kernel_instantiations.hpp"

namespace ifecf::kernels {

Conv2dGeometry same_ceil_geometry(std::size_t batch, std::size_t in_channels, std::size_t in_h,
                                  std::size_t in_w, std::size_t out_channels, std::size_t kernel_h,
                                  std::size_t kernel_w, std::size_t stride) {
    if (stride == 0 || kernel_h == 0 || kernel_w == 0 || in_h == 0 || in_w == 0) {
        throw InputError("conv geometry: zero stride, kernel or input extent");
    }
    Conv2dGeometry g{batch, in_channels, in_h, in_w, out_channels, kernel_h, kernel_w, stride};
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    const auto pad_total = [&](std::size_t in, std::size_t out, std::size_t k) -> std::size_t {
        const std::size_t need = (out - 1) * stride + k;
        return need > in ? need - in : 0;
    };
    g.pad_top = pad_total(in_h, g.out_h, kernel_h) / 2;
    g.pad_left = pad_total(in_w, g.out_w, kernel_w) / 2;
    return g;
}

Conv2dGeometry valid_geometry(std::size_t batch, std::size_t in_channels, std::size_t in_h,
                              std::size_t in_w, std::size_t out_channels, std::size_t kernel_h,
                              std::size_t kernel_w, std::size_t stride) {
    if (stride == 0 || kernel_h == 0 || kernel_w == 0 || kernel_h > in_h || kernel_w > in_w) {
        throw InputError("conv geometry: kernel larger than input or zero stride");
    }
    Conv2dGeometry g{batch, in_channels, in_h, in_w, out_channels, kernel_h, kernel_w, stride};
    g.out_h = (in_h - kernel_h) / stride + 1;
    g.out_w = (in_w - kernel_w) / stride + 1;
    return g;
}

namespace serial {
namespace {

// Input coordinate for an output coordinate and kernel tap; false when it falls
// into the zero padding.
bool source_index(std::size_t out, std::size_t tap, std::size_t stride, std::size_t pad,
                  std::size_t extent, std::size_t& in) {
    const long long pos = static_cast<long long>(out * stride + tap) - static_cast<long long>(pad);
    if (pos < 0 || pos >= static_cast<long long>(extent)) return false;
    in = static_cast<std::size_t>(pos);
    return true;
}

}  // namespace

template <class T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output) {
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t oy = 0; oy < g.out_h; ++oy)
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    T acc = bias.empty() ? T{0} : bias[co];
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
                            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                                std::size_t iy = 0;
                                std::size_t ix = 0;
                                if (!source_index(oy, ky, g.stride, g.pad_top, g.in_h, iy) ||
                                    !source_index(ox, kx, g.stride, g.pad_left, g.in_w, ix))
                                    continue;
                                acc += weight[((co * g.in_channels + ci) * g.kernel_h + ky) *
                                                  g.kernel_w + kx] *
                                       input[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix];
                            }
                    output[((n * g.out_channels + co) * g.out_h + oy) * g.out_w + ox] = acc;
                }
}

template <class T>
void conv2d_backward(const Conv2dGeometry& g, std::span<const T> input, std::span<const T> weight,
                     std::span<const T> grad_output, std::span<T> grad_input,
                     std::span<T> grad_weight, std::span<T> grad_bias) {
    for (auto& v : grad_input) v = T{0};
    for (auto& v : grad_weight) v = T{0};
    for (auto& v : grad_bias) v = T{0};
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t oy = 0; oy < g.out_h; ++oy)
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    const T go = grad_output[((n * g.out_channels + co) * g.out_h + oy) * g.out_w + ox];
                    if (!grad_bias.empty()) grad_bias[co] += go;
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
                            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                                std::size_t iy = 0;
                                std::size_t ix = 0;
                                if (!source_index(oy, ky, g.stride, g.pad_top, g.in_h, iy) ||
                                    !source_index(ox, kx, g.stride, g.pad_left, g.in_w, ix))
                                    continue;
                                const std::size_t wi =
                                    ((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx;
                                const std::size_t ii =
                                    ((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix;
                                grad_weight[wi] += go * input[ii];
                                if (!grad_input.empty()) grad_input[ii] += go * weight[wi];
                            }
                }
}

template <class T>
void depthwise_forward(const Conv2dGeometry& g, std::span<const T> input, std::span<const T> weight,
                       std::span<const T> bias, std::span<T> output) {
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t oy = 0; oy < g.out_h; ++oy)
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    T acc = bias.empty() ? T{0} : bias[c];
                    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
                        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                            std::size_t iy = 0;
                            std::size_t ix = 0;
                            if (!source_index(oy, ky, g.stride, g.pad_top, g.in_h, iy) ||
                                !source_index(ox, kx, g.stride, g.pad_left, g.in_w, ix))
                                continue;
                            acc += weight[(c * g.kernel_h + ky) * g.kernel_w + kx] *
                                   input[((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
                        }
                    output[((n * g.in_channels + c) * g.out_h + oy) * g.out_w + ox] = acc;
                }
}

template <class T>
void depthwise_backward(const Conv2dGeometry& g, std::span<const T> input,
                        std::span<const T> weight, std::span<const T> grad_output,
                        std::span<T> grad_input, std::span<T> grad_weight,
                        std::span<T> grad_bias) {
    for (auto& v : grad_input) v = T{0};
    for (auto& v : grad_weight) v = T{0};
    for (auto& v : grad_bias) v = T{0};
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t oy = 0; oy < g.out_h; ++oy)
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    const T go = grad_output[((n * g.in_channels + c) * g.out_h + oy) * g.out_w + ox];
                    if (!grad_bias.empty()) grad_bias[c] += go;
                    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
                        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                            std::size_t iy = 0;
                            std::size_t ix = 0;
                            if (!source_index(oy, ky, g.stride, g.pad_top, g.in_h, iy) ||
                                !source_index(ox, kx, g.stride, g.pad_left, g.in_w, ix))
                                continue;
                            const std::size_t wi = (c * g.kernel_h + ky) * g.kernel_w + kx;
                            const std::size_t ii = ((n * g.in_channels + c) * g.in_h + iy) * g.in_w + ix;
                            grad_weight[wi] += go * input[ii];
                            if (!grad_input.empty()) grad_input[ii] += go * weight[wi];
                        }
                }
}

template <class T>
void batchnorm_forward_train(std::size_t n, std::size_t c, std::size_t plane,
                             std::span<const T> input, std::span<const T> gamma,
                             std::span<const T> beta, T eps, std::span<T> output,
                             std::span<T> mean, std::span<T> inv_std, std::span<const T> slope) {
    const T count = static_cast<T>(n * plane);
    for (std::size_t ch = 0; ch < c; ++ch) {
        T sum = 0;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t p = 0; p < plane; ++p) sum += input[(b * c + ch) * plane + p];
        const T mu = sum / count;
        T sq = 0;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t p = 0; p < plane; ++p) {
                const T d = input[(b * c + ch) * plane + p] - mu;
                sq += d * d;
            }
        const T istd = T{1} / std::sqrt(sq / count + eps);
        mean[ch] = mu;
        inv_std[ch] = istd;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t i = (b * c + ch) * plane + p;
                output[i] = gamma[ch] * (input[i] - mu) * istd + beta[ch];
            }
    }
    if (!slope.empty()) prelu_forward<T>(n, c, plane, output, slope, output);
}

template <class T>
void batchnorm_forward_eval(std::size_t n, std::size_t c, std::size_t plane,
                            std::span<const T> input, std::span<const T> gamma,
                            std::span<const T> beta, std::span<const T> running_mean,
                            std::span<const T> running_var, T eps, std::span<T> output,
                            std::span<const T> slope) {
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t i = (b * c + ch) * plane + p;
                output[i] = gamma[ch] * (input[i] - running_mean[ch]) /
                                std::sqrt(running_var[ch] + eps) +
                            beta[ch];
            }
    if (!slope.empty()) prelu_forward<T>(n, c, plane, output, slope, output);
}

template <class T>
void batchnorm_backward(std::size_t n, std::size_t c, std::size_t plane, std::span<const T> input,
                        std::span<const T> mean, std::span<const T> inv_std,
                        std::span<const T> gamma, std::span<const T> grad_output,
                        std::span<T> grad_input, std::span<T> grad_gamma,
                        std::span<T> grad_beta) {
    const T count = static_cast<T>(n * plane);
    for (std::size_t ch = 0; ch < c; ++ch) {
        T dgamma = 0;
        T dbeta = 0;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t i = (b * c + ch) * plane + p;
                const T xhat = (input[i] - mean[ch]) * inv_std[ch];
                dgamma += grad_output[i] * xhat;
                dbeta += grad_output[i];
            }
        grad_gamma[ch] = dgamma;
        grad_beta[ch] = dbeta;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t i = (b * c + ch) * plane + p;
                const T xhat = (input[i] - mean[ch]) * inv_std[ch];
                grad_input[i] = gamma[ch] * inv_std[ch] / count *
                                (count * grad_output[i] - dbeta - xhat * dgamma);
            }
    }
}

template <class T>
void prelu_forward(std::size_t n, std::size_t c, std::size_t plane, std::span<const T> input,
                   std::span<const T> slope, std::span<T> output) {
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t i = (b * c + ch) * plane + p;
                output[i] = input[i] > T{0} ? input[i] : slope[ch] * input[i];
            }
}

template <class T>
void prelu_backward(std::size_t n, std::size_t c, std::size_t plane, std::span<const T> input,
                    std::span<const T> slope, std::span<const T> grad_output,
                    std::span<T> grad_input, std::span<T> grad_slope) {
    for (auto& v : grad_slope) v = T{0};
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t i = (b * c + ch) * plane + p;
                if (input[i] > T{0}) {
                    grad_input[i] = grad_output[i];
                } else {
                    grad_input[i] = slope[ch] * grad_output[i];
                    grad_slope[ch] += grad_output[i] * input[i];
                }
            }
}

IFECF_INSTANTIATE_KERNELS(float)
IFECF_INSTANTIATE_KERNELS(double)

}  // namespace serial
}  // namespace ifecf::kernels
