#pragma once

// Data-parallel inner kernels of the fusion network.
//
// Two implementations share one interface:
//   ifecf::kernels::serial  -- straight-line loops, one output at a time; the
//                              reference used by tests and the benchmark.
//   ifecf::kernels          -- OpenMP-parallel versions used by the model.
//
// Every parallel reduction has a single owning thread and a fixed summation
// order, so results do not depend on the thread count.
//
// Layouts are row-major NCHW. Depthwise weights are C x kh x kw.

#include <cstddef>
#include <span>

namespace ifecf::kernels {

struct Conv2dGeometry {
    std::size_t batch = 1;
    std::size_t in_channels = 1;
    std::size_t in_h = 1;
    std::size_t in_w = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t pad_top = 0;
    std::size_t pad_left = 0;
    std::size_t out_h = 1;
    std::size_t out_w = 1;

    std::size_t in_plane() const noexcept { return in_h * in_w; }
    std::size_t out_plane() const noexcept { return out_h * out_w; }
    std::size_t input_size() const noexcept { return batch * in_channels * in_plane(); }
    std::size_t output_size() const noexcept { return batch * out_channels * out_plane(); }
    std::size_t kernel_area() const noexcept { return kernel_h * kernel_w; }
};

// Zero padding with output = ceil(in / stride); leftover padding goes to the
// bottom/right edge.
Conv2dGeometry same_ceil_geometry(std::size_t batch, std::size_t in_channels, std::size_t in_h,
                                  std::size_t in_w, std::size_t out_channels, std::size_t kernel_h,
                                  std::size_t kernel_w, std::size_t stride);

// No padding: output = (in - k) / stride + 1.
Conv2dGeometry valid_geometry(std::size_t batch, std::size_t in_channels, std::size_t in_h,
                              std::size_t in_w, std::size_t out_channels, std::size_t kernel_h,
                              std::size_t kernel_w, std::size_t stride);

template <class T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> input,
                    std::span<const T> weight, std::span<const T> bias, std::span<T> output);
// grad_input may be empty to skip it. Weight/bias grads are overwritten.
template <class T>
void conv2d_backward(const Conv2dGeometry& g, std::span<const T> input,
                     std::span<const T> weight, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias);
template <class T>
void depthwise_forward(const Conv2dGeometry& g, std::span<const T> input,
                       std::span<const T> weight, std::span<const T> bias,
                       std::span<T> output);
template <class T>
void depthwise_backward(const Conv2dGeometry& g, std::span<const T> input,
                        std::span<const T> weight, std::span<const T> grad_output,
                        std::span<T> grad_input, std::span<T> grad_weight,
                        std::span<T> grad_bias);
// Normalizes with batch statistics over (N, H, W); writes mean and 1/sqrt(var+eps).
// A non-empty `slope` applies PReLU to the normalized values in the same pass.
template <class T>
void batchnorm_forward_train(std::size_t n, std::size_t c, std::size_t plane,
                             std::span<const T> input, std::span<const T> gamma,
                             std::span<const T> beta, T eps, std::span<T> output,
                             std::span<T> mean, std::span<T> inv_std,
                             std::span<const T> slope = {});
template <class T>
void batchnorm_forward_eval(std::size_t n, std::size_t c, std::size_t plane,
                            std::span<const T> input, std::span<const T> gamma,
                            std::span<const T> beta, std::span<const T> running_mean,
                            std::span<const T> running_var, T eps, std::span<T> output,
                            std::span<const T> slope = {});
// Backward of the train-mode transform given the saved mean/inv_std.
template <class T>
void batchnorm_backward(std::size_t n, std::size_t c, std::size_t plane,
                        std::span<const T> input, std::span<const T> mean,
                        std::span<const T> inv_std, std::span<const T> gamma,
                        std::span<const T> grad_output, std::span<T> grad_input,
                        std::span<T> grad_gamma, std::span<T> grad_beta);
template <class T>
void prelu_forward(std::size_t n, std::size_t c, std::size_t plane,
                   std::span<const T> input, std::span<const T> slope, std::span<T> output);
template <class T>
void prelu_backward(std::size_t n, std::size_t c, std::size_t plane,
                    std::span<const T> input, std::span<const T> slope,
                    std::span<const T> grad_output, std::span<T> grad_input,
                    std::span<T> grad_slope);

namespace serial {

template <class T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> input,
                    std::span<const T> weight, std::span<const T> bias, std::span<T> output);
template <class T>
void conv2d_backward(const Conv2dGeometry& g, std::span<const T> input,
                     std::span<const T> weight, std::span<const T> grad_output,
                     std::span<T> grad_input, std::span<T> grad_weight,
                     std::span<T> grad_bias);
template <class T>
void depthwise_forward(const Conv2dGeometry& g, std::span<const T> input,
                       std::span<const T> weight, std::span<const T> bias,
                       std::span<T> output);
template <class T>
void depthwise_backward(const Conv2dGeometry& g, std::span<const T> input,
                        std::span<const T> weight, std::span<const T> grad_output,
                        std::span<T> grad_input, std::span<T> grad_weight,
                        std::span<T> grad_bias);
template <class T>
void batchnorm_forward_train(std::size_t n, std::size_t c, std::size_t plane,
                             std::span<const T> input, std::span<const T> gamma,
                             std::span<const T> beta, T eps, std::span<T> output,
                             std::span<T> mean, std::span<T> inv_std,
                             std::span<const T> slope = {});
template <class T>
void batchnorm_forward_eval(std::size_t n, std::size_t c, std::size_t plane,
                            std::span<const T> input, std::span<const T> gamma,
                            std::span<const T> beta, std::span<const T> running_mean,
                            std::span<const T> running_var, T eps, std::span<T> output,
                            std::span<const T> slope = {});
template <class T>
void batchnorm_backward(std::size_t n, std::size_t c, std::size_t plane,
                        std::span<const T> input, std::span<const T> mean,
                        std::span<const T> inv_std, std::span<const T> gamma,
                        std::span<const T> grad_output, std::span<T> grad_input,
                        std::span<T> grad_gamma, std::span<T> grad_beta);
template <class T>
void prelu_forward(std::size_t n, std::size_t c, std::size_t plane,
                   std::span<const T> input, std::span<const T> slope, std::span<T> output);
template <class T>
void prelu_backward(std::size_t n, std::size_t c, std::size_t plane,
                    std::span<const T> input, std::span<const T> slope,
                    std::span<const T> grad_output, std::span<T> grad_input,
                    std::span<T> grad_slope);

}  // namespace serial

}  // namespace ifecf::kernels
