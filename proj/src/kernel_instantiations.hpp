#pragma once

// Explicit instantiations shared by the serial and OpenMP kernel sets; expand
// inside the namespace that defines the templates.

#define IFECF_INSTANTIATE_KERNELS(T)                                                                     \
    template void conv2d_forward<T>(const Conv2dGeometry&, std::span<const T>, std::span<const T>, \
                                    std::span<const T>, std::span<T>);                           \
    template void conv2d_backward<T>(const Conv2dGeometry&, std::span<const T>,                  \
                                     std::span<const T>, std::span<const T>, std::span<T>,       \
                                     std::span<T>, std::span<T>);                                \
    template void depthwise_forward<T>(const Conv2dGeometry&, std::span<const T>,                \
                                       std::span<const T>, std::span<const T>, std::span<T>);    \
    template void depthwise_backward<T>(const Conv2dGeometry&, std::span<const T>,               \
                                        std::span<const T>, std::span<const T>, std::span<T>,    \
                                        std::span<T>, std::span<T>);                             \
    template void batchnorm_forward_train<T>(std::size_t, std::size_t, std::size_t,              \
                                             std::span<const T>, std::span<const T>,             \
                                             std::span<const T>, T, std::span<T>, std::span<T>,  \
                                             std::span<T>, std::span<const T>);                  \
    template void batchnorm_forward_eval<T>(std::size_t, std::size_t, std::size_t,               \
                                            std::span<const T>, std::span<const T>,              \
                                            std::span<const T>, std::span<const T>,              \
                                            std::span<const T>, T, std::span<T>,                 \
                                            std::span<const T>);                                 \
    template void batchnorm_backward<T>(std::size_t, std::size_t, std::size_t,                   \
                                        std::span<const T>, std::span<const T>,                  \
                                        std::span<const T>, std::span<const T>,                  \
                                        std::span<const T>, std::span<T>, std::span<T>,          \
                                        std::span<T>);                                           \
    template void prelu_forward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,    \
                                   std::span<const T>, std::span<T>);                            \
    template void prelu_backward<T>(std::size_t, std::size_t, std::size_t, std::span<const T>,   \
                                    std::span<const T>, std::span<const T>, std::span<T>,        \
                                    std::span<T>);
