#pragma once

// Multi-channel fusion: stack the d x T feature maps as image channels and embed
// them with a MobileFaceNet stack.
//
//   input        operator              ef   c    n  stride
//   C x 28x192   conv3x3               -    64   1  2
//   64x 14x96    depthwise conv3x3     -    64   1  1
//   64x 14x96    bottleneck            2    64   5  2
//   64x 7x48     bottleneck            4    128  1  2
//   128x 4x24    bottleneck            2    128  6  1
//   128x 4x24    bottleneck            4    128  1  2
//   128x 2x12    bottleneck            2    128  2  1
//   128x 2x12    conv1x1               -    512  1  1
//   512x 2x12    linear GDC            -    512  1  1   (kernel = full 2x12 extent)
//   512x 1x1     linear conv1x1        -    128  1  1
//
// Every conv is followed by batch norm (optional) and, unless marked linear,
// a per-channel PReLU. Padding is zero "same-ceil": out = ceil(in / stride).

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ifecf/kernels.hpp"
#include "ifecf/rng.hpp"
#include "ifecf/tensor.hpp"

namespace ifecf {

enum class Mode { train, eval };

enum class Padding { same_ceil, valid };

// Accepts C x H x W or N x C x H x W input; weight C_out x C_in x k x k.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, Padding padding);

// Weight C x kh x kw.
template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, std::size_t stride, Padding padding);

template <class T>
struct FusedFeature {
    Tensor<T> data;  // C x d x T
    std::vector<std::string> channel_names;
};

template <class T>
FusedFeature<T> concat_channels(const std::vector<std::pair<Tensor<T>, std::string>>& features);

// ---------------------------------------------------------------------------
// Conv + BN + PReLU unit

struct ConvUnitSpec {
    bool depthwise = false;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    Padding padding = Padding::same_ceil;
    bool prelu = true;
};

template <class T>
struct BatchNormParams {
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;
};

template <class T>
struct ConvUnit {
    ConvUnitSpec spec;
    Tensor<T> weight;
    Tensor<T> bias;
    std::optional<BatchNormParams<T>> bn;
    Tensor<T> slope;  // empty for linear units

    static ConvUnit create(const ConvUnitSpec& spec, bool batchnorm);
    void init(SplitMix64& rng);

    kernels::Conv2dGeometry geometry(std::size_t batch, std::size_t h, std::size_t w) const;
};

template <class T>
struct ConvUnitCache {
    Tensor<T> pre_bn;
    Tensor<T> output;
    Tensor<T> mean, inv_std;  // batch statistics (train mode)
    kernels::Conv2dGeometry geom;
};

struct BatchNormSettings {
    double eps = 1e-5;
    double momentum = 0.1;
};

// Returns a reference to cache.output.
template <class T>
const Tensor<T>& conv_unit_forward(const ConvUnit<T>& unit, const Tensor<T>& input, Mode mode,
                                   ConvUnitCache<T>& cache, const BatchNormSettings& bn);

// Accumulates parameter gradients into `grads` (same layout as `unit`).
// Returns the gradient with respect to `input`.
template <class T>
Tensor<T> conv_unit_backward(const ConvUnit<T>& unit, const Tensor<T>& input,
                             const ConvUnitCache<T>& cache, const Tensor<T>& grad_output, Mode mode,
                             ConvUnit<T>& grads, const BatchNormSettings& bn,
                             bool need_input_grad = true);

// ---------------------------------------------------------------------------
// Inverted residual bottleneck: 1x1 expand (BN+PReLU), 3x3 depthwise with the
// block stride (BN+PReLU), 1x1 linear projection (BN). Identity skip when
// stride == 1 and channel counts match.

template <class T>
struct Bottleneck {
    ConvUnit<T> expand, depthwise, project;
    bool residual = false;

    static Bottleneck create(std::size_t in_channels, std::size_t expansion,
                             std::size_t out_channels, std::size_t stride, bool batchnorm);
};

template <class T>
struct BottleneckCache {
    ConvUnitCache<T> expand, depthwise, project;
    Tensor<T> output;
};

// Returns a reference into `cache`.
template <class T>
const Tensor<T>& bottleneck_forward(const Bottleneck<T>& block, const Tensor<T>& input, Mode mode,
                             BottleneckCache<T>& cache, const BatchNormSettings& bn);

template <class T>
Tensor<T> bottleneck_backward(const Bottleneck<T>& block, const Tensor<T>& input,
                              const BottleneckCache<T>& cache, const Tensor<T>& grad_output,
                              Mode mode, Bottleneck<T>& grads, const BatchNormSettings& bn);

// ---------------------------------------------------------------------------
// MobileFaceNet

struct BottleneckGroup {
    std::size_t expansion;
    std::size_t out_channels;
    std::size_t repeats;
    std::size_t stride;
};

struct MfnConfig {
    std::size_t in_channels = 4;
    std::size_t height = 28;
    std::size_t width = 192;
    std::size_t stem_channels = 64;
    std::vector<BottleneckGroup> groups = {
        {2, 64, 5, 2}, {4, 128, 1, 2}, {2, 128, 6, 1}, {4, 128, 1, 2}, {2, 128, 2, 1}};
    std::size_t expand_channels = 512;
    std::size_t embedding_dim = 128;
    bool batchnorm = true;
    BatchNormSettings bn;
};

template <class T>
struct MfnCache {
    ConvUnitCache<T> stem, dw, conv_expand, gdc, linear;
    std::vector<BottleneckCache<T>> blocks;
};

template <class T>
class MobileFaceNet {
public:
    MobileFaceNet() = default;
    explicit MobileFaceNet(const MfnConfig& cfg);

    // Fan-in uniform conv weights, zero biases, PReLU slopes 0.25, BN identity.
    void init(SplitMix64& rng);
    MobileFaceNet zeros_like() const;

    // x: N x C x H x W. Returns N x embedding_dim. In train mode BN uses batch
    // statistics (recorded in cache); running stats are updated separately.
    // `shape_trace` receives the C x H x W output shape of each table row.
    Tensor<T> forward(const Tensor<T>& x, Mode mode, MfnCache<T>* cache = nullptr,
                      std::vector<Shape>* shape_trace = nullptr) const;

    // Accumulates into grads; returns dL/dx.
    Tensor<T> backward(const Tensor<T>& x, const MfnCache<T>& cache, const Tensor<T>& grad_output,
                       Mode mode, MobileFaceNet& grads) const;

    // Folds the batch statistics of a train-mode pass into the running stats.
    void update_running_stats(const MfnCache<T>& cache, std::size_t batch);

    const MfnConfig& config() const noexcept { return cfg_; }

    template <class F>
    void visit_params(F&& f) {
        visit_units([&](const std::string& name, ConvUnit<T>& u) { visit_unit_params(name, u, f); });
    }
    template <class F>
    void visit_params(F&& f) const {
        const_cast<MobileFaceNet*>(this)->visit_params(
            [&](const std::string& name, Tensor<T>& t) { f(name, static_cast<const Tensor<T>&>(t)); });
    }
    template <class F>
    void visit_buffers(F&& f) {
        visit_units([&](const std::string& name, ConvUnit<T>& u) {
            if (u.bn) {
                f(name + ".bn.running_mean", u.bn->running_mean);
                f(name + ".bn.running_var", u.bn->running_var);
            }
        });
    }

    ConvUnit<T> stem, dw, conv_expand, gdc, linear;
    std::vector<Bottleneck<T>> blocks;

private:
    template <class F>
    void visit_units(F&& f) {
        f("stem", stem);
        f("dw", dw);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i);
            f(p + ".expand", blocks[i].expand);
            f(p + ".depthwise", blocks[i].depthwise);
            f(p + ".project", blocks[i].project);
        }
        f("conv1x1", conv_expand);
        f("gdc", gdc);
        f("linear", linear);
    }
    template <class F>
    static void visit_unit_params(const std::string& name, ConvUnit<T>& u, F& f) {
        f(name + ".weight", u.weight);
        f(name + ".bias", u.bias);
        if (u.bn) {
            f(name + ".bn.gamma", u.bn->gamma);
            f(name + ".bn.beta", u.bn->beta);
        }
        if (!u.slope.empty()) f(name + ".slope", u.slope);
    }

    MfnConfig cfg_;
};

}  // namespace ifecf
