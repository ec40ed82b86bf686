#include "ifecf/fusion.hpp"

#include <cmath>
#include <set>
#include <string>

namespace ifecf {
namespace {

// Views C x H x W input as a batch of one.
template <class T>
Tensor<T> as_batch(const Tensor<T>& input, bool& squeezed) {
    squeezed = input.rank() == 3;
    if (squeezed) return input.reshaped({1, input.dim(0), input.dim(1), input.dim(2)});
    if (input.rank() != 4) throw InputError("conv: expected C x H x W or N x C x H x W input");
    return input;
}

kernels::Conv2dGeometry make_geometry(Padding padding, std::size_t n, std::size_t c_in,
                                      std::size_t h, std::size_t w, std::size_t c_out,
                                      std::size_t kh, std::size_t kw, std::size_t stride) {
    return padding == Padding::same_ceil
               ? kernels::same_ceil_geometry(n, c_in, h, w, c_out, kh, kw, stride)
               : kernels::valid_geometry(n, c_in, h, w, c_out, kh, kw, stride);
}

template <class T>
void add_into(Tensor<T>& acc, const Tensor<T>& v) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

template <class T>
void check_finite(const Tensor<T>& t, const std::string& layer) {
    if (!t.all_finite()) throw NumericError("mobilefacenet: non-finite activation after " + layer);
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, Padding padding) {
    bool squeezed = false;
    const Tensor<T> x = as_batch(input, squeezed);
    if (weight.rank() != 4 || weight.dim(1) != x.dim(1)) {
        throw InputError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
    }
    if (!bias.empty() && bias.shape() != Shape{weight.dim(0)}) {
        throw InputError("conv2d: bias must have one entry per output channel");
    }
    const auto g = make_geometry(padding, x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0),
                                 weight.dim(2), weight.dim(3), stride);
    Tensor<T> out({g.batch, g.out_channels, g.out_h, g.out_w});
    kernels::conv2d_forward<T>(g, x.span(), weight.span(), bias.span(), out.span());
    return squeezed ? out.reshaped({g.out_channels, g.out_h, g.out_w}) : out;
}

template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, std::size_t stride, Padding padding) {
    bool squeezed = false;
    const Tensor<T> x = as_batch(input, squeezed);
    if (weight.rank() != 3 || weight.dim(0) != x.dim(1)) {
        throw InputError("depthwise_conv2d: weight " + shape_str(weight.shape()) +
                         " incompatible with input " + shape_str(input.shape()));
    }
    if (!bias.empty() && bias.shape() != Shape{weight.dim(0)}) {
        throw InputError("depthwise_conv2d: bias must have one entry per channel");
    }
    const auto g = make_geometry(padding, x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(1),
                                 weight.dim(1), weight.dim(2), stride);
    Tensor<T> out({g.batch, g.out_channels, g.out_h, g.out_w});
    kernels::depthwise_forward<T>(g, x.span(), weight.span(), bias.span(), out.span());
    return squeezed ? out.reshaped({g.out_channels, g.out_h, g.out_w}) : out;
}

template <class T>
FusedFeature<T> concat_channels(const std::vector<std::pair<Tensor<T>, std::string>>& features) {
    if (features.size() != 2 && features.size() != 4) {
        throw InputError("concat_channels: expected 2 or 4 feature maps, got " +
                         std::to_string(features.size()));
    }
    const Shape& shape = features.front().first.shape();
    if (shape.size() != 2) throw InputError("concat_channels: features must be d x T matrices");
    std::set<std::string> seen;
    FusedFeature<T> fused;
    fused.data = Tensor<T>({features.size(), shape[0], shape[1]});
    const std::size_t plane = shape[0] * shape[1];
    for (std::size_t c = 0; c < features.size(); ++c) {
        const auto& [map, name] = features[c];
        if (map.shape() != shape) {
            throw InputError("concat_channels: '" + name + "' has shape " + shape_str(map.shape()) +
                             ", expected " + shape_str(shape));
        }
        if (!seen.insert(name).second) throw InputError("concat_channels: duplicate name '" + name + "'");
        std::copy(map.values().begin(), map.values().end(), fused.data.data() + c * plane);
        fused.channel_names.push_back(name);
    }
    return fused;
}

// ---------------------------------------------------------------------------

template <class T>
ConvUnit<T> ConvUnit<T>::create(const ConvUnitSpec& spec, bool batchnorm) {
    ConvUnit u;
    u.spec = spec;
    if (spec.depthwise) {
        if (spec.in_channels != spec.out_channels) {
            throw ConfigError("depthwise unit needs equal in/out channels");
        }
        u.weight = Tensor<T>({spec.out_channels, spec.kernel_h, spec.kernel_w});
    } else {
        u.weight = Tensor<T>({spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w});
    }
    u.bias = Tensor<T>({spec.out_channels});
    if (batchnorm) {
        u.bn = BatchNormParams<T>{Tensor<T>({spec.out_channels}, T{1}), Tensor<T>({spec.out_channels}),
                                  Tensor<T>({spec.out_channels}), Tensor<T>({spec.out_channels}, T{1})};
    }
    if (spec.prelu) u.slope = Tensor<T>({spec.out_channels}, T{0.25});
    return u;
}

template <class T>
void ConvUnit<T>::init(SplitMix64& rng) {
    const std::size_t fan_in =
        (spec.depthwise ? 1 : spec.in_channels) * spec.kernel_h * spec.kernel_w;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : weight.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    bias.set_zero();
    if (bn) {
        bn->gamma.fill(T{1});
        bn->beta.set_zero();
        bn->running_mean.set_zero();
        bn->running_var.fill(T{1});
    }
    if (!slope.empty()) slope.fill(T{0.25});
}

template <class T>
kernels::Conv2dGeometry ConvUnit<T>::geometry(std::size_t batch, std::size_t h,
                                              std::size_t w) const {
    return make_geometry(spec.padding, batch, spec.in_channels, h, w, spec.out_channels,
                         spec.kernel_h, spec.kernel_w, spec.stride);
}

template <class T>
const Tensor<T>& conv_unit_forward(const ConvUnit<T>& unit, const Tensor<T>& input, Mode mode,
                                   ConvUnitCache<T>& cache, const BatchNormSettings& bn) {
    if (input.rank() != 4 || input.dim(1) != unit.spec.in_channels) {
        throw InputError("conv unit: input " + shape_str(input.shape()) + " but unit expects " +
                         std::to_string(unit.spec.in_channels) + " channels");
    }
    const auto g = unit.geometry(input.dim(0), input.dim(2), input.dim(3));
    cache.geom = g;
    cache.pre_bn = Tensor<T>({g.batch, g.out_channels, g.out_h, g.out_w});
    if (unit.spec.depthwise) {
        kernels::depthwise_forward<T>(g, input.span(), unit.weight.span(), unit.bias.span(),
                                      cache.pre_bn.span());
    } else {
        kernels::conv2d_forward<T>(g, input.span(), unit.weight.span(), unit.bias.span(),
                                   cache.pre_bn.span());
    }
    const std::size_t plane = g.out_plane();
    if (unit.bn) {
        cache.output = Tensor<T>(cache.pre_bn.shape());
        if (mode == Mode::train) {
            cache.mean = Tensor<T>({g.out_channels});
            cache.inv_std = Tensor<T>({g.out_channels});
            kernels::batchnorm_forward_train<T>(g.batch, g.out_channels, plane, cache.pre_bn.span(),
                                                unit.bn->gamma.span(), unit.bn->beta.span(),
                                                static_cast<T>(bn.eps), cache.output.span(),
                                                cache.mean.span(), cache.inv_std.span(), unit.slope.span());
        } else {
            kernels::batchnorm_forward_eval<T>(g.batch, g.out_channels, plane, cache.pre_bn.span(),
                                               unit.bn->gamma.span(), unit.bn->beta.span(),
                                               unit.bn->running_mean.span(),
                                               unit.bn->running_var.span(), static_cast<T>(bn.eps),
                                               cache.output.span(), unit.slope.span());
        }
    } else if (!unit.slope.empty()) {
        cache.output = Tensor<T>(cache.pre_bn.shape());
        kernels::prelu_forward<T>(g.batch, g.out_channels, plane, cache.pre_bn.span(),
                                  unit.slope.span(), cache.output.span());
    } else {
        cache.output = cache.pre_bn;
    }
    return cache.output;
}

template <class T>
Tensor<T> conv_unit_backward(const ConvUnit<T>& unit, const Tensor<T>& input,
                             const ConvUnitCache<T>& cache, const Tensor<T>& grad_output, Mode mode,
                             ConvUnit<T>& grads, const BatchNormSettings& bn,
                             bool need_input_grad) {
    const auto& g = cache.geom;
    const std::size_t plane = g.out_plane();
    const std::size_t channels = g.out_channels;
    require_shape(grad_output, cache.pre_bn.shape(), "conv unit grad_output");

    // BN affine coefficients as used in the forward pass.
    std::vector<T> scale(channels, T{1});
    std::vector<T> shift(channels, T{0});
    if (unit.bn) {
        for (std::size_t c = 0; c < channels; ++c) {
            if (mode == Mode::train) {
                scale[c] = unit.bn->gamma[c] * cache.inv_std[c];
                shift[c] = unit.bn->beta[c] - cache.mean[c] * scale[c];
            } else {
                scale[c] = unit.bn->gamma[c] /
                           std::sqrt(unit.bn->running_var[c] + static_cast<T>(bn.eps));
                shift[c] = unit.bn->beta[c] - unit.bn->running_mean[c] * scale[c];
            }
        }
    }

    // PReLU and BN backward fused per channel: one pass for the reductions,
    // one pass writing the gradient at the conv output.
    const bool has_bn = unit.bn.has_value();
    const bool has_prelu = !unit.slope.empty();
    const bool batch_stats = has_bn && mode == Mode::train;
    Tensor<T> grad_pre;
    if (has_bn || has_prelu) grad_pre = Tensor<T>(grad_output.shape());
    const T count = static_cast<T>(g.batch * plane);
    const auto ch_count = static_cast<std::ptrdiff_t>(channels);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ci = 0; ci < ch_count; ++ci) {
        if (!has_bn && !has_prelu) continue;
        const auto c = static_cast<std::size_t>(ci);
        const T sc = scale[c], sh = shift[c];
        const T a = has_prelu ? unit.slope[c] : T{1};
        const T center = !has_bn ? T{0} : batch_stats ? cache.mean[c] : unit.bn->running_mean[c];
        const T istd = !has_bn ? T{1} : batch_stats ? cache.inv_std[c] : sc / unit.bn->gamma[c];
        // Eight running sums per reduction, branch-free; without PReLU the slope is 1.
        T ds_l[8] = {}, dbeta_l[8] = {}, dxhat_l[8] = {};
        for (std::size_t b = 0; b < g.batch; ++b) {
            const std::size_t off = (b * channels + c) * plane;
            const T* x = cache.pre_bn.data() + off;
            const T* go = grad_output.data() + off;
            const auto step = [&](std::size_t j, T xv, T gv) {
                const T z = xv * sc + sh;
                const bool pos = z > T{0};
                const T gz = pos ? gv : a * gv;
                ds_l[j] += pos ? T{0} : gv * z;
                dbeta_l[j] += gz;
                dxhat_l[j] += gz * (xv - center);
            };
            std::size_t i0 = 0;
            for (; i0 + 8 <= plane; i0 += 8)
                for (std::size_t j = 0; j < 8; ++j) step(j, x[i0 + j], go[i0 + j]);
            for (std::size_t j = 0; i0 + j < plane; ++j) step(j, x[i0 + j], go[i0 + j]);
        }
        const auto total = [](const T* l) {
            return ((l[0] + l[1]) + (l[2] + l[3])) + ((l[4] + l[5]) + (l[6] + l[7]));
        };
        const T ds = total(ds_l), dbeta = total(dbeta_l), dxhat = total(dxhat_l);
        const T dgamma = dxhat * istd;
        if (has_prelu) grads.slope[c] += ds;
        if (has_bn) {
            grads.bn->gamma[c] += dgamma;
            grads.bn->beta[c] += dbeta;
        }
        const T k = has_bn ? unit.bn->gamma[c] * istd / count : T{0};
        for (std::size_t b = 0; b < g.batch; ++b) {
            const std::size_t off = (b * channels + c) * plane;
            const T* x = cache.pre_bn.data() + off;
            const T* go = grad_output.data() + off;
            T* gp = grad_pre.data() + off;
            if (batch_stats) {
                for (std::size_t i = 0; i < plane; ++i) {
                    const T gz = x[i] * sc + sh > T{0} ? go[i] : a * go[i];
                    gp[i] = k * (count * gz - dbeta - (x[i] - center) * istd * dgamma);
                }
            } else {
                for (std::size_t i = 0; i < plane; ++i) {
                    const T gz = x[i] * sc + sh > T{0} ? go[i] : a * go[i];
                    gp[i] = gz * sc;
                }
            }
        }
    }
    const Tensor<T>& grad = has_bn || has_prelu ? grad_pre : grad_output;

    Tensor<T> grad_input;
    if (need_input_grad) grad_input = Tensor<T>(input.shape());
    Tensor<T> grad_weight(unit.weight.shape());
    Tensor<T> grad_bias(unit.bias.shape());
    if (unit.spec.depthwise) {
        kernels::depthwise_backward<T>(g, input.span(), unit.weight.span(), grad.span(),
                                       grad_input.span(), grad_weight.span(), grad_bias.span());
    } else {
        kernels::conv2d_backward<T>(g, input.span(), unit.weight.span(), grad.span(),
                                    grad_input.span(), grad_weight.span(), grad_bias.span());
    }
    add_into(grads.weight, grad_weight);
    add_into(grads.bias, grad_bias);
    return grad_input;
}

// ---------------------------------------------------------------------------

template <class T>
Bottleneck<T> Bottleneck<T>::create(std::size_t in_channels, std::size_t expansion,
                                    std::size_t out_channels, std::size_t stride, bool batchnorm) {
    const std::size_t hidden = in_channels * expansion;
    Bottleneck b;
    b.expand = ConvUnit<T>::create({false, in_channels, hidden, 1, 1, 1, Padding::same_ceil, true},
                                   batchnorm);
    b.depthwise = ConvUnit<T>::create({true, hidden, hidden, 3, 3, stride, Padding::same_ceil, true},
                                      batchnorm);
    b.project = ConvUnit<T>::create(
        {false, hidden, out_channels, 1, 1, 1, Padding::same_ceil, false}, batchnorm);
    b.residual = stride == 1 && in_channels == out_channels;
    return b;
}

template <class T>
const Tensor<T>& bottleneck_forward(const Bottleneck<T>& block, const Tensor<T>& input, Mode mode,
                                    BottleneckCache<T>& cache, const BatchNormSettings& bn) {
    const Tensor<T>& e = conv_unit_forward(block.expand, input, mode, cache.expand, bn);
    const Tensor<T>& d = conv_unit_forward(block.depthwise, e, mode, cache.depthwise, bn);
    const Tensor<T>& p = conv_unit_forward(block.project, d, mode, cache.project, bn);
    if (!block.residual) return p;
    cache.output = p;
    add_into(cache.output, input);
    return cache.output;
}

template <class T>
Tensor<T> bottleneck_backward(const Bottleneck<T>& block, const Tensor<T>& input,
                              const BottleneckCache<T>& cache, const Tensor<T>& grad_output,
                              Mode mode, Bottleneck<T>& grads, const BatchNormSettings& bn) {
    Tensor<T> g = conv_unit_backward(block.project, cache.depthwise.output, cache.project,
                                     grad_output, mode, grads.project, bn);
    g = conv_unit_backward(block.depthwise, cache.expand.output, cache.depthwise, g, mode,
                           grads.depthwise, bn);
    g = conv_unit_backward(block.expand, input, cache.expand, g, mode, grads.expand, bn);
    if (block.residual) add_into(g, grad_output);
    return g;
}

// ---------------------------------------------------------------------------

template <class T>
MobileFaceNet<T>::MobileFaceNet(const MfnConfig& cfg) : cfg_(cfg) {
    const bool bn = cfg.batchnorm;
    const auto down = [](std::size_t v, std::size_t s) { return (v + s - 1) / s; };
    stem = ConvUnit<T>::create(
        {false, cfg.in_channels, cfg.stem_channels, 3, 3, 2, Padding::same_ceil, true}, bn);
    std::size_t h = down(cfg.height, 2);
    std::size_t w = down(cfg.width, 2);
    dw = ConvUnit<T>::create(
        {true, cfg.stem_channels, cfg.stem_channels, 3, 3, 1, Padding::same_ceil, true}, bn);
    std::size_t channels = cfg.stem_channels;
    for (const auto& grp : cfg.groups) {
        for (std::size_t r = 0; r < grp.repeats; ++r) {
            const std::size_t stride = r == 0 ? grp.stride : 1;
            blocks.push_back(Bottleneck<T>::create(channels, grp.expansion, grp.out_channels,
                                                   stride, bn));
            channels = grp.out_channels;
            h = down(h, stride);
            w = down(w, stride);
        }
    }
    conv_expand = ConvUnit<T>::create(
        {false, channels, cfg.expand_channels, 1, 1, 1, Padding::same_ceil, true}, bn);
    gdc = ConvUnit<T>::create(
        {true, cfg.expand_channels, cfg.expand_channels, h, w, 1, Padding::valid, false}, bn);
    linear = ConvUnit<T>::create(
        {false, cfg.expand_channels, cfg.embedding_dim, 1, 1, 1, Padding::same_ceil, false}, bn);
}

template <class T>
void MobileFaceNet<T>::init(SplitMix64& rng) {
    stem.init(rng);
    dw.init(rng);
    for (auto& b : blocks) {
        b.expand.init(rng);
        b.depthwise.init(rng);
        b.project.init(rng);
    }
    conv_expand.init(rng);
    gdc.init(rng);
    linear.init(rng);
}

template <class T>
MobileFaceNet<T> MobileFaceNet<T>::zeros_like() const {
    MobileFaceNet z = *this;
    z.visit_params([](const std::string&, Tensor<T>& t) { t.set_zero(); });
    z.visit_buffers([](const std::string&, Tensor<T>& t) { t.set_zero(); });
    return z;
}

template <class T>
Tensor<T> MobileFaceNet<T>::forward(const Tensor<T>& x, Mode mode, MfnCache<T>* cache,
                                    std::vector<Shape>* shape_trace) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.height ||
        x.dim(3) != cfg_.width) {
        throw InputError("mobilefacenet: input " + shape_str(x.shape()) + ", expected N x " +
                         std::to_string(cfg_.in_channels) + " x " + std::to_string(cfg_.height) +
                         " x " + std::to_string(cfg_.width));
    }
    MfnCache<T> local;
    MfnCache<T>& c = cache ? *cache : local;
    c.blocks.resize(blocks.size());
    const auto trace = [&](const Tensor<T>& t, const std::string& layer) {
        check_finite(t, layer);
        if (shape_trace) shape_trace->push_back({t.dim(1), t.dim(2), t.dim(3)});
    };
    if (shape_trace) shape_trace->clear();

    const Tensor<T>* h = &conv_unit_forward(stem, x, mode, c.stem, cfg_.bn);
    trace(*h, "layer 0 (conv3x3)");
    h = &conv_unit_forward(dw, *h, mode, c.dw, cfg_.bn);
    trace(*h, "layer 1 (depthwise conv3x3)");
    std::size_t bi = 0;
    for (std::size_t gi = 0; gi < cfg_.groups.size(); ++gi) {
        for (std::size_t r = 0; r < cfg_.groups[gi].repeats; ++r, ++bi) {
            h = &bottleneck_forward(blocks[bi], *h, mode, c.blocks[bi], cfg_.bn);
        }
        trace(*h, "layer " + std::to_string(gi + 2) + " (bottleneck group)");
    }
    const std::size_t base = cfg_.groups.size() + 2;
    h = &conv_unit_forward(conv_expand, *h, mode, c.conv_expand, cfg_.bn);
    trace(*h, "layer " + std::to_string(base) + " (conv1x1)");
    h = &conv_unit_forward(gdc, *h, mode, c.gdc, cfg_.bn);
    trace(*h, "layer " + std::to_string(base + 1) + " (linear GDC)");
    h = &conv_unit_forward(linear, *h, mode, c.linear, cfg_.bn);
    trace(*h, "layer " + std::to_string(base + 2) + " (linear conv1x1)");
    return h->reshaped({x.dim(0), cfg_.embedding_dim});
}

template <class T>
Tensor<T> MobileFaceNet<T>::backward(const Tensor<T>& x, const MfnCache<T>& cache,
                                     const Tensor<T>& grad_output, Mode mode,
                                     MobileFaceNet& grads) const {
    const auto& bn = cfg_.bn;
    Tensor<T> g = grad_output.reshaped(cache.linear.output.shape());
    g = conv_unit_backward(linear, cache.gdc.output, cache.linear, g, mode, grads.linear, bn);
    g = conv_unit_backward(gdc, cache.conv_expand.output, cache.gdc, g, mode, grads.gdc, bn);
    const auto block_output = [&](std::size_t i) -> const Tensor<T>& {
        return blocks[i].residual ? cache.blocks[i].output : cache.blocks[i].project.output;
    };
    const Tensor<T>& last = blocks.empty() ? cache.dw.output : block_output(blocks.size() - 1);
    g = conv_unit_backward(conv_expand, last, cache.conv_expand, g, mode, grads.conv_expand, bn);
    for (std::size_t i = blocks.size(); i-- > 0;) {
        const Tensor<T>& in = i == 0 ? cache.dw.output : block_output(i - 1);
        g = bottleneck_backward(blocks[i], in, cache.blocks[i], g, mode, grads.blocks[i], bn);
    }
    g = conv_unit_backward(dw, cache.stem.output, cache.dw, g, mode, grads.dw, bn);
    return conv_unit_backward(stem, x, cache.stem, g, mode, grads.stem, bn);
}

template <class T>
void MobileFaceNet<T>::update_running_stats(const MfnCache<T>& cache, std::size_t) {
    const T m = static_cast<T>(cfg_.bn.momentum);
    const T eps = static_cast<T>(cfg_.bn.eps);
    const auto update = [&](ConvUnit<T>& u, const ConvUnitCache<T>& c) {
        if (!u.bn || c.mean.empty()) return;
        const double count = static_cast<double>(c.geom.batch * c.geom.out_plane());
        const double unbias = count > 1 ? count / (count - 1) : 1.0;
        for (std::size_t ch = 0; ch < u.bn->running_mean.size(); ++ch) {
            const T var = T{1} / (c.inv_std[ch] * c.inv_std[ch]) - eps;
            u.bn->running_mean[ch] = (T{1} - m) * u.bn->running_mean[ch] + m * c.mean[ch];
            u.bn->running_var[ch] =
                (T{1} - m) * u.bn->running_var[ch] + m * static_cast<T>(var * unbias);
        }
    };
    update(stem, cache.stem);
    update(dw, cache.dw);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        update(blocks[i].expand, cache.blocks[i].expand);
        update(blocks[i].depthwise, cache.blocks[i].depthwise);
        update(blocks[i].project, cache.blocks[i].project);
    }
    update(conv_expand, cache.conv_expand);
    update(gdc, cache.gdc);
    update(linear, cache.linear);
}

#define IFECF_INSTANTIATE_FUSION(T)                                                              \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                 std::size_t, Padding);                                         \
    template Tensor<T> depthwise_conv2d<T>(const Tensor<T>&, const Tensor<T>&,                  \
                                           const Tensor<T>&, std::size_t, Padding);             \
    template FusedFeature<T> concat_channels<T>(                                                 \
        const std::vector<std::pair<Tensor<T>, std::string>>&);                                 \
    template struct ConvUnit<T>;                                                                 \
    template const Tensor<T>& conv_unit_forward<T>(const ConvUnit<T>&, const Tensor<T>&, Mode,  \
                                                   ConvUnitCache<T>&, const BatchNormSettings&); \
    template Tensor<T> conv_unit_backward<T>(const ConvUnit<T>&, const Tensor<T>&,              \
                                             const ConvUnitCache<T>&, const Tensor<T>&, Mode,   \
                                             ConvUnit<T>&, const BatchNormSettings&, bool);     \
    template struct Bottleneck<T>;                                                               \
    template const Tensor<T>& bottleneck_forward<T>(const Bottleneck<T>&, const Tensor<T>&,     \
                                                    Mode, BottleneckCache<T>&,                  \
                                                    const BatchNormSettings&);                  \
    template Tensor<T> bottleneck_backward<T>(const Bottleneck<T>&, const Tensor<T>&,           \
                                              const BottleneckCache<T>&, const Tensor<T>&,      \
                                              Mode, Bottleneck<T>&, const BatchNormSettings&);  \
    template class MobileFaceNet<T>;

IFECF_INSTANTIATE_FUSION(float)
IFECF_INSTANTIATE_FUSION(double)

}  // namespace ifecf
