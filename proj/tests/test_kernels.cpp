#include <doctest.h>

#include <cmath>

#include "ifecf/kernels.hpp"
#include "support.hpp"

using namespace ifecf;
using ifecf::testing::Gen;
namespace k = ifecf::kernels;

namespace {

k::Conv2dGeometry random_geometry(Gen& gen, bool depthwise) {
    const std::size_t n = gen.size(1, 3), ci = gen.size(1, 13);
    const std::size_t co = depthwise ? ci : gen.size(1, 60);
    const std::size_t h = gen.size(1, 9), w = gen.size(1, 17);
    const std::size_t kh = gen.size(1, std::min<std::size_t>(3, h)), kw = gen.size(1, std::min<std::size_t>(3, w));
    const std::size_t stride = gen.size(1, 2);
    return gen.coin() ? k::same_ceil_geometry(n, ci, h, w, co, kh, kw, stride)
                      : k::valid_geometry(n, ci, h, w, co, kh, kw, stride);
}

// Direct cross-correlation, reading input through explicit padding offsets.
Tensor<double> conv_oracle(const k::Conv2dGeometry& g, const Tensor<double>& x, const Tensor<double>& w,
                           const Tensor<double>& b, bool depthwise) {
    Tensor<double> y({g.output_size()});
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t oy = 0; oy < g.out_h; ++oy)
                for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                    double s = b.empty() ? 0.0 : b[co];
                    const std::size_t c_lo = depthwise ? co : 0, c_hi = depthwise ? co + 1 : g.in_channels;
                    for (std::size_t ci = c_lo; ci < c_hi; ++ci)
                        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
                            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad_top);
                                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad_left);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) || ix >= static_cast<long>(g.in_w)) continue;
                                const double xv = x[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix];
                                const double wv = depthwise ? w[(co * g.kernel_h + ky) * g.kernel_w + kx]
                                                            : w[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx];
                                s += xv * wv;
                            }
                    y[((n * g.out_channels + co) * g.out_h + oy) * g.out_w + ox] = s;
                }
    return y;
}

struct ConvGrads {
    Tensor<double> input, weight, bias;
};

template <bool Parallel>
ConvGrads conv_backward(const k::Conv2dGeometry& g, const Tensor<double>& x, const Tensor<double>& w,
                        const Tensor<double>& go, bool depthwise) {
    ConvGrads r{Tensor<double>({g.input_size()}), Tensor<double>(w.shape()), Tensor<double>({g.out_channels})};
    if (depthwise) {
        if constexpr (Parallel) k::depthwise_backward<double>(g, x.span(), w.span(), go.span(), r.input.span(), r.weight.span(), r.bias.span());
        else k::serial::depthwise_backward<double>(g, x.span(), w.span(), go.span(), r.input.span(), r.weight.span(), r.bias.span());
    } else {
        if constexpr (Parallel) k::conv2d_backward<double>(g, x.span(), w.span(), go.span(), r.input.span(), r.weight.span(), r.bias.span());
        else k::serial::conv2d_backward<double>(g, x.span(), w.span(), go.span(), r.input.span(), r.weight.span(), r.bias.span());
    }
    return r;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("same-ceil geometry rounds up and valid geometry does not pad") {
    auto g = k::same_ceil_geometry(1, 4, 28, 192, 64, 3, 3, 2);
    CHECK(g.out_h == 14);
    CHECK(g.out_w == 96);
    g = k::same_ceil_geometry(1, 64, 7, 48, 128, 3, 3, 2);
    CHECK(g.out_h == 4);
    CHECK(g.out_w == 24);
    g = k::valid_geometry(1, 512, 2, 12, 512, 2, 12, 1);
    CHECK(g.out_h == 1);
    CHECK(g.out_w == 1);
    CHECK(g.pad_top == 0);
}

TEST_CASE("conv and depthwise forward match the direct oracle, serial and parallel") {
    ifecf::testing::for_all(101, 60, [](Gen& gen, std::size_t c) {
        const bool dw = c % 2 == 1;
        const auto g = random_geometry(gen, dw);
        const auto x = gen.tensor({g.input_size()});
        const auto w = dw ? gen.tensor({g.out_channels * g.kernel_area()})
                          : gen.tensor({g.out_channels * g.in_channels * g.kernel_area()});
        const auto b = gen.tensor({g.out_channels});
        Tensor<double> ys({g.output_size()}), yp({g.output_size()});
        if (dw) {
            k::serial::depthwise_forward<double>(g, x.span(), w.span(), b.span(), ys.span());
            k::depthwise_forward<double>(g, x.span(), w.span(), b.span(), yp.span());
        } else {
            k::serial::conv2d_forward<double>(g, x.span(), w.span(), b.span(), ys.span());
            k::conv2d_forward<double>(g, x.span(), w.span(), b.span(), yp.span());
        }
        const auto ref = conv_oracle(g, x, w, b, dw);
        CHECK(ifecf::testing::max_abs_diff(ys, ref) < 1e-12);
        CHECK(ifecf::testing::max_abs_diff(yp, ref) < 1e-12);
    });
}

TEST_CASE("conv backward: parallel equals serial, serial equals central differences") {
    ifecf::testing::for_all(202, 30, [](Gen& gen, std::size_t c) {
        const bool dw = c % 2 == 1;
        const auto g = random_geometry(gen, dw);
        const auto x = gen.tensor({g.input_size()});
        const auto w = dw ? gen.tensor({g.out_channels * g.kernel_area()})
                          : gen.tensor({g.out_channels * g.in_channels * g.kernel_area()});
        const auto b = gen.tensor({g.out_channels});
        const auto go = gen.tensor({g.output_size()});
        const auto s = conv_backward<false>(g, x, w, go, dw);
        const auto p = conv_backward<true>(g, x, w, go, dw);
        CHECK(ifecf::testing::max_abs_diff(s.input, p.input) < 1e-11);
        CHECK(ifecf::testing::max_abs_diff(s.weight, p.weight) < 1e-11);
        CHECK(ifecf::testing::max_abs_diff(s.bias, p.bias) < 1e-11);

        // The loss <go, conv(x)> is linear, so central differences are exact up to rounding.
        auto loss = [&](const Tensor<double>& xx, const Tensor<double>& ww) {
            const auto y = conv_oracle(g, xx, ww, b, dw);
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * go[i];
            return acc;
        };
        for (int probe = 0; probe < 3; ++probe) {
            const std::size_t i = gen.size(0, x.size() - 1), j = gen.size(0, w.size() - 1);
            auto xp = x, xm = x, wp = w, wm = w;
            xp[i] += 1e-4;
            xm[i] -= 1e-4;
            wp[j] += 1e-4;
            wm[j] -= 1e-4;
            CHECK(s.input[i] == doctest::Approx((loss(xp, w) - loss(xm, w)) / 2e-4).epsilon(1e-7));
            CHECK(s.weight[j] == doctest::Approx((loss(x, wp) - loss(x, wm)) / 2e-4).epsilon(1e-7));
        }
    });
}

TEST_CASE("float kernels agree between serial and parallel to rounding") {
    Gen gen(7);
    const auto g = k::same_ceil_geometry(3, 64, 7, 48, 128, 1, 1, 1);
    const auto x = gen.tensor<float>({g.input_size()});
    const auto w = gen.tensor<float>({128 * 64});
    const auto b = gen.tensor<float>({128});
    Tensor<float> ys({g.output_size()}), yp({g.output_size()});
    k::serial::conv2d_forward<float>(g, x.span(), w.span(), b.span(), ys.span());
    k::conv2d_forward<float>(g, x.span(), w.span(), b.span(), yp.span());
    CHECK(ifecf::testing::max_abs_diff(ys, yp) < 1e-4);
}

TEST_CASE("small forced convolution cases") {
    auto g = k::same_ceil_geometry(1, 1, 1, 1, 1, 1, 1, 1);
    std::vector<double> x{3.0}, w{2.0}, b{1.0}, y(1);
    k::conv2d_forward<double>(g, x, w, b, y);
    CHECK(y[0] == 7.0);

    Gen gen(9);
    const auto img = gen.tensor({1 * 5 * 6});
    g = k::same_ceil_geometry(1, 1, 5, 6, 1, 3, 3, 1);
    std::vector<double> center(9, 0.0), none(1, 0.0), out(30);
    center[4] = 1.0;
    k::conv2d_forward<double>(g, img.span(), center, none, out);
    for (std::size_t i = 0; i < 30; ++i) CHECK(out[i] == img[i]);

    g = k::valid_geometry(1, 2, 3, 3, 2, 2, 2, 1);
    std::vector<double> cst(18, 1.5), ones(8, 1.0), zero(2, 0.0), o4(8);
    k::depthwise_forward<double>(g, cst, ones, zero, o4);
    for (double v : o4) CHECK(v == 6.0);

    g = k::valid_geometry(2, 3, 2, 12, 3, 2, 12, 1);
    const auto gx = gen.tensor({2 * 3 * 24}), gw = gen.tensor({3 * 24});
    std::vector<double> gdc(6), no_bias(3, 0.0);
    k::depthwise_forward<double>(g, gx.span(), gw.span(), no_bias, gdc);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 3; ++c) {
            double s = 0.0;
            for (std::size_t p = 0; p < 24; ++p) s += gx[(n * 3 + c) * 24 + p] * gw[c * 24 + p];
            CHECK(gdc[n * 3 + c] == doctest::Approx(s).epsilon(1e-12));
        }
}

TEST_CASE("batch norm and PReLU: serial equals parallel, backward equals differences") {
    ifecf::testing::for_all(303, 10, [](Gen& gen, std::size_t) {
        const std::size_t n = gen.size(2, 4), c = gen.size(1, 5), plane = gen.size(1, 7);
        const auto x = gen.tensor({n * c * plane}, 2.0);
        const auto gamma = gen.tensor({c}), beta = gen.tensor({c}), go = gen.tensor({n * c * plane});
        const double eps = 1e-5;
        Tensor<double> ys({x.size()}), yp({x.size()}), ms({c}), mp({c}), is({c}), ip({c});
        k::serial::batchnorm_forward_train<double>(n, c, plane, x.span(), gamma.span(), beta.span(), eps, ys.span(), ms.span(), is.span());
        k::batchnorm_forward_train<double>(n, c, plane, x.span(), gamma.span(), beta.span(), eps, yp.span(), mp.span(), ip.span());
        CHECK(ifecf::testing::max_abs_diff(ys, yp) < 1e-12);

        Tensor<double> gi({x.size()}), gg({c}), gb({c});
        k::batchnorm_backward<double>(n, c, plane, x.span(), mp.span(), ip.span(), gamma.span(), go.span(), gi.span(), gg.span(), gb.span());
        auto loss = [&](const Tensor<double>& xx, const Tensor<double>& gm) {
            Tensor<double> y({xx.size()}), m({c}), s({c});
            k::serial::batchnorm_forward_train<double>(n, c, plane, xx.span(), gm.span(), beta.span(), eps, y.span(), m.span(), s.span());
            double acc = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * go[i];
            return acc;
        };
        for (std::size_t i = 0; i < x.size(); i += 3) {
            auto p = x, m = x;
            p[i] += 1e-6;
            m[i] -= 1e-6;
            CHECK(gi[i] == doctest::Approx((loss(p, gamma) - loss(m, gamma)) / 2e-6).epsilon(1e-5));
        }
        for (std::size_t j = 0; j < c; ++j) {
            auto p = gamma, m = gamma;
            p[j] += 1e-6;
            m[j] -= 1e-6;
            CHECK(gg[j] == doctest::Approx((loss(x, p) - loss(x, m)) / 2e-6).epsilon(1e-5));
        }

        const auto slope = gen.tensor({c}, 0.3);
        Tensor<double> ps({x.size()}), pp({x.size()}), gis({x.size()}), gip({x.size()}), gss({c}), gsp({c});
        k::serial::prelu_forward<double>(n, c, plane, x.span(), slope.span(), ps.span());
        k::prelu_forward<double>(n, c, plane, x.span(), slope.span(), pp.span());
        CHECK(ps == pp);
        k::serial::prelu_backward<double>(n, c, plane, x.span(), slope.span(), go.span(), gis.span(), gss.span());
        k::prelu_backward<double>(n, c, plane, x.span(), slope.span(), go.span(), gip.span(), gsp.span());
        CHECK(gis == gip);
        CHECK(ifecf::testing::max_abs_diff(gss, gsp) < 1e-12);
    });
}

}  // TEST_SUITE
