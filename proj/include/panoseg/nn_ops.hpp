#pragma once

#include <cmath>

#include "panoseg/tensor.hpp"

namespace panoseg {

/// 2-d cross-correlation of [C_in,H,W] with [C_out,C_in,kh,kw] plus bias.
/// Odd kernels only; H' = floor((H + 2*padding - kh)/stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding) {
    require(input.shape().size() == 3, "conv2d: input must be [C,H,W], got " +
                                           shape_str(input.shape()));
    require(weight.shape().size() == 4, "conv2d: weight must be [Co,Ci,kh,kw], got " +
                                            shape_str(weight.shape()));
    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    require(weight.dim(1) == ci, "conv2d: input has " + std::to_string(ci) +
                                     " channels but weight expects " +
                                     std::to_string(weight.dim(1)) + " (weight " +
                                     shape_str(weight.shape()) + ", input " +
                                     shape_str(input.shape()) + ")");
    require(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel extents must be odd, got " +
                                            shape_str(weight.shape()));
    require(bias.shape() == Shape{co}, "conv2d: bias must be [C_out]");
    require(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (w + 2 * padding - kw) / stride + 1;
    require(oh >= 1 && ow >= 1, "conv2d: kernel larger than padded input");

    Tensor<T> out = Tensor<T>::zeros({co, oh, ow});
    T* po = out.mutable_data();
    const T* pin = input.data();
    const T* pw = weight.data();
    const T* pb = bias.data();

    for (int c = 0; c < co; ++c) {
        T* plane = po + static_cast<size_t>(c) * oh * ow;
        const T bv = pb[c];
        for (int i = 0; i < oh * ow; ++i) plane[i] = bv;
    }
    for (int c = 0; c < co; ++c) {
        for (int ic = 0; ic < ci; ++ic) {
            const T* wbase = pw + ((static_cast<size_t>(c) * ci + ic) * kh) * kw;
            const T* ibase = pin + static_cast<size_t>(ic) * h * w;
            T* obase = po + static_cast<size_t>(c) * oh * ow;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const T wv = wbase[ky * kw + kx];
                    // oy range with iy = oy*stride + ky - padding inside [0,h)
                    int oy0 = 0, oy1 = oh;
                    while (oy0 < oh && oy0 * stride + ky - padding < 0) ++oy0;
                    while (oy1 > oy0 && (oy1 - 1) * stride + ky - padding >= h) --oy1;
                    int ox0 = 0, ox1 = ow;
                    while (ox0 < ow && ox0 * stride + kx - padding < 0) ++ox0;
                    while (ox1 > ox0 && (ox1 - 1) * stride + kx - padding >= w) --ox1;
                    for (int oy = oy0; oy < oy1; ++oy) {
                        const int iy = oy * stride + ky - padding;
                        const T* irow = ibase + static_cast<size_t>(iy) * w + (kx - padding);
                        T* orow = obase + static_cast<size_t>(oy) * ow;
                        if (stride == 1) {
                            for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox];
                        } else {
                            for (int ox = ox0; ox < ox1; ++ox)
                                orow[ox] += wv * irow[ox * stride];
                        }
                    }
                }
            }
        }
    }

    if (detail::any_on_tape<T>({&input, &weight, &bias})) {
        auto in_n = input.node();
        auto w_n = weight.node();
        auto b_n = bias.node();
        detail::attach(
            out, {in_n, w_n, b_n},
            [in_n, w_n, b_n, ci, h, w, co, kh, kw, oh, ow, stride,
             padding](TensorNode<T>& self) {
                const T* g = self.grad.data();
                if (b_n->on_tape()) {
                    for (int c = 0; c < co; ++c) {
                        const T* plane = g + static_cast<size_t>(c) * oh * ow;
                        T acc = T(0);
                        for (int i = 0; i < oh * ow; ++i) acc += plane[i];
                        b_n->grad[c] += acc;
                    }
                }
                const bool need_in = in_n->on_tape();
                const bool need_w = w_n->on_tape();
                if (!need_in && !need_w) return;
                for (int c = 0; c < co; ++c) {
                    const T* gbase = g + static_cast<size_t>(c) * oh * ow;
                    for (int ic = 0; ic < ci; ++ic) {
                        const size_t wo = ((static_cast<size_t>(c) * ci + ic) * kh) * kw;
                        const T* ibase = in_n->data.data() + static_cast<size_t>(ic) * h * w;
                        T* dibase = need_in ? in_n->grad.data() + static_cast<size_t>(ic) * h * w
                                            : nullptr;
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int kx = 0; kx < kw; ++kx) {
                                int oy0 = 0, oy1 = oh;
                                while (oy0 < oh && oy0 * stride + ky - padding < 0) ++oy0;
                                while (oy1 > oy0 && (oy1 - 1) * stride + ky - padding >= h)
                                    --oy1;
                                int ox0 = 0, ox1 = ow;
                                while (ox0 < ow && ox0 * stride + kx - padding < 0) ++ox0;
                                while (ox1 > ox0 && (ox1 - 1) * stride + kx - padding >= w)
                                    --ox1;
                                const T wv = w_n->data[wo + ky * kw + kx];
                                T wacc = T(0);
                                for (int oy = oy0; oy < oy1; ++oy) {
                                    const int iy = oy * stride + ky - padding;
                                    const T* irow =
                                        ibase + static_cast<size_t>(iy) * w + (kx - padding);
                                    const T* grow = gbase + static_cast<size_t>(oy) * ow;
                                    if (need_w) {
                                        if (stride == 1) {
                                            for (int ox = ox0; ox < ox1; ++ox)
                                                wacc += irow[ox] * grow[ox];
                                        } else {
                                            for (int ox = ox0; ox < ox1; ++ox)
                                                wacc += irow[ox * stride] * grow[ox];
                                        }
                                    }
                                    if (need_in) {
                                        T* dirow = dibase + static_cast<size_t>(iy) * w +
                                                   (kx - padding);
                                        if (stride == 1) {
                                            for (int ox = ox0; ox < ox1; ++ox)
                                                dirow[ox] += wv * grow[ox];
                                        } else {
                                            for (int ox = ox0; ox < ox1; ++ox)
                                                dirow[ox * stride] += wv * grow[ox];
                                        }
                                    }
                                }
                                if (need_w) w_n->grad[wo + ky * kw + kx] += wacc;
                            }
                        }
                    }
                }
            });
    }
    return out;
}

namespace detail {

/// Sample coordinates for align-corners-false bilinear interpolation.
/// Index math is done in double in both precision modes so the sampling
/// pattern never depends on T.
struct BilinearAxis {
    int lo;
    int hi;
    double w_hi;
};

inline BilinearAxis bilinear_axis(int dst, int in_size, int out_size) {
    const double src =
        (static_cast<double>(dst) + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
    double f = std::floor(src);
    double frac = src - f;
    int lo = static_cast<int>(f);
    if (lo < 0) {
        lo = 0;
        frac = 0.0;
    }
    if (lo > in_size - 1) {
        lo = in_size - 1;
        frac = 0.0;
    }
    int hi = std::min(lo + 1, in_size - 1);
    return {lo, hi, frac};
}

}  // namespace detail

/// Bilinear resize of [C,H,W] to [C,out_h,out_w], align-corners-false with
/// border replication.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int out_h, int out_w) {
    require(input.shape().size() == 3, "bilinear_resize expects [C,H,W]");
    require(out_h >= 1 && out_w >= 1, "bilinear_resize: output extents must be positive");
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);

    std::vector<detail::BilinearAxis> ys(static_cast<size_t>(out_h));
    std::vector<detail::BilinearAxis> xs(static_cast<size_t>(out_w));
    for (int y = 0; y < out_h; ++y) ys[static_cast<size_t>(y)] = detail::bilinear_axis(y, h, out_h);
    for (int x = 0; x < out_w; ++x) xs[static_cast<size_t>(x)] = detail::bilinear_axis(x, w, out_w);

    Tensor<T> out = Tensor<T>::zeros({c, out_h, out_w});
    T* po = out.mutable_data();
    const T* pin = input.data();
    for (int ch = 0; ch < c; ++ch) {
        const T* ibase = pin + static_cast<size_t>(ch) * h * w;
        T* obase = po + static_cast<size_t>(ch) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const auto& ay = ys[static_cast<size_t>(y)];
            const T wy1 = static_cast<T>(ay.w_hi);
            const T wy0 = T(1) - wy1;
            const T* r0 = ibase + static_cast<size_t>(ay.lo) * w;
            const T* r1 = ibase + static_cast<size_t>(ay.hi) * w;
            T* orow = obase + static_cast<size_t>(y) * out_w;
            for (int x = 0; x < out_w; ++x) {
                const auto& ax = xs[static_cast<size_t>(x)];
                const T wx1 = static_cast<T>(ax.w_hi);
                const T wx0 = T(1) - wx1;
                orow[x] = wy0 * (wx0 * r0[ax.lo] + wx1 * r0[ax.hi]) +
                          wy1 * (wx0 * r1[ax.lo] + wx1 * r1[ax.hi]);
            }
        }
    }

    if (detail::any_on_tape<T>({&input})) {
        auto in_n = input.node();
        detail::attach(out, {in_n},
                       [in_n, ys, xs, c, h, w, out_h, out_w](TensorNode<T>& self) {
                           const T* g = self.grad.data();
                           for (int ch = 0; ch < c; ++ch) {
                               T* dbase = in_n->grad.data() + static_cast<size_t>(ch) * h * w;
                               const T* gbase = g + static_cast<size_t>(ch) * out_h * out_w;
                               for (int y = 0; y < out_h; ++y) {
                                   const auto& ay = ys[static_cast<size_t>(y)];
                                   const T wy1 = static_cast<T>(ay.w_hi);
                                   const T wy0 = T(1) - wy1;
                                   const T* grow = gbase + static_cast<size_t>(y) * out_w;
                                   for (int x = 0; x < out_w; ++x) {
                                       const auto& ax = xs[static_cast<size_t>(x)];
                                       const T wx1 = static_cast<T>(ax.w_hi);
                                       const T wx0 = T(1) - wx1;
                                       const T gv = grow[x];
                                       dbase[ay.lo * w + ax.lo] += gv * wy0 * wx0;
                                       dbase[ay.lo * w + ax.hi] += gv * wy0 * wx1;
                                       dbase[ay.hi * w + ax.lo] += gv * wy1 * wx0;
                                       dbase[ay.hi * w + ax.hi] += gv * wy1 * wx1;
                                   }
                               }
                           }
                       });
    }
    return out;
}

/// Same-size k x k max pooling (stride 1, pad (k-1)/2, -inf padding).
/// Ties route gradient to the first maximum in row-major window order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int k) {
    require(input.shape().size() == 3, "max_pool2d expects [C,H,W]");
    require(k >= 1 && k % 2 == 1, "max_pool2d: window must be odd, got " + std::to_string(k));
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int r = (k - 1) / 2;

    Tensor<T> out = Tensor<T>::zeros({c, h, w});
    std::vector<std::int32_t> argmax(static_cast<size_t>(input.numel()));
    T* po = out.mutable_data();
    const T* pin = input.data();
    for (int ch = 0; ch < c; ++ch) {
        const T* ibase = pin + static_cast<size_t>(ch) * h * w;
        T* obase = po + static_cast<size_t>(ch) * h * w;
        std::int32_t* abase = argmax.data() + static_cast<size_t>(ch) * h * w;
        for (int y = 0; y < h; ++y) {
            const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
            for (int x = 0; x < w; ++x) {
                const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
                T best = ibase[y0 * w + x0];
                int besti = y0 * w + x0;
                for (int yy = y0; yy <= y1; ++yy)
                    for (int xx = x0; xx <= x1; ++xx) {
                        const T v = ibase[yy * w + xx];
                        if (v > best) {
                            best = v;
                            besti = yy * w + xx;
                        }
                    }
                obase[y * w + x] = best;
                abase[y * w + x] = besti;
            }
        }
    }

    if (detail::any_on_tape<T>({&input})) {
        auto in_n = input.node();
        detail::attach(out, {in_n}, [in_n, argmax, c, h, w](TensorNode<T>& self) {
            for (int ch = 0; ch < c; ++ch) {
                const size_t base = static_cast<size_t>(ch) * h * w;
                for (int i = 0; i < h * w; ++i)
                    in_n->grad[base + argmax[base + i]] += self.grad[base + i];
            }
        });
    }
    return out;
}

/// GroupNorm over [C,H,W]: per-group zero mean / unit variance, then the
/// per-channel affine. eps sits inside the square root.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& input, int groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
    require(input.shape().size() == 3, "group_norm expects [C,H,W]");
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    require(groups >= 1 && c % groups == 0,
            "group_norm: channel count " + std::to_string(c) + " not divisible by " +
                std::to_string(groups) + " groups");
    require(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
            "group_norm: gamma/beta must be [C]");

    const int ch_per = c / groups;
    const std::int64_t m = static_cast<std::int64_t>(ch_per) * h * w;
    std::vector<T> mean_g(static_cast<size_t>(groups));
    std::vector<T> inv_std_g(static_cast<size_t>(groups));

    const T* pin = input.data();
    Tensor<T> out = Tensor<T>::zeros({c, h, w});
    T* po = out.mutable_data();
    const T* pg = gamma.data();
    const T* pb = beta.data();
    for (int g = 0; g < groups; ++g) {
        const T* gbase = pin + static_cast<size_t>(g) * m;
        T mu = T(0);
        for (std::int64_t i = 0; i < m; ++i) mu += gbase[i];
        mu /= static_cast<T>(m);
        T var = T(0);
        for (std::int64_t i = 0; i < m; ++i) {
            const T d = gbase[i] - mu;
            var += d * d;
        }
        var /= static_cast<T>(m);
        const T inv_std = T(1) / std::sqrt(var + eps);
        mean_g[static_cast<size_t>(g)] = mu;
        inv_std_g[static_cast<size_t>(g)] = inv_std;
        for (int lc = 0; lc < ch_per; ++lc) {
            const int ch = g * ch_per + lc;
            const T a = pg[ch] * inv_std;
            const T b = pb[ch] - pg[ch] * inv_std * mu;
            const T* irow = pin + static_cast<size_t>(ch) * h * w;
            T* orow = po + static_cast<size_t>(ch) * h * w;
            for (int i = 0; i < h * w; ++i) orow[i] = a * irow[i] + b;
        }
    }

    if (detail::any_on_tape<T>({&input, &gamma, &beta})) {
        auto in_n = input.node();
        auto g_n = gamma.node();
        auto b_n = beta.node();
        detail::attach(
            out, {in_n, g_n, b_n},
            [in_n, g_n, b_n, mean_g, inv_std_g, groups, ch_per, c, h, w,
             m](TensorNode<T>& self) {
                const T* g = self.grad.data();
                const int plane = h * w;
                for (int grp = 0; grp < groups; ++grp) {
                    const T mu = mean_g[static_cast<size_t>(grp)];
                    const T is = inv_std_g[static_cast<size_t>(grp)];
                    // accumulate the two group-level reductions
                    T sum_dxhat = T(0);
                    T sum_dxhat_xhat = T(0);
                    for (int lc = 0; lc < ch_per; ++lc) {
                        const int ch = grp * ch_per + lc;
                        const T gam = g_n->data[ch];
                        const T* grow = g + static_cast<size_t>(ch) * plane;
                        const T* xrow = in_n->data.data() + static_cast<size_t>(ch) * plane;
                        T dg = T(0), db = T(0);
                        for (int i = 0; i < plane; ++i) {
                            const T xhat = (xrow[i] - mu) * is;
                            const T dxh = grow[i] * gam;
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xhat;
                            dg += grow[i] * xhat;
                            db += grow[i];
                        }
                        if (g_n->on_tape()) g_n->grad[ch] += dg;
                        if (b_n->on_tape()) b_n->grad[ch] += db;
                    }
                    if (!in_n->on_tape()) continue;
                    const T inv_m = T(1) / static_cast<T>(m);
                    for (int lc = 0; lc < ch_per; ++lc) {
                        const int ch = grp * ch_per + lc;
                        const T gam = g_n->data[ch];
                        const T* grow = g + static_cast<size_t>(ch) * plane;
                        const T* xrow = in_n->data.data() + static_cast<size_t>(ch) * plane;
                        T* drow = in_n->grad.data() + static_cast<size_t>(ch) * plane;
                        for (int i = 0; i < plane; ++i) {
                            const T xhat = (xrow[i] - mu) * is;
                            const T dxh = grow[i] * gam;
                            drow[i] +=
                                is * (dxh - inv_m * (sum_dxhat + xhat * sum_dxhat_xhat));
                        }
                    }
                }
            });
    }
    return out;
}

/// Two coordinate channels over an H x W grid, each normalized to [-1, 1]
/// (index i maps to 2i/(n-1) - 1; a single-sample axis maps to -1).
/// Channel 0 carries x (varies along W), channel 1 carries y.
template <typename T>
Tensor<T> coord_channels(int h, int w) {
    Tensor<T> out = Tensor<T>::zeros({2, h, w});
    T* po = out.mutable_data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const T cx = w > 1 ? static_cast<T>(2.0 * x / (w - 1) - 1.0) : T(-1);
            const T cy = h > 1 ? static_cast<T>(2.0 * y / (h - 1) - 1.0) : T(-1);
            po[y * w + x] = cx;
            po[static_cast<size_t>(h) * w + y * w + x] = cy;
        }
    return out;
}

}  // namespace panoseg
