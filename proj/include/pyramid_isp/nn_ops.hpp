#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "pyramid_isp/autograd.hpp"

namespace pyramid_isp {

enum class Padding { None, Reflect, Zero };

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Stride = Eigen::OuterStride<>;

inline int reflect_index(int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * n - 2 - i;
    return i;
}

template <typename T>
Tensor<T> pad_map(const Tensor<T>& x, int p, Padding mode) {
    if (p == 0 || mode == Padding::None) return x;
    const int c = x.channels(), h = x.height(), w = x.width();
    if (mode == Padding::Reflect && (p >= h || p >= w))
        throw DimensionError("reflect pad " + std::to_string(p) + " needs spatial dims > pad, got " + shape_str(x.shape()));
    Tensor<T> out = Tensor<T>::chw(c, h + 2 * p, w + 2 * p);
    for (int ch = 0; ch < c; ++ch)
        for (int y = -p; y < h + p; ++y) {
            const bool yin = y >= 0 && y < h;
            for (int xx = -p; xx < w + p; ++xx) {
                T v;
                if (mode == Padding::Zero)
                    v = (yin && xx >= 0 && xx < w) ? x.at(ch, y, xx) : T(0);
                else
                    v = x.at(ch, reflect_index(y, h), reflect_index(xx, w));
                out.at(ch, y + p, xx + p) = v;
            }
        }
    return out;
}

/// Adjoint of pad_map: folds gradient of the padded map back onto the source.
template <typename T>
void unpad_accumulate(const Tensor<T>& gp, int p, Padding mode, Tensor<T>& g) {
    const int c = g.channels(), h = g.height(), w = g.width();
    if (p == 0 || mode == Padding::None) {
        g += gp;
        return;
    }
    for (int ch = 0; ch < c; ++ch)
        for (int y = -p; y < h + p; ++y)
            for (int xx = -p; xx < w + p; ++xx) {
                const T v = gp.at(ch, y + p, xx + p);
                if (mode == Padding::Zero) {
                    if (y >= 0 && y < h && xx >= 0 && xx < w) g.at(ch, y, xx) += v;
                } else {
                    g.at(ch, reflect_index(y, h), reflect_index(xx, w)) += v;
                }
            }
}

template <typename T>
void im2col_band(const Tensor<T>& p, int k, int y0, int y1, int wout, T* col) {
    const int cin = p.channels();
    const int wp = p.width();
    const std::size_t n = static_cast<std::size_t>(y1 - y0) * wout;
    for (int ci = 0; ci < cin; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* dst = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * n;
                const T* base = p.channel_ptr(ci) + kx;
                for (int y = y0; y < y1; ++y) {
                    const T* src = base + static_cast<std::size_t>(y + ky) * wp;
                    std::copy(src, src + wout, dst + static_cast<std::size_t>(y - y0) * wout);
                }
            }
}

template <typename T>
void col2im_band(const T* col, int k, int y0, int y1, int wout, Tensor<T>& gp) {
    const int cin = gp.channels();
    const int wp = gp.width();
    const std::size_t n = static_cast<std::size_t>(y1 - y0) * wout;
    for (int ci = 0; ci < cin; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const T* src = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * n;
                T* base = gp.channel_ptr(ci) + kx;
                for (int y = y0; y < y1; ++y) {
                    T* dst = base + static_cast<std::size_t>(y + ky) * wp;
                    const T* s = src + static_cast<std::size_t>(y - y0) * wout;
                    for (int x = 0; x < wout; ++x) dst[x] += s[x];
                }
            }
}

inline int band_rows(std::size_t kdim, int wout, int hout) {
    constexpr std::size_t budget = std::size_t{1} << 21;
    const std::size_t per_row = kdim * static_cast<std::size_t>(std::max(wout, 1));
    return std::clamp(static_cast<int>(budget / std::max<std::size_t>(per_row, 1)), 1, std::max(hout, 1));
}

}  // namespace detail

/// Stride-1 2-D convolution. weight is (out, in, k, k); bias (out) may be
/// null. Reflect/Zero padding keeps the spatial size; None is a valid conv.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Padding mode) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(2) != wv.dim(3))
        throw DimensionError("conv2d: input " + shape_str(xv.shape()) + " weight " + shape_str(wv.shape()));
    const int cout = wv.dim(0), cin = wv.dim(1), k = wv.dim(2);
    if (cin != xv.channels())
        throw DimensionError("conv2d: weight expects " + std::to_string(cin) + " channels, input has " +
                             std::to_string(xv.channels()));
    if (bias && bias.value().size() != static_cast<std::size_t>(cout)) throw DimensionError("conv2d: bias size");
    const int p = mode == Padding::None ? 0 : k / 2;
    Tensor<T> padded = detail::pad_map(xv, p, mode);
    const int hout = padded.height() - k + 1;
    const int wout = padded.width() - k + 1;
    if (hout < 1 || wout < 1) throw DimensionError("conv2d: kernel " + std::to_string(k) + " larger than input");

    const std::size_t kdim = static_cast<std::size_t>(cin) * k * k;
    const int rows = detail::band_rows(kdim, wout, hout);
    Tensor<T> out = Tensor<T>::chw(cout, hout, wout);
    std::vector<T> col(kdim * static_cast<std::size_t>(rows) * wout);
    Eigen::Map<const detail::RowMat<T>> wm(wv.data(), cout, static_cast<Eigen::Index>(kdim));
    const Eigen::Index plane = static_cast<Eigen::Index>(hout) * wout;
    for (int y0 = 0; y0 < hout; y0 += rows) {
        const int y1 = std::min(hout, y0 + rows);
        const Eigen::Index n = static_cast<Eigen::Index>(y1 - y0) * wout;
        detail::im2col_band(padded, k, y0, y1, wout, col.data());
        Eigen::Map<const detail::RowMat<T>> cm(col.data(), static_cast<Eigen::Index>(kdim), n);
        Eigen::Map<detail::RowMat<T>, 0, detail::Stride> om(out.data() + static_cast<std::size_t>(y0) * wout, cout, n,
                                                            detail::Stride(plane));
        om.noalias() = wm * cm;
    }
    if (bias) {
        for (int co = 0; co < cout; ++co) {
            const T b = bias.value()[static_cast<std::size_t>(co)];
            T* op = out.channel_ptr(co);
            for (Eigen::Index i = 0; i < plane; ++i) op[i] += b;
        }
    }

    std::vector<Var<T>> inputs{x, weight};
    if (bias) inputs.push_back(bias);
    return detail::make_result<T>(
        std::move(out), inputs, [padded = std::move(padded), mode, p, k, cin, cout, hout, wout](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pw = *self.parents[1];
            const std::size_t kdim = static_cast<std::size_t>(cin) * k * k;
            const int rows = detail::band_rows(kdim, wout, hout);
            const Eigen::Index plane = static_cast<Eigen::Index>(hout) * wout;
            std::vector<T> col(kdim * static_cast<std::size_t>(rows) * wout);
            std::vector<T> dcol(px.requires_grad ? col.size() : 0);
            Tensor<T> gpad;
            if (px.requires_grad) gpad = Tensor<T>(padded.shape(), T(0));
            Eigen::Map<const detail::RowMat<T>> wm(pw.value.data(), cout, static_cast<Eigen::Index>(kdim));
            for (int y0 = 0; y0 < hout; y0 += rows) {
                const int y1 = std::min(hout, y0 + rows);
                const Eigen::Index n = static_cast<Eigen::Index>(y1 - y0) * wout;
                Eigen::Map<const detail::RowMat<T>, 0, detail::Stride> gm(
                    self.grad.data() + static_cast<std::size_t>(y0) * wout, cout, n, detail::Stride(plane));
                if (pw.requires_grad) {
                    detail::im2col_band(padded, k, y0, y1, wout, col.data());
                    Eigen::Map<const detail::RowMat<T>> cm(col.data(), static_cast<Eigen::Index>(kdim), n);
                    Eigen::Map<detail::RowMat<T>> gwm(pw.grad_ref().data(), cout, static_cast<Eigen::Index>(kdim));
                    gwm.noalias() += gm * cm.transpose();
                }
                if (px.requires_grad) {
                    Eigen::Map<detail::RowMat<T>> dm(dcol.data(), static_cast<Eigen::Index>(kdim), n);
                    dm.noalias() = wm.transpose() * gm;
                    detail::col2im_band(dcol.data(), k, y0, y1, wout, gpad);
                }
            }
            if (px.requires_grad) detail::unpad_accumulate(gpad, p, mode, px.grad_ref());
            if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                auto& gb = self.parents[2]->grad_ref();
                for (int co = 0; co < cout; ++co) {
                    const T* gp = self.grad.channel_ptr(co);
                    T acc = 0;
                    for (Eigen::Index i = 0; i < plane; ++i) acc += gp[i];
                    gb[static_cast<std::size_t>(co)] += acc;
                }
            }
        });
}

/// Transposed convolution, kernel 2, stride 2: (Cin, H, W) -> (Cout, 2H, 2W).
/// weight is (in, out, 2, 2).
template <typename T>
Var<T> conv_transpose2x2(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    if (wv.rank() != 4 || wv.dim(2) != 2 || wv.dim(3) != 2 || wv.dim(0) != xv.channels())
        throw DimensionError("conv_transpose2x2: input " + shape_str(xv.shape()) + " weight " + shape_str(wv.shape()));
    const int cin = wv.dim(0), cout = wv.dim(1), h = xv.height(), w = xv.width();
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    Eigen::Map<const detail::RowMat<T>> wm(wv.data(), cin, cout * 4);
    Eigen::Map<const detail::RowMat<T>> xm(xv.data(), cin, hw);
    detail::RowMat<T> r = wm.transpose() * xm;  // (cout*4, hw)
    Tensor<T> out = Tensor<T>::chw(cout, 2 * h, 2 * w);
    for (int co = 0; co < cout; ++co)
        for (int d = 0; d < 4; ++d) {
            const T b = bias ? bias.value()[static_cast<std::size_t>(co)] : T(0);
            const int dy = d / 2, dx = d % 2;
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) out.at(co, 2 * y + dy, 2 * xx + dx) = r(co * 4 + d, y * w + xx) + b;
        }
    std::vector<Var<T>> inputs{x, weight};
    if (bias) inputs.push_back(bias);
    return detail::make_result<T>(std::move(out), inputs, [cin, cout, h, w](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
        detail::RowMat<T> dr(cout * 4, hw);
        for (int co = 0; co < cout; ++co)
            for (int d = 0; d < 4; ++d) {
                const int dy = d / 2, dx = d % 2;
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) dr(co * 4 + d, y * w + xx) = self.grad.at(co, 2 * y + dy, 2 * xx + dx);
            }
        Eigen::Map<const detail::RowMat<T>> wm(pw.value.data(), cin, cout * 4);
        if (px.requires_grad) {
            Eigen::Map<detail::RowMat<T>> gx(px.grad_ref().data(), cin, hw);
            gx.noalias() += wm * dr;
        }
        if (pw.requires_grad) {
            Eigen::Map<const detail::RowMat<T>> xm(px.value.data(), cin, hw);
            Eigen::Map<detail::RowMat<T>> gw(pw.grad_ref().data(), cin, cout * 4);
            gw.noalias() += xm * dr.transpose();
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            auto& gb = self.parents[2]->grad_ref();
            for (int co = 0; co < cout; ++co) gb[static_cast<std::size_t>(co)] += dr.row(co * 4).sum() +
                                                                                 dr.row(co * 4 + 1).sum() +
                                                                                 dr.row(co * 4 + 2).sum() +
                                                                                 dr.row(co * 4 + 3).sum();
        }
    });
}

/// 2x2 max pooling, stride 2. Spatial dims must be even.
template <typename T>
Var<T> max_pool2(const Var<T>& x) {
    const auto& xv = x.value();
    const int c = xv.channels(), h = xv.height(), w = xv.width();
    if (h % 2 || w % 2) throw DimensionError("max_pool2 needs even dims, got " + shape_str(xv.shape()));
    Tensor<T> out = Tensor<T>::chw(c, h / 2, w / 2);
    std::vector<std::size_t> arg(out.size());
    std::size_t o = 0;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h / 2; ++y)
            for (int xx = 0; xx < w / 2; ++xx, ++o) {
                std::size_t best = 0;
                T bv = -std::numeric_limits<T>::infinity();
                for (int d = 0; d < 4; ++d) {
                    const int yy = 2 * y + d / 2, xs = 2 * xx + d % 2;
                    const T v = xv.at(ch, yy, xs);
                    if (v > bv) {
                        bv = v;
                        best = (static_cast<std::size_t>(ch) * h + yy) * w + xs;
                    }
                }
                out[o] = bv;
                arg[o] = best;
            }
    return detail::make_result<T>(std::move(out), {x}, [arg = std::move(arg)](Node<T>& self) {
        auto& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
    });
}

/// 2x2 average pooling, stride 2, trailing odd row/column dropped.
template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
    const auto& xv = x.value();
    const int c = xv.channels(), h = xv.height() / 2, w = xv.width() / 2;
    if (h < 1 || w < 1) throw DimensionError("avg_pool2 on " + shape_str(xv.shape()));
    Tensor<T> out = Tensor<T>::chw(c, h, w);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                out.at(ch, y, xx) = T(0.25) * (xv.at(ch, 2 * y, 2 * xx) + xv.at(ch, 2 * y, 2 * xx + 1) +
                                               xv.at(ch, 2 * y + 1, 2 * xx) + xv.at(ch, 2 * y + 1, 2 * xx + 1));
    return detail::make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        auto& g = self.parents[0]->grad_ref();
        const int c = self.value.channels(), h = self.value.height(), w = self.value.width();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    const T d = T(0.25) * self.grad.at(ch, y, xx);
                    g.at(ch, 2 * y, 2 * xx) += d;
                    g.at(ch, 2 * y, 2 * xx + 1) += d;
                    g.at(ch, 2 * y + 1, 2 * xx) += d;
                    g.at(ch, 2 * y + 1, 2 * xx + 1) += d;
                }
    });
}

/// Per-channel normalization over (H, W) with affine gamma/beta of size C.
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const auto& xv = x.value();
    const int c = xv.channels();
    const std::size_t n = xv.plane();
    Tensor<T> xhat(xv.shape());
    std::vector<T> inv_std(static_cast<std::size_t>(c));
    Tensor<T> out(xv.shape());
    for (int ch = 0; ch < c; ++ch) {
        const T* p = xv.channel_ptr(ch);
        T m = 0;
        for (std::size_t i = 0; i < n; ++i) m += p[i];
        m /= static_cast<T>(n);
        T v = 0;
        for (std::size_t i = 0; i < n; ++i) v += (p[i] - m) * (p[i] - m);
        v /= static_cast<T>(n);
        const T is = T(1) / std::sqrt(v + eps);
        inv_std[static_cast<std::size_t>(ch)] = is;
        const T ga = gamma.value()[static_cast<std::size_t>(ch)];
        const T be = beta.value()[static_cast<std::size_t>(ch)];
        T* xh = xhat.channel_ptr(ch);
        T* op = out.channel_ptr(ch);
        for (std::size_t i = 0; i < n; ++i) {
            xh[i] = (p[i] - m) * is;
            op[i] = ga * xh[i] + be;
        }
    }
    return detail::make_result<T>(
        std::move(out), {x, gamma, beta}, [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const int c = px.value.channels();
            const std::size_t n = px.value.plane();
            for (int ch = 0; ch < c; ++ch) {
                const auto cs = static_cast<std::size_t>(ch);
                const T* dy = self.grad.channel_ptr(ch);
                const T* xh = xhat.channel_ptr(ch);
                T sdy = 0, sdyx = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    sdy += dy[i];
                    sdyx += dy[i] * xh[i];
                }
                if (pg.requires_grad) pg.grad_ref()[cs] += sdyx;
                if (pb.requires_grad) pb.grad_ref()[cs] += sdy;
                if (px.requires_grad) {
                    const T ga = pg.value[cs];
                    const T k = ga * inv_std[cs] / static_cast<T>(n);
                    T* gx = px.grad_ref().channel_ptr(ch);
                    for (std::size_t i = 0; i < n; ++i)
                        gx[i] += k * (static_cast<T>(n) * dy[i] - sdy - xh[i] * sdyx);
                }
            }
        });
}

/// Fully connected map on a (C, 1, 1) vector: weight (out, in), bias (out).
template <typename T>
Var<T> linear(const Var<T>& v, const Var<T>& weight, const Var<T>& bias) {
    const auto& wv = weight.value();
    const int out_n = wv.dim(0), in_n = wv.dim(1);
    if (v.value().size() != static_cast<std::size_t>(in_n))
        throw DimensionError("linear: input " + shape_str(v.shape()) + " weight " + shape_str(wv.shape()));
    Tensor<T> out = Tensor<T>::chw(out_n, 1, 1);
    for (int o = 0; o < out_n; ++o) {
        T acc = bias.value()[static_cast<std::size_t>(o)];
        for (int i = 0; i < in_n; ++i) acc += wv[static_cast<std::size_t>(o) * in_n + i] * v.value()[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(o)] = acc;
    }
    return detail::make_result<T>(std::move(out), {v, weight, bias}, [out_n, in_n](Node<T>& self) {
        auto& pv = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        for (int o = 0; o < out_n; ++o) {
            const T d = self.grad[static_cast<std::size_t>(o)];
            if (pb.requires_grad) pb.grad_ref()[static_cast<std::size_t>(o)] += d;
            for (int i = 0; i < in_n; ++i) {
                const std::size_t wi = static_cast<std::size_t>(o) * in_n + i;
                if (pw.requires_grad) pw.grad_ref()[wi] += d * pv.value[static_cast<std::size_t>(i)];
                if (pv.requires_grad) pv.grad_ref()[static_cast<std::size_t>(i)] += d * pw.value[wi];
            }
        }
    });
}

/// Channel-to-space rearrangement with factor 2: (4m, H, W) -> (m, 2H, 2W),
/// sub-position (i, j) of output channel c taken from input channel 4c + 2i + j.
template <typename T>
Tensor<T> pixel_shuffle_values(const Tensor<T>& x) {
    const int c = x.channels(), h = x.height(), w = x.width();
    if (c % 4) throw ConfigError("pixel shuffle needs channels divisible by 4, got " + std::to_string(c));
    Tensor<T> out = Tensor<T>::chw(c / 4, 2 * h, 2 * w);
    for (int oc = 0; oc < c / 4; ++oc)
        for (int d = 0; d < 4; ++d)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) out.at(oc, 2 * y + d / 2, 2 * xx + d % 2) = x.at(4 * oc + d, y, xx);
    return out;
}

/// Inverse of pixel_shuffle_values: (m, 2H, 2W) -> (4m, H, W).
template <typename T>
Tensor<T> pixel_unshuffle_values(const Tensor<T>& x) {
    const int c = x.channels(), h = x.height(), w = x.width();
    if (h % 2 || w % 2) throw DimensionError("pixel unshuffle needs even dims, got " + shape_str(x.shape()));
    Tensor<T> out = Tensor<T>::chw(4 * c, h / 2, w / 2);
    for (int oc = 0; oc < c; ++oc)
        for (int d = 0; d < 4; ++d)
            for (int y = 0; y < h / 2; ++y)
                for (int xx = 0; xx < w / 2; ++xx) out.at(4 * oc + d, y, xx) = x.at(oc, 2 * y + d / 2, 2 * xx + d % 2);
    return out;
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x) {
    return detail::make_result<T>(pixel_shuffle_values(x.value()), {x}, [](Node<T>& self) {
        self.parents[0]->grad_ref() += pixel_unshuffle_values(self.grad);
    });
}

namespace detail {

struct LerpTap {
    int i0, i1;
    double w0, w1;
};

/// Source taps for 2x bilinear upsampling without corner alignment.
inline std::vector<LerpTap> upsample2_taps(int n) {
    std::vector<LerpTap> taps(static_cast<std::size_t>(2 * n));
    for (int o = 0; o < 2 * n; ++o) {
        double src = (o + 0.5) / 2.0 - 0.5;
        if (src < 0) src = 0;
        const int i0 = std::min(static_cast<int>(src), n - 1);
        const int i1 = std::min(i0 + 1, n - 1);
        const double l = src - i0;
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - l, l};
    }
    return taps;
}

}  // namespace detail

template <typename T>
Var<T> bilinear_upsample2(const Var<T>& x) {
    const auto& xv = x.value();
    const int c = xv.channels(), h = xv.height(), w = xv.width();
    const auto ty = detail::upsample2_taps(h);
    const auto tx = detail::upsample2_taps(w);
    Tensor<T> out = Tensor<T>::chw(c, 2 * h, 2 * w);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y) {
            const auto& a = ty[static_cast<std::size_t>(y)];
            for (int xx = 0; xx < 2 * w; ++xx) {
                const auto& b = tx[static_cast<std::size_t>(xx)];
                out.at(ch, y, xx) = static_cast<T>(a.w0 * b.w0) * xv.at(ch, a.i0, b.i0) +
                                    static_cast<T>(a.w0 * b.w1) * xv.at(ch, a.i0, b.i1) +
                                    static_cast<T>(a.w1 * b.w0) * xv.at(ch, a.i1, b.i0) +
                                    static_cast<T>(a.w1 * b.w1) * xv.at(ch, a.i1, b.i1);
            }
        }
    return detail::make_result<T>(std::move(out), {x}, [ty, tx](Node<T>& self) {
        auto& g = self.parents[0]->grad_ref();
        const int c = self.value.channels(), h2 = self.value.height(), w2 = self.value.width();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h2; ++y) {
                const auto& a = ty[static_cast<std::size_t>(y)];
                for (int xx = 0; xx < w2; ++xx) {
                    const auto& b = tx[static_cast<std::size_t>(xx)];
                    const T d = self.grad.at(ch, y, xx);
                    g.at(ch, a.i0, b.i0) += static_cast<T>(a.w0 * b.w0) * d;
                    g.at(ch, a.i0, b.i1) += static_cast<T>(a.w0 * b.w1) * d;
                    g.at(ch, a.i1, b.i0) += static_cast<T>(a.w1 * b.w0) * d;
                    g.at(ch, a.i1, b.i1) += static_cast<T>(a.w1 * b.w1) * d;
                }
            }
    });
}

/// Depthwise separable valid filtering with the same 1-D kernel along rows
/// and columns: (C, H, W) -> (C, H-k+1, W-k+1).
template <typename T>
Var<T> separable_filter_valid(const Var<T>& x, const std::vector<T>& kernel) {
    const auto& xv = x.value();
    const int k = static_cast<int>(kernel.size());
    const int c = xv.channels(), h = xv.height(), w = xv.width();
    const int ho = h - k + 1, wo = w - k + 1;
    if (ho < 1 || wo < 1) throw DimensionError("filter window " + std::to_string(k) + " exceeds " + shape_str(xv.shape()));
    Tensor<T> tmp = Tensor<T>::chw(c, h, wo);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < wo; ++xx) {
                T acc = 0;
                for (int t = 0; t < k; ++t) acc += kernel[static_cast<std::size_t>(t)] * xv.at(ch, y, xx + t);
                tmp.at(ch, y, xx) = acc;
            }
    Tensor<T> out = Tensor<T>::chw(c, ho, wo);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx) {
                T acc = 0;
                for (int t = 0; t < k; ++t) acc += kernel[static_cast<std::size_t>(t)] * tmp.at(ch, y + t, xx);
                out.at(ch, y, xx) = acc;
            }
    return detail::make_result<T>(std::move(out), {x}, [kernel, h, w](Node<T>& self) {
        const int k = static_cast<int>(kernel.size());
        const int c = self.value.channels(), ho = self.value.height(), wo = self.value.width();
        Tensor<T> gtmp = Tensor<T>::chw(c, h, wo);
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < ho; ++y)
                for (int xx = 0; xx < wo; ++xx) {
                    const T d = self.grad.at(ch, y, xx);
                    for (int t = 0; t < k; ++t) gtmp.at(ch, y + t, xx) += kernel[static_cast<std::size_t>(t)] * d;
                }
        auto& g = self.parents[0]->grad_ref();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < wo; ++xx) {
                    const T d = gtmp.at(ch, y, xx);
                    for (int t = 0; t < k; ++t) g.at(ch, y, xx + t) += kernel[static_cast<std::size_t>(t)] * d;
                }
        (void)w;
    });
}

}  // namespace pyramid_isp
