#pragma once

// Forward and backward loops shared by the differentiable graph and the
// inference paths. Everything works on flat row-major buffers:
//   images / feature grids  [H,W,C]
//   conv weights            [K,K,Cin,Cout]
//   filter banks            [N,K,K]
//   window tensors          [H,W,P,P], entry (a,b) is reference offset (a-P/2, b-P/2)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "oneseg/voldata.hpp"

namespace oneseg::kernels {

using std::size_t;

inline size_t conv_output_size(size_t n, size_t kernel, size_t stride) {
    const size_t pad = kernel / 2;
    return (n + 2 * pad - kernel) / stride + 1;
}

// Mirror index without repeating the edge sample (dcb|abcd|cba).
inline size_t reflect_index(long i, size_t n) {
    if (n == 1) return 0;
    const long period = 2 * static_cast<long>(n) - 2;
    i %= period;
    if (i < 0) i += period;
    return static_cast<size_t>(i < static_cast<long>(n) ? i : period - i);
}

// --- zero-padded strided convolution (cross-correlation), padding K/2 -------

template <typename R>
void conv2d_forward(std::span<const R> x, size_t H, size_t W, size_t cin, std::span<const R> w,
                    std::span<const R> b, size_t cout, size_t K, size_t stride, std::span<R> out,
                    size_t row_begin = 0, size_t row_end = std::numeric_limits<size_t>::max()) {
    const size_t Ho = conv_output_size(H, K, stride);
    const size_t Wo = conv_output_size(W, K, stride);
    const long pad = static_cast<long>(K / 2);
    row_end = std::min(row_end, Ho);
    for (size_t oy = row_begin; oy < row_end; ++oy) {
        for (size_t ox = 0; ox < Wo; ++ox) {
            R* acc = out.data() + (oy * Wo + ox) * cout;
            for (size_t co = 0; co < cout; ++co) acc[co] = b[co];
            for (size_t ky = 0; ky < K; ++ky) {
                const long iy = static_cast<long>(oy * stride + ky) - pad;
                if (iy < 0 || iy >= static_cast<long>(H)) continue;
                for (size_t kx = 0; kx < K; ++kx) {
                    const long ix = static_cast<long>(ox * stride + kx) - pad;
                    if (ix < 0 || ix >= static_cast<long>(W)) continue;
                    const R* xp = x.data() + (static_cast<size_t>(iy) * W + static_cast<size_t>(ix)) * cin;
                    const R* wp = w.data() + (ky * K + kx) * cin * cout;
                    for (size_t ci = 0; ci < cin; ++ci) {
                        const R xv = xp[ci];
                        const R* wr = wp + ci * cout;
                        for (size_t co = 0; co < cout; ++co) acc[co] += xv * wr[co];
                    }
                }
            }
        }
    }
}

// Accumulates into gx (skipped when empty), gw and gb.
template <typename R>
void conv2d_backward(std::span<const R> x, size_t H, size_t W, size_t cin, std::span<const R> w, size_t cout,
                     size_t K, size_t stride, std::span<const R> gout, std::span<R> gx, std::span<R> gw,
                     std::span<R> gb) {
    const size_t Ho = conv_output_size(H, K, stride);
    const size_t Wo = conv_output_size(W, K, stride);
    const long pad = static_cast<long>(K / 2);
    for (size_t oy = 0; oy < Ho; ++oy) {
        for (size_t ox = 0; ox < Wo; ++ox) {
            const R* g = gout.data() + (oy * Wo + ox) * cout;
            for (size_t co = 0; co < cout; ++co) gb[co] += g[co];
            for (size_t ky = 0; ky < K; ++ky) {
                const long iy = static_cast<long>(oy * stride + ky) - pad;
                if (iy < 0 || iy >= static_cast<long>(H)) continue;
                for (size_t kx = 0; kx < K; ++kx) {
                    const long ix = static_cast<long>(ox * stride + kx) - pad;
                    if (ix < 0 || ix >= static_cast<long>(W)) continue;
                    const size_t xoff = (static_cast<size_t>(iy) * W + static_cast<size_t>(ix)) * cin;
                    const R* xp = x.data() + xoff;
                    const size_t woff = (ky * K + kx) * cin * cout;
                    for (size_t ci = 0; ci < cin; ++ci) {
                        const R xv = xp[ci];
                        R* gwr = gw.data() + woff + ci * cout;
                        for (size_t co = 0; co < cout; ++co) gwr[co] += xv * g[co];
                    }
                    if (!gx.empty()) {
                        R* gxp = gx.data() + xoff;
                        for (size_t ci = 0; ci < cin; ++ci) {
                            const R* wr = w.data() + woff + ci * cout;
                            R s = 0;
                            for (size_t co = 0; co < cout; ++co) s += wr[co] * g[co];
                            gxp[ci] += s;
                        }
                    }
                }
            }
        }
    }
}

// --- fixed filter bank, reflect padding, same-size output -------------------

template <typename R>
void filter_bank_forward(std::span<const R> x, size_t H, size_t W, std::span<const double> kernels, size_t n,
                         size_t K, std::span<R> out) {
    const long half = static_cast<long>(K / 2);
    std::vector<size_t> ry(K * H), rx(K * W);
    for (size_t y = 0; y < H; ++y)
        for (size_t k = 0; k < K; ++k) ry[y * K + k] = reflect_index(static_cast<long>(y + k) - half, H);
    for (size_t xx = 0; xx < W; ++xx)
        for (size_t k = 0; k < K; ++k) rx[xx * K + k] = reflect_index(static_cast<long>(xx + k) - half, W);
    std::vector<R> kr(kernels.size());
    std::transform(kernels.begin(), kernels.end(), kr.begin(), [](double v) { return static_cast<R>(v); });
    std::vector<R> patch(K * K);
    for (size_t y = 0; y < H; ++y) {
        for (size_t xx = 0; xx < W; ++xx) {
            for (size_t ky = 0; ky < K; ++ky)
                for (size_t kx = 0; kx < K; ++kx) patch[ky * K + kx] = x[ry[y * K + ky] * W + rx[xx * K + kx]];
            R* o = out.data() + (y * W + xx) * n;
            for (size_t f = 0; f < n; ++f) {
                const R* kp = kr.data() + f * K * K;
                R acc = 0;
                for (size_t t = 0; t < K * K; ++t) acc += kp[t] * patch[t];
                o[f] = acc;
            }
        }
    }
}

template <typename R>
void filter_bank_backward(std::span<const R> gout, size_t H, size_t W, std::span<const double> kernels, size_t n,
                          size_t K, std::span<R> gx) {
    const long half = static_cast<long>(K / 2);
    for (size_t y = 0; y < H; ++y) {
        for (size_t xx = 0; xx < W; ++xx) {
            const R* g = gout.data() + (y * W + xx) * n;
            for (size_t ky = 0; ky < K; ++ky) {
                const size_t sy = reflect_index(static_cast<long>(y + ky) - half, H);
                for (size_t kx = 0; kx < K; ++kx) {
                    const size_t sx = reflect_index(static_cast<long>(xx + kx) - half, W);
                    R acc = 0;
                    for (size_t f = 0; f < n; ++f) acc += static_cast<R>(kernels[(f * K + ky) * K + kx]) * g[f];
                    gx[sy * W + sx] += acc;
                }
            }
        }
    }
}

// --- bilinear resize (half-pixel centres, edge clamp) -----------------------

template <typename R>
void resize_forward(std::span<const R> x, size_t H, size_t W, size_t C, size_t h, size_t w, std::span<R> out) {
    const auto ty = bilinear_taps(H, h);
    const auto tx = bilinear_taps(W, w);
    for (size_t y = 0; y < h; ++y) {
        const R fy = static_cast<R>(ty[y].frac);
        for (size_t xx = 0; xx < w; ++xx) {
            const R fx = static_cast<R>(tx[xx].frac);
            const R* a = x.data() + (ty[y].lo * W + tx[xx].lo) * C;
            const R* b = x.data() + (ty[y].lo * W + tx[xx].hi) * C;
            const R* c = x.data() + (ty[y].hi * W + tx[xx].lo) * C;
            const R* d = x.data() + (ty[y].hi * W + tx[xx].hi) * C;
            R* o = out.data() + (y * w + xx) * C;
            for (size_t ch = 0; ch < C; ++ch) {
                const R top = (R(1) - fx) * a[ch] + fx * b[ch];
                const R bot = (R(1) - fx) * c[ch] + fx * d[ch];
                o[ch] = (R(1) - fy) * top + fy * bot;
            }
        }
    }
}

template <typename R>
void resize_backward(std::span<const R> gout, size_t H, size_t W, size_t C, size_t h, size_t w, std::span<R> gx) {
    const auto ty = bilinear_taps(H, h);
    const auto tx = bilinear_taps(W, w);
    for (size_t y = 0; y < h; ++y) {
        const R fy = static_cast<R>(ty[y].frac);
        for (size_t xx = 0; xx < w; ++xx) {
            const R fx = static_cast<R>(tx[xx].frac);
            const R* g = gout.data() + (y * w + xx) * C;
            R* a = gx.data() + (ty[y].lo * W + tx[xx].lo) * C;
            R* b = gx.data() + (ty[y].lo * W + tx[xx].hi) * C;
            R* c = gx.data() + (ty[y].hi * W + tx[xx].lo) * C;
            R* d = gx.data() + (ty[y].hi * W + tx[xx].hi) * C;
            for (size_t ch = 0; ch < C; ++ch) {
                a[ch] += (R(1) - fy) * (R(1) - fx) * g[ch];
                b[ch] += (R(1) - fy) * fx * g[ch];
                c[ch] += fy * (R(1) - fx) * g[ch];
                d[ch] += fy * fx * g[ch];
            }
        }
    }
}

// --- patch-restricted attention ---------------------------------------------

// Geometry of a P x P window centred on each target pixel, clipped at borders.
struct WindowGeometry {
    size_t height = 0;
    size_t width = 0;
    size_t patch = 1;

    long radius() const { return static_cast<long>(patch / 2); }
    size_t taps() const { return patch * patch; }
    // Reference pixel for tap t of target (y,x); false when it falls outside the grid.
    bool source(size_t y, size_t x, size_t t, size_t& sy, size_t& sx) const {
        const long yy = static_cast<long>(y) + static_cast<long>(t / patch) - radius();
        const long xx = static_cast<long>(x) + static_cast<long>(t % patch) - radius();
        if (yy < 0 || xx < 0 || yy >= static_cast<long>(height) || xx >= static_cast<long>(width)) return false;
        sy = static_cast<size_t>(yy);
        sx = static_cast<size_t>(xx);
        return true;
    }
};

template <typename R>
void window_logits_forward(std::span<const R> q, std::span<const R> k, const WindowGeometry& g, size_t C,
                           std::span<R> out, size_t row_begin = 0,
                           size_t row_end = std::numeric_limits<size_t>::max()) {
    const size_t T = g.taps();
    row_end = std::min(row_end, g.height);
    for (size_t y = row_begin; y < row_end; ++y) {
        for (size_t x = 0; x < g.width; ++x) {
            const R* qp = q.data() + (y * g.width + x) * C;
            R* o = out.data() + (y * g.width + x) * T;
            for (size_t t = 0; t < T; ++t) {
                size_t sy, sx;
                if (!g.source(y, x, t, sy, sx)) {
                    o[t] = 0;
                    continue;
                }
                const R* kp = k.data() + (sy * g.width + sx) * C;
                R acc = 0;
                for (size_t c = 0; c < C; ++c) acc += qp[c] * kp[c];
                o[t] = acc;
            }
        }
    }
}

template <typename R>
void window_logits_backward(std::span<const R> q, std::span<const R> k, const WindowGeometry& g, size_t C,
                            std::span<const R> gout, std::span<R> gq, std::span<R> gk) {
    const size_t T = g.taps();
    for (size_t y = 0; y < g.height; ++y) {
        for (size_t x = 0; x < g.width; ++x) {
            const size_t qo = (y * g.width + x) * C;
            const R* go = gout.data() + (y * g.width + x) * T;
            for (size_t t = 0; t < T; ++t) {
                size_t sy, sx;
                if (!g.source(y, x, t, sy, sx)) continue;
                const R gv = go[t];
                if (gv == R(0)) continue;
                const size_t ko = (sy * g.width + sx) * C;
                if (!gq.empty())
                    for (size_t c = 0; c < C; ++c) gq[qo + c] += gv * k[ko + c];
                if (!gk.empty())
                    for (size_t c = 0; c < C; ++c) gk[ko + c] += gv * q[qo + c];
            }
        }
    }
}

// Softmax over the valid taps of each target pixel, max-subtracted. Invalid taps get 0.
template <typename R>
void window_softmax_forward(std::span<const R> logits, const WindowGeometry& g, std::span<R> out,
                            size_t row_begin = 0, size_t row_end = std::numeric_limits<size_t>::max()) {
    const size_t T = g.taps();
    row_end = std::min(row_end, g.height);
    for (size_t y = row_begin; y < row_end; ++y) {
        for (size_t x = 0; x < g.width; ++x) {
            const R* l = logits.data() + (y * g.width + x) * T;
            R* o = out.data() + (y * g.width + x) * T;
            R m = -std::numeric_limits<R>::infinity();
            size_t sy, sx;
            for (size_t t = 0; t < T; ++t)
                if (g.source(y, x, t, sy, sx)) m = std::max(m, l[t]);
            R total = 0;
            for (size_t t = 0; t < T; ++t) {
                if (g.source(y, x, t, sy, sx)) {
                    o[t] = std::exp(l[t] - m);
                    total += o[t];
                } else {
                    o[t] = 0;
                }
            }
            const R inv = R(1) / total;
            for (size_t t = 0; t < T; ++t) o[t] *= inv;
        }
    }
}

// glogits = y * (g - <g, y>) per target pixel.
template <typename R>
void window_softmax_backward(std::span<const R> y, const WindowGeometry& g, std::span<const R> gout,
                             std::span<R> glogits) {
    const size_t T = g.taps();
    const size_t n = g.height * g.width;
    for (size_t i = 0; i < n; ++i) {
        const R* yp = y.data() + i * T;
        const R* gp = gout.data() + i * T;
        R dot = 0;
        for (size_t t = 0; t < T; ++t) dot += gp[t] * yp[t];
        R* o = glogits.data() + i * T;
        for (size_t t = 0; t < T; ++t) o[t] += yp[t] * (gp[t] - dot);
    }
}

template <typename R>
void soft_copy_forward(std::span<const R> factors, std::span<const R> v, const WindowGeometry& g, size_t C,
                       std::span<R> out, size_t row_begin = 0,
                       size_t row_end = std::numeric_limits<size_t>::max()) {
    const size_t T = g.taps();
    row_end = std::min(row_end, g.height);
    for (size_t y = row_begin; y < row_end; ++y) {
        for (size_t x = 0; x < g.width; ++x) {
            const R* f = factors.data() + (y * g.width + x) * T;
            R* o = out.data() + (y * g.width + x) * C;
            for (size_t c = 0; c < C; ++c) o[c] = 0;
            for (size_t t = 0; t < T; ++t) {
                size_t sy, sx;
                if (!g.source(y, x, t, sy, sx)) continue;
                const R* vp = v.data() + (sy * g.width + sx) * C;
                for (size_t c = 0; c < C; ++c) o[c] += f[t] * vp[c];
            }
        }
    }
}

template <typename R>
void soft_copy_backward(std::span<const R> factors, std::span<const R> v, const WindowGeometry& g, size_t C,
                        std::span<const R> gout, std::span<R> gfactors, std::span<R> gv) {
    const size_t T = g.taps();
    for (size_t y = 0; y < g.height; ++y) {
        for (size_t x = 0; x < g.width; ++x) {
            const size_t i = y * g.width + x;
            const R* go = gout.data() + i * C;
            for (size_t t = 0; t < T; ++t) {
                size_t sy, sx;
                if (!g.source(y, x, t, sy, sx)) continue;
                const size_t vo = (sy * g.width + sx) * C;
                if (!gfactors.empty()) {
                    R acc = 0;
                    for (size_t c = 0; c < C; ++c) acc += go[c] * v[vo + c];
                    gfactors[i * T + t] += acc;
                }
                if (!gv.empty()) {
                    const R f = factors[i * T + t];
                    for (size_t c = 0; c < C; ++c) gv[vo + c] += f * go[c];
                }
            }
        }
    }
}

}  // namespace oneseg::kernels
