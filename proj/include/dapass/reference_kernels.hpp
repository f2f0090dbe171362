#pragma once

// Naive single-threaded counterparts of the kernels in kernels.hpp. These are
// the oracle implementations: tests assert the parallel kernels match them
// bit-for-bit, and the benchmark tool reports the speedup against them.

#include <cmath>
#include <cstdint>

#include "dapass/kernels.hpp"

namespace dapass::reference {

using kernels::Conv2dDims;

// Same accumulation order and accumulator types as kernels.hpp (per output
// row: bias first, then (ci,ky,kx) taps over the valid ox values), expressed
// with plain per-pixel bounds checks and no parallelism.
template <typename T>
void conv2d_forward(const T* x, const T* wgt, const T* bias, T* out, const Conv2dDims& d) {
    for (int64_t co = 0; co < d.co; ++co) {
        for (int64_t oy = 0; oy < d.oh; ++oy) {
            T* orow = out + (co * d.oh + oy) * d.ow;
            for (int64_t ox = 0; ox < d.ow; ++ox) orow[ox] = bias ? bias[co] : T(0);
            for (int64_t ci = 0; ci < d.ci; ++ci)
                for (int64_t ky = 0; ky < d.kh; ++ky) {
                    const int64_t y = oy * d.stride - d.pad + ky;
                    if (y < 0 || y >= d.h) continue;
                    for (int64_t kx = 0; kx < d.kw; ++kx) {
                        const T wv = wgt[((co * d.ci + ci) * d.kh + ky) * d.kw + kx];
                        for (int64_t ox = 0; ox < d.ow; ++ox) {
                            const int64_t xx = ox * d.stride - d.pad + kx;
                            if (xx < 0 || xx >= d.w) continue;
                            orow[ox] += wv * x[(ci * d.h + y) * d.w + xx];
                        }
                    }
                }
        }
    }
}

template <typename T>
void conv2d_dinput(const T* dout, const T* wgt, T* dx, const Conv2dDims& d) {
    for (int64_t ci = 0; ci < d.ci; ++ci) {
        for (int64_t y = 0; y < d.h; ++y) {
            T* drow = dx + (ci * d.h + y) * d.w;
            for (int64_t co = 0; co < d.co; ++co)
                for (int64_t ky = 0; ky < d.kh; ++ky) {
                    const int64_t ny = y + d.pad - ky;
                    if (ny < 0 || ny % d.stride != 0) continue;
                    const int64_t oy = ny / d.stride;
                    if (oy >= d.oh) continue;
                    for (int64_t kx = 0; kx < d.kw; ++kx) {
                        const T wv = wgt[((co * d.ci + ci) * d.kh + ky) * d.kw + kx];
                        for (int64_t ox = 0; ox < d.ow; ++ox) {
                            const int64_t xx = ox * d.stride - d.pad + kx;
                            if (xx < 0 || xx >= d.w) continue;
                            drow[xx] += wv * dout[(co * d.oh + oy) * d.ow + ox];
                        }
                    }
                }
        }
    }
}

template <typename T>
void conv2d_dweight(const T* dout, const T* x, T* dw, T* db, const Conv2dDims& d) {
    for (int64_t co = 0; co < d.co; ++co) {
        double bacc = 0.0;
        for (int64_t oy = 0; oy < d.oh; ++oy) {
            T racc = T(0);
            for (int64_t ox = 0; ox < d.ow; ++ox) racc += dout[(co * d.oh + oy) * d.ow + ox];
            bacc += static_cast<double>(racc);
        }
        if (db) db[co] += static_cast<T>(bacc);
        for (int64_t ci = 0; ci < d.ci; ++ci)
            for (int64_t ky = 0; ky < d.kh; ++ky)
                for (int64_t kx = 0; kx < d.kw; ++kx) {
                    double acc = 0.0;
                    for (int64_t oy = 0; oy < d.oh; ++oy) {
                        const int64_t y = oy * d.stride - d.pad + ky;
                        if (y < 0 || y >= d.h) continue;
                        T racc = T(0);
                        for (int64_t ox = 0; ox < d.ow; ++ox) {
                            const int64_t xx = ox * d.stride - d.pad + kx;
                            if (xx < 0 || xx >= d.w) continue;
                            racc += dout[(co * d.oh + oy) * d.ow + ox] *
                                    x[(ci * d.h + y) * d.w + xx];
                        }
                        acc += static_cast<double>(racc);
                    }
                    dw[((co * d.ci + ci) * d.kh + ky) * d.kw + kx] += static_cast<T>(acc);
                }
    }
}

template <typename T>
kernels::GroupStats group_norm_forward(const T* x, T* out, const T* gamma, const T* beta,
                                       int64_t c, int64_t h, int64_t w, int64_t groups,
                                       double eps) {
    const int64_t cpg = c / groups;
    const int64_t n = cpg * h * w;
    kernels::GroupStats st;
    st.mean.resize(groups);
    st.inv_std.resize(groups);
    for (int64_t g = 0; g < groups; ++g) {
        double s = 0.0, s2 = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double v = static_cast<double>(x[g * n + i]);
            s += v;
            s2 += v * v;
        }
        const double m = s / n;
        double var = s2 / n - m * m;
        if (var < 0) var = 0;
        st.mean[g] = m;
        st.inv_std[g] = 1.0 / std::sqrt(var + eps);
    }
    for (int64_t ch = 0; ch < c; ++ch) {
        const int64_t g = ch / cpg;
        for (int64_t i = 0; i < h * w; ++i) {
            const double xh = (static_cast<double>(x[ch * h * w + i]) - st.mean[g]) * st.inv_std[g];
            out[ch * h * w + i] = static_cast<T>(static_cast<double>(gamma[ch]) * xh +
                                                 static_cast<double>(beta[ch]));
        }
    }
    return st;
}

template <typename T>
void bilinear_forward(const T* x, T* out, int64_t c, int64_t h, int64_t w, int64_t oh,
                      int64_t ow) {
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox) {
                int64_t y0, y1, x0, x1;
                double fy, fx;
                kernels::bilinear_axis(oy, h, oh, y0, y1, fy);
                kernels::bilinear_axis(ox, w, ow, x0, x1, fx);
                const T* plane = x + ch * h * w;
                const double v =
                    (1 - fy) * (1 - fx) * static_cast<double>(plane[y0 * w + x0]) +
                    (1 - fy) * fx * static_cast<double>(plane[y0 * w + x1]) +
                    fy * (1 - fx) * static_cast<double>(plane[y1 * w + x0]) +
                    fy * fx * static_cast<double>(plane[y1 * w + x1]);
                out[(ch * oh + oy) * ow + ox] = static_cast<T>(v);
            }
}

template <typename T>
void softmax_channels_forward(const T* x, T* out, int64_t c, int64_t hw) {
    for (int64_t p = 0; p < hw; ++p) {
        double m = static_cast<double>(x[p]);
        for (int64_t k = 1; k < c; ++k)
            m = std::max(m, static_cast<double>(x[k * hw + p]));
        double sum = 0.0;
        for (int64_t k = 0; k < c; ++k) {
            const double e = std::exp(static_cast<double>(x[k * hw + p]) - m);
            out[k * hw + p] = static_cast<T>(e);
            sum += e;
        }
        for (int64_t k = 0; k < c; ++k)
            out[k * hw + p] = static_cast<T>(static_cast<double>(out[k * hw + p]) / sum);
    }
}

}  // namespace dapass::reference
