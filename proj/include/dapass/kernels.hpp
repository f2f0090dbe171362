#pragma once

// Low-level dense kernels behind the autodiff ops. Parallelism is always
// element-owned: each output element is written by exactly one thread and the
// per-element accumulation order is fixed, so results are bit-identical for
// any worker count (and bit-identical to the serial reference kernels).

#include <cmath>
#include <cstdint>
#include <vector>

#include "dapass/common.hpp"
#include "dapass/parallel.hpp"

namespace dapass::kernels {

struct Conv2dDims {
    int64_t ci, h, w;       // input
    int64_t co, kh, kw;     // weights
    int64_t stride, pad;
    int64_t oh, ow;         // output
};

inline Conv2dDims conv2d_dims(int64_t ci, int64_t h, int64_t w, int64_t co, int64_t kh,
                              int64_t kw, int64_t stride, int64_t pad) {
    Conv2dDims d{ci, h, w, co, kh, kw, stride, pad, 0, 0};
    require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    d.oh = (h + 2 * pad - kh) / stride + 1;
    d.ow = (w + 2 * pad - kw) / stride + 1;
    require(d.oh >= 1 && d.ow >= 1, "conv2d: kernel larger than padded input");
    return d;
}

// For every (oy, ky, kx) the valid ox values form one contiguous run; the
// kernels below hoist the bounds work to run endpoints so the inner loops are
// plain vectorizable multiply-adds. Accumulation is in T, ordered (ci,ky,kx)
// per output row.
inline void valid_run(int64_t k, int64_t stride, int64_t pad, int64_t in_size, int64_t out_size,
                      int64_t& lo, int64_t& hi) {
    // valid out indices: 0 <= o*stride - pad + k < in_size
    lo = 0;
    const int64_t off = k - pad;
    if (off < 0) lo = (-off + stride - 1) / stride;
    hi = out_size - 1;
    const int64_t max_num = in_size - 1 - off;
    if (max_num < 0)
        hi = -1;
    else
        hi = std::min(hi, max_num / stride);
}

template <typename T>
void conv2d_forward(const T* x, const T* wgt, const T* bias, T* out, const Conv2dDims& d) {
    parallel_for(d.co * d.oh, [&](int64_t job) {
        const int64_t co = job / d.oh;
        const int64_t oy = job % d.oh;
        T* orow = out + (co * d.oh + oy) * d.ow;
        const T b = bias ? bias[co] : T(0);
        for (int64_t ox = 0; ox < d.ow; ++ox) orow[ox] = b;
        for (int64_t ci = 0; ci < d.ci; ++ci) {
            for (int64_t ky = 0; ky < d.kh; ++ky) {
                const int64_t y = oy * d.stride - d.pad + ky;
                if (y < 0 || y >= d.h) continue;
                const T* xrow = x + (ci * d.h + y) * d.w;
                const T* wrow = wgt + ((co * d.ci + ci) * d.kh + ky) * d.kw;
                for (int64_t kx = 0; kx < d.kw; ++kx) {
                    int64_t lo, hi;
                    valid_run(kx, d.stride, d.pad, d.w, d.ow, lo, hi);
                    const T wv = wrow[kx];
                    const T* xs = xrow + lo * d.stride - d.pad + kx;
                    if (d.stride == 1) {
                        for (int64_t ox = lo; ox <= hi; ++ox)
                            orow[ox] += wv * xs[ox - lo];
                    } else {
                        for (int64_t ox = lo; ox <= hi; ++ox)
                            orow[ox] += wv * xs[(ox - lo) * d.stride];
                    }
                }
            }
        }
    });
}

template <typename T>
void conv2d_dinput(const T* dout, const T* wgt, T* dx, const Conv2dDims& d) {
    parallel_for(d.ci * d.h, [&](int64_t job) {
        const int64_t ci = job / d.h;
        const int64_t y = job % d.h;
        T* drow = dx + (ci * d.h + y) * d.w;
        for (int64_t co = 0; co < d.co; ++co) {
            for (int64_t ky = 0; ky < d.kh; ++ky) {
                const int64_t ny = y + d.pad - ky;
                if (ny < 0 || ny % d.stride != 0) continue;
                const int64_t oy = ny / d.stride;
                if (oy >= d.oh) continue;
                const T* grow = dout + (co * d.oh + oy) * d.ow;
                const T* wrow = wgt + ((co * d.ci + ci) * d.kh + ky) * d.kw;
                for (int64_t kx = 0; kx < d.kw; ++kx) {
                    int64_t lo, hi;
                    valid_run(kx, d.stride, d.pad, d.w, d.ow, lo, hi);
                    const T wv = wrow[kx];
                    T* ds = drow + lo * d.stride - d.pad + kx;
                    if (d.stride == 1) {
                        for (int64_t ox = lo; ox <= hi; ++ox)
                            ds[ox - lo] += wv * grow[ox];
                    } else {
                        for (int64_t ox = lo; ox <= hi; ++ox)
                            ds[(ox - lo) * d.stride] += wv * grow[ox];
                    }
                }
            }
        }
    });
}

template <typename T>
void conv2d_dweight(const T* dout, const T* x, T* dw, T* db, const Conv2dDims& d) {
    parallel_for(d.co, [&](int64_t co) {
        double bacc = 0.0;
        for (int64_t oy = 0; oy < d.oh; ++oy) {
            const T* grow = dout + (co * d.oh + oy) * d.ow;
            T racc = T(0);
            for (int64_t ox = 0; ox < d.ow; ++ox) racc += grow[ox];
            bacc += static_cast<double>(racc);
        }
        if (db) db[co] += static_cast<T>(bacc);
        for (int64_t ci = 0; ci < d.ci; ++ci) {
            for (int64_t ky = 0; ky < d.kh; ++ky) {
                for (int64_t kx = 0; kx < d.kw; ++kx) {
                    int64_t lo, hi;
                    valid_run(kx, d.stride, d.pad, d.w, d.ow, lo, hi);
                    double acc = 0.0;
                    for (int64_t oy = 0; oy < d.oh; ++oy) {
                        const int64_t y = oy * d.stride - d.pad + ky;
                        if (y < 0 || y >= d.h) continue;
                        const T* grow = dout + (co * d.oh + oy) * d.ow;
                        const T* xs = x + (ci * d.h + y) * d.w + lo * d.stride - d.pad + kx;
                        T racc = T(0);
                        if (d.stride == 1) {
                            for (int64_t ox = lo; ox <= hi; ++ox)
                                racc += grow[ox] * xs[ox - lo];
                        } else {
                            for (int64_t ox = lo; ox <= hi; ++ox)
                                racc += grow[ox] * xs[(ox - lo) * d.stride];
                        }
                        acc += static_cast<double>(racc);
                    }
                    dw[((co * d.ci + ci) * d.kh + ky) * d.kw + kx] += static_cast<T>(acc);
                }
            }
        }
    });
}

struct GroupStats {
    std::vector<double> mean, inv_std;
};

template <typename T>
GroupStats group_norm_forward(const T* x, T* out, const T* gamma, const T* beta, int64_t c,
                              int64_t h, int64_t w, int64_t groups, double eps) {
    require(c % groups == 0, "group_norm: channels not divisible by groups");
    const int64_t cpg = c / groups;
    const int64_t n = cpg * h * w;
    GroupStats st;
    st.mean.resize(groups);
    st.inv_std.resize(groups);
    for (int64_t g = 0; g < groups; ++g) {
        double s = 0.0, s2 = 0.0;
        const T* base = x + g * cpg * h * w;
        for (int64_t i = 0; i < n; ++i) {
            const double v = static_cast<double>(base[i]);
            s += v;
            s2 += v * v;
        }
        const double m = s / n;
        double var = s2 / n - m * m;
        if (var < 0) var = 0;
        st.mean[g] = m;
        st.inv_std[g] = 1.0 / std::sqrt(var + eps);
    }
    parallel_for(c, [&](int64_t ch) {
        const int64_t g = ch / cpg;
        const double m = st.mean[g], is = st.inv_std[g];
        const double gm = static_cast<double>(gamma[ch]), bt = static_cast<double>(beta[ch]);
        const T* xin = x + ch * h * w;
        T* o = out + ch * h * w;
        for (int64_t i = 0; i < h * w; ++i)
            o[i] = static_cast<T>(gm * ((static_cast<double>(xin[i]) - m) * is) + bt);
    });
    return st;
}

template <typename T>
void group_norm_backward(const T* dout, const T* x, const T* gamma, const GroupStats& st,
                         T* dx, T* dgamma, T* dbeta, int64_t c, int64_t h, int64_t w,
                         int64_t groups) {
    const int64_t cpg = c / groups;
    const int64_t n = cpg * h * w;
    if (dgamma || dbeta) {
        parallel_for(c, [&](int64_t ch) {
            const int64_t g = ch / cpg;
            const double m = st.mean[g], is = st.inv_std[g];
            double sg = 0.0, sb = 0.0;
            const T* xin = x + ch * h * w;
            const T* dy = dout + ch * h * w;
            for (int64_t i = 0; i < h * w; ++i) {
                const double xh = (static_cast<double>(xin[i]) - m) * is;
                sg += static_cast<double>(dy[i]) * xh;
                sb += static_cast<double>(dy[i]);
            }
            if (dgamma) dgamma[ch] += static_cast<T>(sg);
            if (dbeta) dbeta[ch] += static_cast<T>(sb);
        });
    }
    if (!dx) return;
    parallel_for(groups, [&](int64_t g) {
        const double m = st.mean[g], is = st.inv_std[g];
        const T* xg = x + g * cpg * h * w;
        const T* dyg = dout + g * cpg * h * w;
        double s1 = 0.0, s2 = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const int64_t ch = g * cpg + i / (h * w);
            const double gi = static_cast<double>(dyg[i]) * static_cast<double>(gamma[ch]);
            const double xh = (static_cast<double>(xg[i]) - m) * is;
            s1 += gi;
            s2 += gi * xh;
        }
        T* dxg = dx + g * cpg * h * w;
        for (int64_t i = 0; i < n; ++i) {
            const int64_t ch = g * cpg + i / (h * w);
            const double gi = static_cast<double>(dyg[i]) * static_cast<double>(gamma[ch]);
            const double xh = (static_cast<double>(xg[i]) - m) * is;
            dxg[i] += static_cast<T>((gi - s1 / n - xh * s2 / n) * is);
        }
    });
}

// align-corners = false source coordinate with border clamp
inline void bilinear_axis(int64_t out_i, int64_t in_size, int64_t out_size, int64_t& i0,
                          int64_t& i1, double& frac) {
    double s = (static_cast<double>(out_i) + 0.5) * static_cast<double>(in_size) /
                   static_cast<double>(out_size) -
               0.5;
    if (s < 0) s = 0;
    const double hi = static_cast<double>(in_size - 1);
    if (s > hi) s = hi;
    i0 = static_cast<int64_t>(s);
    if (i0 > in_size - 1) i0 = in_size - 1;
    i1 = (i0 + 1 < in_size) ? i0 + 1 : i0;
    frac = s - static_cast<double>(i0);
}

template <typename T>
void bilinear_forward(const T* x, T* out, int64_t c, int64_t h, int64_t w, int64_t oh,
                      int64_t ow) {
    parallel_for(c * oh, [&](int64_t job) {
        const int64_t ch = job / oh;
        const int64_t oy = job % oh;
        int64_t y0, y1;
        double fy;
        bilinear_axis(oy, h, oh, y0, y1, fy);
        const T* plane = x + ch * h * w;
        T* o = out + (ch * oh + oy) * ow;
        for (int64_t ox = 0; ox < ow; ++ox) {
            int64_t x0, x1;
            double fx;
            bilinear_axis(ox, w, ow, x0, x1, fx);
            const double v = (1 - fy) * (1 - fx) * static_cast<double>(plane[y0 * w + x0]) +
                             (1 - fy) * fx * static_cast<double>(plane[y0 * w + x1]) +
                             fy * (1 - fx) * static_cast<double>(plane[y1 * w + x0]) +
                             fy * fx * static_cast<double>(plane[y1 * w + x1]);
            o[ox] = static_cast<T>(v);
        }
    });
}

// Transpose of the forward interpolation; scatter is per-channel so each
// input plane is owned by one thread.
template <typename T>
void bilinear_backward(const T* dout, T* dx, int64_t c, int64_t h, int64_t w, int64_t oh,
                       int64_t ow) {
    parallel_for(c, [&](int64_t ch) {
        const T* do_ = dout + ch * oh * ow;
        T* plane = dx + ch * h * w;
        for (int64_t oy = 0; oy < oh; ++oy) {
            int64_t y0, y1;
            double fy;
            bilinear_axis(oy, h, oh, y0, y1, fy);
            for (int64_t ox = 0; ox < ow; ++ox) {
                int64_t x0, x1;
                double fx;
                bilinear_axis(ox, w, ow, x0, x1, fx);
                const double g = static_cast<double>(do_[oy * ow + ox]);
                plane[y0 * w + x0] += static_cast<T>((1 - fy) * (1 - fx) * g);
                plane[y0 * w + x1] += static_cast<T>((1 - fy) * fx * g);
                plane[y1 * w + x0] += static_cast<T>(fy * (1 - fx) * g);
                plane[y1 * w + x1] += static_cast<T>(fy * fx * g);
            }
        }
    });
}

// Channel softmax at every pixel, max-subtracted.
template <typename T>
void softmax_channels_forward(const T* x, T* out, int64_t c, int64_t hw) {
    parallel_for(hw, [&](int64_t p) {
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
    });
}

template <typename T>
void softmax_channels_backward(const T* dout, const T* y, T* dx, int64_t c, int64_t hw) {
    parallel_for(hw, [&](int64_t p) {
        double dot = 0.0;
        for (int64_t k = 0; k < c; ++k)
            dot += static_cast<double>(dout[k * hw + p]) * static_cast<double>(y[k * hw + p]);
        for (int64_t k = 0; k < c; ++k)
            dx[k * hw + p] += static_cast<T>(static_cast<double>(y[k * hw + p]) *
                                             (static_cast<double>(dout[k * hw + p]) - dot));
    });
}

}  // namespace dapass::kernels
