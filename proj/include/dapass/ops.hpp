#pragma once

// Differentiable operations over Tensor<T>. Every op builds the compute graph
// lazily: when no input requires a gradient the result is a plain buffer.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "dapass/kernels.hpp"
#include "dapass/tensor.hpp"
#include "dapass/types.hpp"

namespace dapass {

namespace detail {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value, std::vector<NodePtr<T>> parents,
                  std::function<void(Node<T>&)> backprop) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents)
        if (p->requires_grad) needs = true;
    n->requires_grad = needs;
    if (needs) {
        n->leaf = false;
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return Tensor<T>::wrap(std::move(n));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require(same_shape(a.shape(), b.shape()), "add: shape mismatch");
    std::vector<T> out(a.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
    auto pa = a.node(), pb = b.node();
    return detail::make_op<T>(a.shape(), std::move(out), {pa, pb}, [pa, pb](auto& self) {
        if (pa->requires_grad) pa->accumulate(self.grad);
        if (pb->requires_grad) pb->accumulate(self.grad);
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require(same_shape(a.shape(), b.shape()), "sub: shape mismatch");
    std::vector<T> out(a.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
    auto pa = a.node(), pb = b.node();
    return detail::make_op<T>(a.shape(), std::move(out), {pa, pb}, [pa, pb](auto& self) {
        if (pa->requires_grad) pa->accumulate(self.grad);
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require(same_shape(a.shape(), b.shape()), "mul: shape mismatch");
    std::vector<T> out(a.data());
    for (size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
    auto pa = a.node(), pb = b.node();
    return detail::make_op<T>(a.shape(), std::move(out), {pa, pb}, [pa, pb](auto& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pa->grad[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                pb->grad[i] += self.grad[i] * pa->value[i];
        }
    });
}

// k*x + b, elementwise with scalar constants
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T k, T b) {
    std::vector<T> out(x.data());
    for (auto& v : out) v = k * v + b;
    auto px = x.node();
    return detail::make_op<T>(x.shape(), std::move(out), {px}, [px, k](auto& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += k * self.grad[i];
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T k) {
    return affine(x, k, T(0));
}

template <typename T>
Tensor<T> one_minus(const Tensor<T>& x) {
    return affine(x, T(-1), T(1));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> out(x.data());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    auto px = x.node();
    return detail::make_op<T>(x.shape(), std::move(out), {px}, [px](auto& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (px->value[i] > T(0)) px->grad[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    std::vector<T> out(x.data());
    for (auto& v : out) v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    auto px = x.node();
    std::vector<T> y = out;
    return detail::make_op<T>(x.shape(), std::move(out), {px},
                              [px, y = std::move(y)](auto& self) {
                                  if (!px->requires_grad) return;
                                  px->ensure_grad();
                                  for (size_t i = 0; i < self.grad.size(); ++i)
                                      px->grad[i] += self.grad[i] * y[i] * (T(1) - y[i]);
                              });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    double acc = 0.0;
    for (const T& v : x.data()) acc += static_cast<double>(v);
    auto px = x.node();
    return detail::make_op<T>({1}, {static_cast<T>(acc)}, {px}, [px](auto& self) {
        if (!px->requires_grad) return;
        px->ensure_grad();
        const T g = self.grad[0];
        for (auto& v : px->grad) v += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul: bad shapes");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(static_cast<size_t>(m * n), T(0));
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t t = 0; t < k; ++t)
                acc += static_cast<double>(a.data()[i * k + t]) *
                       static_cast<double>(b.data()[t * n + j]);
            out[i * n + j] = static_cast<T>(acc);
        }
    auto pa = a.node(), pb = b.node();
    return detail::make_op<T>({m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](auto& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t t = 0; t < k; ++t) {
                    double acc = 0.0;
                    for (int64_t j = 0; j < n; ++j)
                        acc += static_cast<double>(self.grad[i * n + j]) *
                               static_cast<double>(pb->value[t * n + j]);
                    pa->grad[i * k + t] += static_cast<T>(acc);
                }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (int64_t t = 0; t < k; ++t)
                for (int64_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < m; ++i)
                        acc += static_cast<double>(pa->value[i * k + t]) *
                               static_cast<double>(self.grad[i * n + j]);
                    pb->grad[t * n + j] += static_cast<T>(acc);
                }
        }
    });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int64_t stride,
                 int64_t pad) {
    require(x.rank() == 3 && w.rank() == 4, "conv2d: expects (C,H,W) input and (Co,Ci,kh,kw) weights");
    require(x.dim(0) == w.dim(1), "conv2d: channel mismatch");
    const auto d = kernels::conv2d_dims(x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2),
                                        w.dim(3), stride, pad);
    const bool has_bias = b.defined();
    if (has_bias) require(b.rank() == 1 && b.dim(0) == d.co, "conv2d: bad bias shape");
    std::vector<T> out(static_cast<size_t>(d.co * d.oh * d.ow));
    kernels::conv2d_forward(x.data().data(), w.data().data(),
                            has_bias ? b.data().data() : nullptr, out.data(), d);
    auto px = x.node(), pw = w.node();
    std::vector<detail::NodePtr<T>> parents{px, pw};
    detail::NodePtr<T> pbias = has_bias ? b.node() : nullptr;
    if (has_bias) parents.push_back(pbias);
    return detail::make_op<T>({d.co, d.oh, d.ow}, std::move(out), std::move(parents),
                              [px, pw, pbias, d](auto& self) {
                                  if (px->requires_grad) {
                                      px->ensure_grad();
                                      kernels::conv2d_dinput(self.grad.data(), pw->value.data(),
                                                             px->grad.data(), d);
                                  }
                                  if (pw->requires_grad || (pbias && pbias->requires_grad)) {
                                      pw->ensure_grad();
                                      T* db = nullptr;
                                      if (pbias && pbias->requires_grad) {
                                          pbias->ensure_grad();
                                          db = pbias->grad.data();
                                      }
                                      kernels::conv2d_dweight(self.grad.data(), px->value.data(),
                                                              pw->grad.data(), db, d);
                                  }
                              });
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     int64_t groups, double eps = 1e-5) {
    require(x.rank() == 3, "group_norm: expects (C,H,W)");
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(gamma.numel() == c && beta.numel() == c, "group_norm: bad affine shapes");
    std::vector<T> out(x.data().size());
    auto st = kernels::group_norm_forward(x.data().data(), out.data(), gamma.data().data(),
                                          beta.data().data(), c, h, w, groups, eps);
    auto px = x.node(), pg = gamma.node(), pb = beta.node();
    return detail::make_op<T>(
        x.shape(), std::move(out), {px, pg, pb}, [px, pg, pb, st, c, h, w, groups](auto& self) {
            T* dx = nullptr;
            T *dgm = nullptr, *dbt = nullptr;
            if (px->requires_grad) {
                px->ensure_grad();
                dx = px->grad.data();
            }
            if (pg->requires_grad) {
                pg->ensure_grad();
                dgm = pg->grad.data();
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                dbt = pb->grad.data();
            }
            kernels::group_norm_backward(self.grad.data(), px->value.data(), pg->value.data(),
                                         st, dx, dgm, dbt, c, h, w, groups);
        });
}

// Bilinear interpolation to an explicit output size (align-corners = false).
// Linear in its input, so the backward pass is the exact transpose.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int64_t oh, int64_t ow) {
    require(x.rank() == 3, "bilinear_resize: expects (C,H,W)");
    require(oh >= 1 && ow >= 1, "bilinear_resize: bad output size");
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    std::vector<T> out(static_cast<size_t>(c * oh * ow));
    kernels::bilinear_forward(x.data().data(), out.data(), c, h, w, oh, ow);
    auto px = x.node();
    return detail::make_op<T>({c, oh, ow}, std::move(out), {px},
                              [px, c, h, w, oh, ow](auto& self) {
                                  if (!px->requires_grad) return;
                                  px->ensure_grad();
                                  kernels::bilinear_backward(self.grad.data(), px->grad.data(),
                                                             c, h, w, oh, ow);
                              });
}

// Resize by the rational factor num/den. The output size must be integral.
template <typename T>
Tensor<T> bilinear_scale(const Tensor<T>& x, int64_t num, int64_t den) {
    require(x.rank() == 3, "bilinear_scale: expects (C,H,W)");
    require(num >= 1 && den >= 1, "bilinear_scale: factor must be positive");
    const int64_t h = x.dim(1), w = x.dim(2);
    require((h * num) % den == 0 && (w * num) % den == 0,
            "bilinear_scale: factor " + std::to_string(num) + "/" + std::to_string(den) +
                " gives a non-integer output size for " + shape_str(x.shape()));
    return bilinear_resize(x, h * num / den, w * num / den);
}

template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, int64_t top, int64_t bottom, int64_t left, int64_t right) {
    require(x.rank() == 3, "crop2d: expects (C,H,W)");
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(0 <= top && top < bottom && bottom <= h && 0 <= left && left < right && right <= w,
            "crop2d: rectangle out of bounds");
    const int64_t ch = bottom - top, cw = right - left;
    std::vector<T> out(static_cast<size_t>(c * ch * cw));
    for (int64_t k = 0; k < c; ++k)
        for (int64_t y = 0; y < ch; ++y)
            for (int64_t xx = 0; xx < cw; ++xx)
                out[(k * ch + y) * cw + xx] = x.data()[(k * h + (top + y)) * w + (left + xx)];
    auto px = x.node();
    return detail::make_op<T>({c, ch, cw}, std::move(out), {px},
                              [px, c, h, w, ch, cw, top, left](auto& self) {
                                  if (!px->requires_grad) return;
                                  px->ensure_grad();
                                  for (int64_t k = 0; k < c; ++k)
                                      for (int64_t y = 0; y < ch; ++y)
                                          for (int64_t xx = 0; xx < cw; ++xx)
                                              px->grad[(k * h + (top + y)) * w + (left + xx)] +=
                                                  self.grad[(k * ch + y) * cw + xx];
                              });
}

// Places x into a zero tensor of size (C,OH,OW) at (top,left).
template <typename T>
Tensor<T> pad_insert2d(const Tensor<T>& x, int64_t oh, int64_t ow, int64_t top, int64_t left) {
    require(x.rank() == 3, "pad_insert2d: expects (C,H,W)");
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    require(top >= 0 && left >= 0 && top + h <= oh && left + w <= ow,
            "pad_insert2d: block does not fit");
    std::vector<T> out(static_cast<size_t>(c * oh * ow), T(0));
    for (int64_t k = 0; k < c; ++k)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx)
                out[(k * oh + (top + y)) * ow + (left + xx)] = x.data()[(k * h + y) * w + xx];
    auto px = x.node();
    return detail::make_op<T>({c, oh, ow}, std::move(out), {px},
                              [px, c, h, w, oh, ow, top, left](auto& self) {
                                  if (!px->requires_grad) return;
                                  px->ensure_grad();
                                  for (int64_t k = 0; k < c; ++k)
                                      for (int64_t y = 0; y < h; ++y)
                                          for (int64_t xx = 0; xx < w; ++xx)
                                              px->grad[(k * h + y) * w + xx] +=
                                                  self.grad[(k * oh + (top + y)) * ow +
                                                            (left + xx)];
                              });
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
    require(x.rank() >= 2, "softmax_channels: expects (C, spatial...)");
    const int64_t c = x.dim(0);
    const int64_t hw = x.numel() / c;
    std::vector<T> out(x.data().size());
    kernels::softmax_channels_forward(x.data().data(), out.data(), c, hw);
    auto px = x.node();
    std::vector<T> y = out;
    return detail::make_op<T>(x.shape(), std::move(out), {px},
                              [px, c, hw, y = std::move(y)](auto& self) {
                                  if (!px->requires_grad) return;
                                  px->ensure_grad();
                                  kernels::softmax_channels_backward(self.grad.data(), y.data(),
                                                                     px->grad.data(), c, hw);
                              });
}

// Pointwise KL(p || q) over the channel axis: returns the per-pixel map
// sum_c p_c * ln(p_c / q_c). Zero-probability p terms contribute nothing and
// q is clamped below at kKlEps before the log.
constexpr double kKlEps = 1e-12;

template <typename T>
Tensor<T> kl_divergence(const Tensor<T>& p, const Tensor<T>& q) {
    require(same_shape(p.shape(), q.shape()), "kl_divergence: shape mismatch");
    require(p.rank() >= 2, "kl_divergence: expects (C, spatial...)");
    for (const T& v : p.data())
        require(v >= T(0), "kl_divergence: negative entry in p");
    for (const T& v : q.data())
        require(v >= T(0), "kl_divergence: negative entry in q");
    const int64_t c = p.dim(0);
    const int64_t hw = p.numel() / c;
    Shape out_shape(p.shape().begin() + 1, p.shape().end());
    std::vector<T> out(static_cast<size_t>(hw));
    for (int64_t px_ = 0; px_ < hw; ++px_) {
        double acc = 0.0;
        for (int64_t k = 0; k < c; ++k) {
            const double pv = static_cast<double>(p.data()[k * hw + px_]);
            if (pv <= 0.0) continue;
            const double qv =
                std::max(static_cast<double>(q.data()[k * hw + px_]), kKlEps);
            acc += pv * (std::log(pv) - std::log(qv));
        }
        out[px_] = static_cast<T>(acc);
    }
    auto pp = p.node(), pq = q.node();
    return detail::make_op<T>(std::move(out_shape), std::move(out), {pp, pq},
                              [pp, pq, c, hw](auto& self) {
                                  for (int64_t px_ = 0; px_ < hw; ++px_) {
                                      const double g = static_cast<double>(self.grad[px_]);
                                      if (g == 0.0) continue;
                                      for (int64_t k = 0; k < c; ++k) {
                                          const double pv =
                                              static_cast<double>(pp->value[k * hw + px_]);
                                          const double qraw =
                                              static_cast<double>(pq->value[k * hw + px_]);
                                          const double qv = std::max(qraw, kKlEps);
                                          if (pp->requires_grad && pv > 0.0) {
                                              pp->ensure_grad();
                                              pp->grad[k * hw + px_] += static_cast<T>(
                                                  g * (std::log(pv) - std::log(qv) + 1.0));
                                          }
                                          if (pq->requires_grad && pv > 0.0 && qraw > kKlEps) {
                                              pq->ensure_grad();
                                              pq->grad[k * hw + px_] +=
                                                  static_cast<T>(-g * pv / qv);
                                          }
                                      }
                                  }
                              });
}

// Temperature-scaled, per-pixel-weighted cross entropy, averaged over pixels
// whose label is not the ignore sentinel. Weights are treated as constants.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const LabelMap& labels,
                                const Tensor<T>& weights, double temperature) {
    require(logits.rank() == 3, "softmax_cross_entropy: expects (C,H,W) logits");
    require(temperature > 0.0, "softmax_cross_entropy: temperature must be positive");
    const int64_t c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
    require(labels.h == h && labels.w == w, "softmax_cross_entropy: label shape mismatch");
    const bool weighted = weights.defined();
    if (weighted)
        require(weights.numel() == h * w, "softmax_cross_entropy: weight shape mismatch");
    const int64_t hw = h * w;
    for (int64_t p = 0; p < hw; ++p) {
        const int32_t lab = labels.v[p];
        if (lab == kIgnoreLabel) continue;
        require(lab >= 0 && lab < c, "softmax_cross_entropy: label " + std::to_string(lab) +
                                         " out of range for " + std::to_string(c) + " classes");
    }
    // Per-pixel losses in parallel, then a fixed-order sum.
    std::vector<double> px_loss(static_cast<size_t>(hw), 0.0);
    std::vector<int8_t> px_valid(static_cast<size_t>(hw), 0);
    parallel_for(hw, [&](int64_t p) {
        const int32_t lab = labels.v[p];
        if (lab == kIgnoreLabel) return;
        px_valid[p] = 1;
        double m = static_cast<double>(logits.data()[p]) / temperature;
        for (int64_t k = 1; k < c; ++k)
            m = std::max(m, static_cast<double>(logits.data()[k * hw + p]) / temperature);
        double se = 0.0;
        for (int64_t k = 0; k < c; ++k)
            se += std::exp(static_cast<double>(logits.data()[k * hw + p]) / temperature - m);
        const double lse = m + std::log(se);
        const double zl = static_cast<double>(logits.data()[lab * hw + p]) / temperature;
        const double wt = weighted ? static_cast<double>(weights.data()[p]) : 1.0;
        px_loss[p] = wt * (lse - zl);
    });
    int64_t valid = 0;
    double acc = 0.0;
    for (int64_t p = 0; p < hw; ++p) {
        valid += px_valid[p];
        acc += px_loss[p];
    }
    const double loss = valid > 0 ? acc / static_cast<double>(valid) : 0.0;
    auto pl = logits.node();
    LabelMap labs = labels;
    std::vector<T> wts = weighted ? weights.data() : std::vector<T>();
    return detail::make_op<T>(
        {1}, {static_cast<T>(loss)}, {pl},
        [pl, labs = std::move(labs), wts = std::move(wts), c, hw, valid,
         temperature](auto& self) {
            if (!pl->requires_grad || valid == 0) return;
            pl->ensure_grad();
            const double g = static_cast<double>(self.grad[0]);
            const double norm = g / (static_cast<double>(valid) * temperature);
            parallel_for(hw, [&](int64_t p) {
                const int32_t lab = labs.v[p];
                if (lab == kIgnoreLabel) return;
                double m = static_cast<double>(pl->value[p]) / temperature;
                for (int64_t k = 1; k < c; ++k)
                    m = std::max(m, static_cast<double>(pl->value[k * hw + p]) / temperature);
                double se = 0.0;
                for (int64_t k = 0; k < c; ++k)
                    se += std::exp(static_cast<double>(pl->value[k * hw + p]) / temperature - m);
                const double wt = wts.empty() ? 1.0 : static_cast<double>(wts[p]);
                for (int64_t k = 0; k < c; ++k) {
                    const double sm =
                        std::exp(static_cast<double>(pl->value[k * hw + p]) / temperature - m) /
                        se;
                    const double delta = (k == lab) ? 1.0 : 0.0;
                    pl->grad[k * hw + p] += static_cast<T>(norm * wt * (sm - delta));
                }
            });
        });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const LabelMap& labels,
                                double temperature = 1.0) {
    return softmax_cross_entropy(logits, labels, Tensor<T>(), temperature);
}

// ---- plain (non-differentiable) utilities ----

template <typename T>
LabelMap argmax_channels(const Tensor<T>& x) {
    require(x.rank() == 3, "argmax_channels: expects (C,H,W)");
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int64_t hw = h * w;
    LabelMap out(h, w);
    for (int64_t p = 0; p < hw; ++p) {
        int32_t best = 0;
        T bv = x.data()[p];
        for (int64_t k = 1; k < c; ++k) {
            const T v = x.data()[k * hw + p];
            if (v > bv) {
                bv = v;
                best = static_cast<int32_t>(k);
            }
        }
        out.v[p] = best;
    }
    return out;
}

template <typename T>
Tensor<T> max_channels(const Tensor<T>& x) {
    require(x.rank() == 3, "max_channels: expects (C,H,W)");
    const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int64_t hw = h * w;
    std::vector<T> out(static_cast<size_t>(hw));
    for (int64_t p = 0; p < hw; ++p) {
        T bv = x.data()[p];
        for (int64_t k = 1; k < c; ++k) bv = std::max(bv, x.data()[k * hw + p]);
        out[p] = bv;
    }
    return Tensor<T>::from_data({h, w}, std::move(out));
}

}  // namespace dapass
