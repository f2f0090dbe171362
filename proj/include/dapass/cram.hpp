#pragma once

// Cross-resolution fusion: a wide context crop is downsampled by s before the
// network sees it, a smaller detail crop is taken at native resolution from
// inside the context region, and the two stride-o prediction grids are fused
// with a sigmoid attention map predicted from the context branch.
//
// Geometry conventions, fixed project-wide:
//  * Context crop corners lie on the k = s*o grid of the image; the crop
//    covers (s*h_l) x (s*w_l) pixels and is resized to h_l x w_l.
//  * Detail crop coordinates are relative to the context region, at native
//    resolution, with all four boundaries multiples of o. Its size is
//    h_h x w_h, so its prediction grid is (h_h/o) x (w_h/o) and it occupies
//    exactly that cell rectangle of the fused grid (offset b/o).
//  * The fused grid is the stride-o grid of the full-resolution context
//    region, (s*h_l/o) x (s*w_l/o).
//  * Attention is masked on the fused grid after upsampling: the mask is an
//    exact cell indicator of the detail rectangle, so attention is exactly
//    zero outside the detail region and constants are preserved exactly.

#include <cstdint>

#include "dapass/ops.hpp"
#include "dapass/rng.hpp"

namespace dapass::cram {

struct CropSpec {
    int64_t top = 0, bottom = 0, left = 0, right = 0;
    int64_t scale = 1;          // s for context crops, 1 for detail crops
    int64_t out_h = 0, out_w = 0;  // size after any resize

    int64_t height() const { return bottom - top; }
    int64_t width() const { return right - left; }
};

inline CropSpec sample_context_crop(int64_t H, int64_t W, int64_t s, int64_t o, int64_t h_l,
                                    int64_t w_l, Rng& rng) {
    require(s >= 1 && o >= 1, "context crop: s and o must be >= 1");
    const int64_t k = s * o;
    require(H % k == 0 && W % k == 0,
            "context crop: image dims must be divisible by k = s*o = " + std::to_string(k));
    require(h_l % o == 0 && w_l % o == 0, "context crop: crop size must be divisible by o");
    require(s * h_l <= H && s * w_l <= W, "context crop larger than image");
    const int64_t top_choices = (H - s * h_l) / k + 1;
    const int64_t left_choices = (W - s * w_l) / k + 1;
    CropSpec c;
    c.top = k * rng.uniform_int(top_choices);
    c.left = k * rng.uniform_int(left_choices);
    c.bottom = c.top + s * h_l;
    c.right = c.left + s * w_l;
    c.scale = s;
    c.out_h = h_l;
    c.out_w = w_l;
    return c;
}

inline CropSpec sample_detail_crop(const CropSpec& ctx, int64_t h_h, int64_t w_h, int64_t o,
                                   Rng& rng) {
    require(h_h <= ctx.out_h && w_h <= ctx.out_w, "detail crop larger than context crop");
    require(h_h % o == 0 && w_h % o == 0, "detail crop size must be divisible by o");
    const int64_t rh = ctx.height(), rw = ctx.width();
    const int64_t top_choices = (rh - h_h) / o + 1;
    const int64_t left_choices = (rw - w_h) / o + 1;
    CropSpec d;
    d.top = o * rng.uniform_int(top_choices);
    d.left = o * rng.uniform_int(left_choices);
    d.bottom = d.top + h_h;
    d.right = d.left + w_h;
    d.scale = 1;
    d.out_h = h_h;
    d.out_w = w_h;
    return d;
}

// Crop + downsample by 1/s (identity when s = 1).
template <typename T>
Tensor<T> extract_context(const Tensor<T>& image, const CropSpec& ctx) {
    auto c = crop2d(image, ctx.top, ctx.bottom, ctx.left, ctx.right);
    if (ctx.height() == ctx.out_h && ctx.width() == ctx.out_w) return c;
    return bilinear_resize(c, ctx.out_h, ctx.out_w);
}

// Native-resolution pixels of the detail rectangle inside the context region.
template <typename T>
Tensor<T> extract_detail(const Tensor<T>& image, const CropSpec& ctx, const CropSpec& det) {
    return crop2d(image, ctx.top + det.top, ctx.top + det.bottom, ctx.left + det.left,
                  ctx.left + det.right);
}

inline LabelMap crop_label(const LabelMap& l, int64_t top, int64_t bottom, int64_t left,
                           int64_t right) {
    require(0 <= top && top < bottom && bottom <= l.h && 0 <= left && left < right &&
                right <= l.w,
            "crop_label: rectangle out of bounds");
    LabelMap out(bottom - top, right - left);
    for (int64_t y = 0; y < out.h; ++y)
        for (int64_t x = 0; x < out.w; ++x) out.at(y, x) = l.at(top + y, left + x);
    return out;
}

template <typename T>
Tensor<T> crop_plane(const Tensor<T>& t, int64_t top, int64_t bottom, int64_t left,
                     int64_t right) {
    require(t.rank() == 2, "crop_plane: expects (H,W)");
    const int64_t h = bottom - top, w = right - left;
    std::vector<T> d(static_cast<size_t>(h * w));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            d[y * w + x] = t.data()[(top + y) * t.dim(1) + (left + x)];
    return Tensor<T>::from_data({h, w}, std::move(d));
}

template <typename T>
struct FusionInputs {
    Tensor<T> context_logits;  // (C, h_l/o, w_l/o)
    Tensor<T> detail_logits;   // (C, h_h/o, w_h/o)
    Tensor<T> attention;       // (1, h_l/o, w_l/o), post-sigmoid values in [0,1]
    int64_t detail_cell_top = 0, detail_cell_left = 0;  // detail offset / o
};

namespace detail_ops {

// (1,H,W) -> (C,H,W); backward sums over channels.
template <typename T>
Tensor<T> repeat_channels(const Tensor<T>& x, int64_t c) {
    require(x.rank() == 3 && x.dim(0) == 1, "repeat_channels: expects (1,H,W)");
    const int64_t hw = x.dim(1) * x.dim(2);
    std::vector<T> out(static_cast<size_t>(c * hw));
    for (int64_t k = 0; k < c; ++k)
        for (int64_t p = 0; p < hw; ++p) out[k * hw + p] = x.data()[p];
    auto px = x.node();
    return dapass::detail::make_op<T>({c, x.dim(1), x.dim(2)}, std::move(out), {px},
                                      [px, c, hw](auto& self) {
                                          if (!px->requires_grad) return;
                                          px->ensure_grad();
                                          for (int64_t p = 0; p < hw; ++p) {
                                              T acc = T(0);
                                              for (int64_t k = 0; k < c; ++k)
                                                  acc += self.grad[k * hw + p];
                                              px->grad[p] += acc;
                                          }
                                      });
}

}  // namespace detail_ops

// Fused prediction on the stride-o grid of the full-resolution context
// region. The detail prediction is zero-padded into place; the upsampled
// attention is zeroed outside the detail rectangle before blending, so the
// gradient w.r.t. the detail logits is exactly zero outside their region and
// fusing two equal constants returns that constant everywhere.
template <typename T>
Tensor<T> fuse(const FusionInputs<T>& in, int64_t s, int64_t o) {
    require(in.context_logits.defined() && in.detail_logits.defined() && in.attention.defined(),
            "fuse: missing inputs");
    require(in.context_logits.rank() == 3 && in.detail_logits.rank() == 3 &&
                in.attention.rank() == 3,
            "fuse: inputs must be (C,h,w)");
    const int64_t c = in.context_logits.dim(0);
    const int64_t gh = in.context_logits.dim(1), gw = in.context_logits.dim(2);
    require(in.attention.dim(0) == 1 && in.attention.dim(1) == gh && in.attention.dim(2) == gw,
            "fuse: attention grid must match the context grid");
    const int64_t dh = in.detail_logits.dim(1), dw = in.detail_logits.dim(2);
    require(in.detail_logits.dim(0) == c, "fuse: class count mismatch");
    const int64_t fh = s * gh, fw = s * gw;
    require(in.detail_cell_top >= 0 && in.detail_cell_left >= 0 &&
                in.detail_cell_top + dh <= fh && in.detail_cell_left + dw <= fw,
            "fuse: detail rectangle does not fit the fused grid");
    for (const T& v : in.attention.data())
        require(v >= T(0) && v <= T(1), "fuse: attention values must lie in [0,1]");

    auto up_ctx = bilinear_resize(in.context_logits, fh, fw);
    auto up_att = bilinear_resize(in.attention, fh, fw);

    Tensor<T> mask = Tensor<T>::zeros({1, fh, fw});
    for (int64_t y = 0; y < dh; ++y)
        for (int64_t x = 0; x < dw; ++x)
            mask.mutable_data()[(in.detail_cell_top + y) * fw + (in.detail_cell_left + x)] = T(1);

    auto att_masked = mul(up_att, mask);
    auto att_c = detail_ops::repeat_channels(att_masked, c);
    auto padded = pad_insert2d(in.detail_logits, fh, fw, in.detail_cell_top, in.detail_cell_left);
    // Blend as ctx + a*(pad - ctx): algebraically (1-a)*ctx + a*pad, but this
    // form keeps equal constants bit-exact.
    return add(up_ctx, mul(att_c, sub(padded, up_ctx)));
}

template <typename T>
struct CramLossParts {
    Tensor<T> total, fused_ce, detail_ce;
};

// (1 - lambda_d) * CE(fused branch) + lambda_d * CE(detail branch); both
// logit grids are upsampled by o to label resolution first.
template <typename T>
CramLossParts<T> cram_loss(const Tensor<T>& fused_logits, const Tensor<T>& detail_logits,
                           const LabelMap& fused_labels, const LabelMap& detail_labels,
                           const Tensor<T>& fused_weights, const Tensor<T>& detail_weights,
                           double lambda_d, double temperature, int64_t o) {
    require(lambda_d >= 0.0 && lambda_d <= 1.0, "cram_loss: lambda_d must be in [0,1]");
    auto fused_up = bilinear_resize(fused_logits, fused_logits.dim(1) * o,
                                    fused_logits.dim(2) * o);
    auto detail_up = bilinear_resize(detail_logits, detail_logits.dim(1) * o,
                                     detail_logits.dim(2) * o);
    CramLossParts<T> parts;
    parts.fused_ce = softmax_cross_entropy(fused_up, fused_labels, fused_weights, temperature);
    parts.detail_ce =
        softmax_cross_entropy(detail_up, detail_labels, detail_weights, temperature);
    parts.total = add(scale(parts.fused_ce, static_cast<T>(1.0 - lambda_d)),
                      scale(parts.detail_ce, static_cast<T>(lambda_d)));
    return parts;
}

}  // namespace dapass::cram
