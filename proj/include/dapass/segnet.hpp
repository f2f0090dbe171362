#pragma once

// Small segmentation network: shared strided-conv encoder, a 1x1 class head
// and a 1x1 scale-attention head on the same features. Parameters can be
// snapshotted and restored bit-exactly, which consistency scoring and
// checkpointing rely on.

#include <string>
#include <utility>
#include <vector>

#include "dapass/ops.hpp"
#include "dapass/rng.hpp"
#include "dapass/tensor.hpp"

namespace dapass {

struct SegModelConfig {
    std::string arch = "b1-toy";  // "b1-toy" (16/32/64) or "b2-toy" (24/48/96)
    int64_t output_stride = 4;    // 4 or 8
    int64_t classes = kNumClasses;
    int64_t groups = 4;

    std::vector<int64_t> widths() const {
        if (arch == "b1-toy") return {16, 32, 64};
        if (arch == "b2-toy") return {24, 48, 96};
        throw InvalidArgument("unknown arch '" + arch + "' (expected b1-toy or b2-toy)");
    }
    std::vector<int64_t> strides() const {
        if (output_stride == 8) return {2, 2, 2};
        if (output_stride == 4) return {2, 2, 1};
        throw InvalidArgument("output_stride must be 4 or 8");
    }
    bool operator==(const SegModelConfig& o) const {
        return arch == o.arch && output_stride == o.output_stride && classes == o.classes &&
               groups == o.groups;
    }
};

template <typename T>
struct ParamSnapshot {
    std::string tag;
    int64_t iteration = 0;
    std::vector<std::pair<std::string, Tensor<T>>> values;  // detached deep copies

    const Tensor<T>* find(const std::string& name) const {
        for (const auto& [n, t] : values)
            if (n == name) return &t;
        return nullptr;
    }
};

template <typename T>
struct SegForward {
    Tensor<T> features;    // encoder output at stride o
    Tensor<T> logits;      // (C, H/o, W/o)
    Tensor<T> attn_logit;  // (1, H/o, W/o), pre-sigmoid
};

template <typename T>
class SegModel {
public:
    SegModel() = default;

    static SegModel init(const SegModelConfig& cfg, uint64_t seed) {
        SegModel m;
        m.cfg_ = cfg;
        Rng rng(seed);
        const auto widths = cfg.widths();
        const auto strides = cfg.strides();
        int64_t in_ch = 3;
        for (size_t i = 0; i < widths.size(); ++i) {
            Block blk;
            blk.stride = strides[i];
            blk.w = kaiming_uniform(rng, widths[i], in_ch, 3, 3);
            blk.b = Tensor<T>::zeros({widths[i]}, true);
            blk.gamma = Tensor<T>::full({widths[i]}, T(1), true);
            blk.beta = Tensor<T>::zeros({widths[i]}, true);
            m.blocks_.push_back(std::move(blk));
            in_ch = widths[i];
        }
        m.seg_w_ = kaiming_uniform(rng, cfg.classes, in_ch, 1, 1);
        m.seg_b_ = Tensor<T>::zeros({cfg.classes}, true);
        m.attn_w_ = kaiming_uniform(rng, 1, in_ch, 1, 1);
        m.attn_b_ = Tensor<T>::zeros({1}, true);
        return m;
    }

    const SegModelConfig& config() const { return cfg_; }

    SegForward<T> forward(const Tensor<T>& x) const {
        require(x.rank() == 3 && x.dim(0) == 3, "SegModel::forward expects a (3,H,W) image");
        const int64_t o = cfg_.output_stride;
        require(x.dim(1) % o == 0 && x.dim(2) % o == 0,
                "SegModel::forward: H and W must be divisible by the output stride " +
                    std::to_string(o));
        Tensor<T> h = x;
        for (const auto& blk : blocks_) {
            h = conv2d(h, blk.w, blk.b, blk.stride, 1);
            h = group_norm(h, blk.gamma, blk.beta, cfg_.groups);
            h = relu(h);
        }
        SegForward<T> out;
        out.features = h;
        out.logits = conv2d(h, seg_w_, seg_b_, 1, 0);
        out.attn_logit = conv2d(h, attn_w_, attn_b_, 1, 0);
        return out;
    }

    std::vector<std::pair<std::string, Tensor<T>>> parameters() {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        for (size_t i = 0; i < blocks_.size(); ++i) {
            const std::string p = "block" + std::to_string(i) + ".";
            out.emplace_back(p + "conv.w", blocks_[i].w);
            out.emplace_back(p + "conv.b", blocks_[i].b);
            out.emplace_back(p + "gn.gamma", blocks_[i].gamma);
            out.emplace_back(p + "gn.beta", blocks_[i].beta);
        }
        out.emplace_back("seg.w", seg_w_);
        out.emplace_back("seg.b", seg_b_);
        out.emplace_back("attn.w", attn_w_);
        out.emplace_back("attn.b", attn_b_);
        return out;
    }

    std::vector<Tensor<T>> parameter_tensors() {
        std::vector<Tensor<T>> out;
        for (auto& [n, t] : parameters()) out.push_back(t);
        return out;
    }

    // Names of parameters that only feed the segmentation / attention head.
    std::vector<Tensor<T>> head_parameters(bool attn) {
        if (attn) return {attn_w_, attn_b_};
        return {seg_w_, seg_b_};
    }

    int64_t param_count() {
        int64_t n = 0;
        for (auto& [name, t] : parameters()) n += t.numel();
        return n;
    }

    void set_requires_grad(bool v) {
        for (auto& [name, t] : parameters()) t.set_requires_grad(v);
    }

    void zero_grad() {
        for (auto& [name, t] : parameters())
            if (t.requires_grad()) t.zero_grad();
    }

    ParamSnapshot<T> snapshot(const std::string& tag, int64_t iteration = 0) {
        ParamSnapshot<T> snap;
        snap.tag = tag;
        snap.iteration = iteration;
        for (auto& [name, t] : parameters()) snap.values.emplace_back(name, t.clone());
        return snap;
    }

    void restore(const ParamSnapshot<T>& snap) {
        auto params = parameters();
        require(snap.values.size() == params.size(),
                "restore: snapshot has " + std::to_string(snap.values.size()) +
                    " tensors, model expects " + std::to_string(params.size()));
        for (auto& [name, t] : params) {
            const Tensor<T>* src = snap.find(name);
            require(src != nullptr, "restore: snapshot is missing tensor '" + name + "'");
            require(same_shape(src->shape(), t.shape()),
                    "restore: shape mismatch for tensor '" + name + "': snapshot " +
                        shape_str(src->shape()) + " vs model " + shape_str(t.shape()));
        }
        for (auto& [name, t] : params) t.mutable_data() = snap.find(name)->data();
    }

    bool all_finite() {
        for (auto& [name, t] : parameters())
            for (const T& v : t.data())
                if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    struct Block {
        Tensor<T> w, b, gamma, beta;
        int64_t stride = 1;
    };

    static Tensor<T> kaiming_uniform(Rng& rng, int64_t co, int64_t ci, int64_t kh, int64_t kw) {
        const double fan_in = static_cast<double>(ci * kh * kw);
        const double bound = std::sqrt(6.0 / fan_in);
        return Tensor<T>::rand_uniform({co, ci, kh, kw}, rng, static_cast<T>(-bound),
                                       static_cast<T>(bound), true);
    }

    SegModelConfig cfg_;
    std::vector<Block> blocks_;
    Tensor<T> seg_w_, seg_b_, attn_w_, attn_b_;
};

using SegModelF = SegModel<float>;

}  // namespace dapass
