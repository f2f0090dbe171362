#pragma once

// Pseudo-label denoising: consistency scoring between two parameter
// snapshots, the consistent/inconsistent split, per-class top-K pools,
// style+layout neighbor retrieval, class copy-paste, and the first-order
// bi-level update used by the neighbor-denoising path.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dapass/segnet.hpp"
#include "dapass/types.hpp"

namespace dapass::pcgd {

struct ConsistencyRecord {
    std::string id;
    double cs = 0.0;                       // -sum of per-cell KL; <= 0
    std::map<int32_t, double> per_class;   // class -> negated KL sum over its cells
    bool consistent = false;
};

// Raw score computation over two probability grids (C,gh,gw). Exposed
// separately so the pixel-permutation property can be tested directly.
struct ScoreParts {
    double cs = 0.0;
    std::map<int32_t, double> per_class;
};
ScoreParts consistency_from_probs(const TensorF& p0, const TensorF& p1);

// Runs the scratch model under both snapshots on one image and scores the
// stride-o prediction grid. Cells are attributed to the class predicted
// under the first snapshot.
ConsistencyRecord consistency_score(SegModelF& scratch, const ParamSnapshot<float>& theta0,
                                    const ParamSnapshot<float>& theta_tau, const TensorF& image,
                                    const std::string& id);

std::vector<ConsistencyRecord> score_all(SegModelF& scratch, const ParamSnapshot<float>& theta0,
                                         const ParamSnapshot<float>& theta_tau,
                                         const std::vector<UnlabeledSample>& images);

// Marks the top-P% records (ties broken by ascending id) consistent and
// returns (consistent ids, inconsistent ids). The two sets partition the
// input.
std::pair<std::vector<std::string>, std::vector<std::string>> split_sets(
    std::vector<ConsistencyRecord>& records, double top_p);

struct PoolEntry {
    std::string id;
    double score = 0.0;
};
struct ClassPool {
    int32_t cls = 0;
    std::vector<PoolEntry> entries;  // ranked by per-class score, best first
};

// One pool per class that appears in at least one consistent record.
std::map<int32_t, ClassPool> build_class_pools(const std::vector<ConsistencyRecord>& records,
                                               int64_t k);

// Style descriptor: channel-wise mean and std of encoder features; layout
// descriptor: per-class pixel fractions on a 4x8 grid of the pseudo-label.
// Both halves are L2-normalized, then the concatenation is normalized again
// so every descriptor is unit length.
std::vector<float> style_layout_descriptor(const TensorF& encoder_features,
                                           const LabelMap& pseudo_label, int64_t classes);

struct DescriptorIndex {
    std::vector<std::string> ids;
    std::vector<std::vector<float>> vecs;
};

// Cosine-similarity argmax over the index; ties break to the smaller id.
std::string retrieve_neighbor(const std::vector<float>& query, const DescriptorIndex& index);

// Teacher-labeled image with per-pixel confidence.
struct PseudoSample {
    std::string id;
    TensorF image;       // (3,H,W)
    LabelMap label;      // teacher pseudo-label with ignore sentinel
    TensorF confidence;  // (H,W)
};

std::vector<int32_t> classes_of(const LabelMap& l);

// Copies donor pixels of class cls (image, label and confidence) onto base,
// skipping donor pixels whose confidence is below min_confidence so only
// high-quality object pixels transfer. Returns the number of pasted pixels.
int64_t paste_class(PseudoSample& base, const PseudoSample& donor, int32_t cls,
                    double min_confidence = 0.0);

// For each wanted class missing from x_con, pastes a uniformly drawn donor
// from that class's pool. Classes without a pool are skipped and counted.
// Paste order is ascending class id, so overlaps keep the higher class.
PseudoSample neighbor_complete(const PseudoSample& x_con,
                               const std::vector<int32_t>& wanted_classes,
                               const std::map<int32_t, ClassPool>& pools,
                               const std::function<const PseudoSample&(const std::string&)>& fetch,
                               Rng& rng, int64_t* skipped_classes = nullptr,
                               double min_confidence = 0.0);

struct BilevelOutcome {
    bool applied = false;
    double inner_loss = 0.0;
    double outer_loss = 0.0;
};

// First-order bi-level step:
//   1. theta_inner = theta - alpha * grad(inner_loss)(theta)
//   2. g = grad(outer_loss)(theta_inner)
//   3. restore theta, leave g in the parameter grad buffers, call apply_outer.
// The inner step is plain gradient descent and is never differentiated
// through. A non-finite inner loss skips the step entirely.
template <typename T>
BilevelOutcome first_order_bilevel(std::vector<Tensor<T>> params,
                                   const std::function<Tensor<T>()>& inner_loss_fn,
                                   const std::function<Tensor<T>()>& outer_loss_fn, double alpha,
                                   const std::function<void()>& apply_outer) {
    BilevelOutcome out;
    for (auto& p : params) p.zero_grad();
    Tensor<T> inner = inner_loss_fn();
    out.inner_loss = static_cast<double>(inner.item());
    if (!std::isfinite(out.inner_loss)) return out;
    backward(inner);

    std::vector<std::vector<T>> inner_grads;
    inner_grads.reserve(params.size());
    for (auto& p : params) {
        p.mutable_grad();  // ensure allocated even if disconnected
        inner_grads.push_back(p.grad());
        auto& data = p.mutable_data();
        const auto& g = inner_grads.back();
        for (size_t i = 0; i < data.size(); ++i)
            data[i] -= static_cast<T>(alpha * static_cast<double>(g[i]));
    }

    for (auto& p : params) p.zero_grad();
    Tensor<T> outer = outer_loss_fn();
    out.outer_loss = static_cast<double>(outer.item());
    backward(outer);
    for (auto& p : params) p.mutable_grad();

    for (size_t k = 0; k < params.size(); ++k) {
        auto& data = params[k].mutable_data();
        const auto& g = inner_grads[k];
        for (size_t i = 0; i < data.size(); ++i)
            data[i] += static_cast<T>(alpha * static_cast<double>(g[i]));
    }

    apply_outer();
    out.applied = true;
    return out;
}

void write_records(const std::string& path, const std::vector<ConsistencyRecord>& records);
std::vector<ConsistencyRecord> read_records(const std::string& path);

}  // namespace dapass::pcgd
