#include "dapass/evalm.hpp"

#include <algorithm>
#include <sstream>

#include "dapass/dataset.hpp"
#include "dapass/ops.hpp"

namespace dapass::evalm {

uint64_t ConfusionMatrix::total() const {
    uint64_t t = 0;
    for (uint64_t v : counts_) t += v;
    return t;
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt) {
    require(pred.h == gt.h && pred.w == gt.w, "confusion: shape mismatch");
    for (int64_t i = 0; i < gt.size(); ++i) {
        const int32_t g = gt.v[i];
        if (g == kIgnoreLabel) continue;
        require(g >= 0 && g < classes_, "confusion: ground-truth label out of range");
        const int32_t p = pred.v[i];
        require(p >= 0 && p < classes_, "confusion: predicted label out of range");
        ++counts_[static_cast<size_t>(g * classes_ + p)];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    require(other.classes_ == classes_, "confusion: class count mismatch");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

IouReport iou_report(const ConfusionMatrix& cm, const std::vector<int>& minority_classes) {
    const int64_t c = cm.classes();
    IouReport r;
    r.iou.assign(static_cast<size_t>(c), 0.0);
    r.present.assign(static_cast<size_t>(c), false);
    std::vector<bool> is_minority(static_cast<size_t>(c), false);
    for (int m : minority_classes)
        if (m >= 0 && m < c) is_minority[static_cast<size_t>(m)] = true;

    double sum = 0, min_sum = 0, maj_sum = 0;
    int64_t n = 0, min_n = 0, maj_n = 0;
    for (int64_t k = 0; k < c; ++k) {
        uint64_t tp = cm.at(k, k), fp = 0, fn = 0;
        for (int64_t j = 0; j < c; ++j) {
            if (j == k) continue;
            fp += cm.at(j, k);
            fn += cm.at(k, j);
        }
        const uint64_t uni = tp + fp + fn;
        if (uni == 0) continue;
        const double iou = static_cast<double>(tp) / static_cast<double>(uni);
        r.iou[static_cast<size_t>(k)] = iou;
        r.present[static_cast<size_t>(k)] = true;
        sum += iou;
        ++n;
        if (is_minority[static_cast<size_t>(k)]) {
            min_sum += iou;
            ++min_n;
        } else {
            maj_sum += iou;
            ++maj_n;
        }
    }
    r.miou = n > 0 ? sum / n : 0.0;
    r.minority_miou = min_n > 0 ? min_sum / min_n : 0.0;
    r.majority_miou = maj_n > 0 ? maj_sum / maj_n : 0.0;
    return r;
}

std::string iou_csv(const IouReport& r) {
    std::ostringstream ss;
    ss << "class,iou\n";
    for (size_t k = 0; k < r.iou.size(); ++k) {
        ss << (k < class_names().size() ? class_names()[k] : std::to_string(k)) << ",";
        if (r.present[k])
            ss << r.iou[k];
        else
            ss << "n/a";
        ss << "\n";
    }
    ss << "miou," << r.miou << "\n";
    ss << "minority_miou," << r.minority_miou << "\n";
    ss << "majority_miou," << r.majority_miou << "\n";
    return ss.str();
}

LabelMap predict_labels(const SegModelF& model, const TensorF& image) {
    auto out = model.forward(image);
    auto up = bilinear_resize(out.logits, image.dim(1), image.dim(2));
    return argmax_channels(up);
}

double evaluate_miou(const SegModelF& model, const std::vector<Sample>& samples,
                     const std::vector<int>& minority_classes, IouReport* report) {
    require(!samples.empty(), "evaluate_miou: no samples");
    ConfusionMatrix cm(model.config().classes);
    for (const auto& s : samples) cm.accumulate(predict_labels(model, s.image), s.label);
    IouReport r = iou_report(cm, minority_classes);
    if (report) *report = r;
    return r.miou;
}

void render_comparison(const std::string& path, const LabelMap& pred, const LabelMap& gt) {
    require(pred.h == gt.h && pred.w == gt.w, "render_comparison: shape mismatch");
    const int64_t h = pred.h, w = pred.w;
    TensorF img = TensorF::zeros({3, h, 2 * w + 2});
    auto& d = img.mutable_data();
    const int64_t hw = h * (2 * w + 2);
    auto put = [&](int64_t y, int64_t x, const std::array<float, 3>& c) {
        for (int k = 0; k < 3; ++k) d[k * hw + y * (2 * w + 2) + x] = c[k];
    };
    const auto& pal = class_palette();
    const std::array<float, 3> ignore_col = {0, 0, 0};
    const std::array<float, 3> gap_col = {1, 1, 1};
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const int32_t p = pred.at(y, x);
            put(y, x, p == kIgnoreLabel ? ignore_col : pal[static_cast<size_t>(p % kNumClasses)]);
            const int32_t g = gt.at(y, x);
            put(y, w + 2 + x,
                g == kIgnoreLabel ? ignore_col : pal[static_cast<size_t>(g % kNumClasses)]);
        }
        put(y, w, gap_col);
        put(y, w + 1, gap_col);
    }
    data::write_ppm(path, img);
}

}  // namespace dapass::evalm
