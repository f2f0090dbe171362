#pragma once

// Segmentation metrics: confusion matrix, per-class IoU, mIoU, and the
// minority/majority group means.

#include <cstdint>
#include <string>
#include <vector>

#include "dapass/segnet.hpp"
#include "dapass/types.hpp"

namespace dapass::evalm {

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int64_t classes = kNumClasses)
        : classes_(classes), counts_(static_cast<size_t>(classes * classes), 0) {}

    int64_t classes() const { return classes_; }
    uint64_t at(int64_t gt, int64_t pred) const {
        return counts_[static_cast<size_t>(gt * classes_ + pred)];
    }
    uint64_t total() const;

    // Ignore-sentinel ground-truth pixels are skipped.
    void accumulate(const LabelMap& pred, const LabelMap& gt);
    void merge(const ConfusionMatrix& other);

private:
    int64_t classes_;
    std::vector<uint64_t> counts_;
};

struct IouReport {
    std::vector<double> iou;     // per class; meaningful only where present[c]
    std::vector<bool> present;   // union > 0
    double miou = 0;
    double minority_miou = 0;
    double majority_miou = 0;
};

// Classes with zero union are excluded from every mean.
IouReport iou_report(const ConfusionMatrix& cm, const std::vector<int>& minority_classes);

std::string iou_csv(const IouReport& r);

// Full-image prediction: forward, upsample logits to input size, argmax.
LabelMap predict_labels(const SegModelF& model, const TensorF& image);

double evaluate_miou(const SegModelF& model, const std::vector<Sample>& samples,
                     const std::vector<int>& minority_classes, IouReport* report = nullptr);

// Side-by-side palette rendering of prediction vs ground truth.
void render_comparison(const std::string& path, const LabelMap& pred, const LabelMap& gt);

}  // namespace dapass::evalm
