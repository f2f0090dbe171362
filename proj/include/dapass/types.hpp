#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dapass/common.hpp"
#include "dapass/tensor.hpp"

namespace dapass {

// Dense integer label image. Values are class ids in [0, C) or kIgnoreLabel.
struct LabelMap {
    int64_t h = 0, w = 0;
    std::vector<int32_t> v;

    LabelMap() = default;
    LabelMap(int64_t hh, int64_t ww, int32_t fill = 0)
        : h(hh), w(ww), v(static_cast<size_t>(hh * ww), fill) {}

    int32_t& at(int64_t y, int64_t x) { return v[static_cast<size_t>(y * w + x)]; }
    int32_t at(int64_t y, int64_t x) const { return v[static_cast<size_t>(y * w + x)]; }
    int64_t size() const { return h * w; }
    bool operator==(const LabelMap& o) const { return h == o.h && w == o.w && v == o.v; }
};

enum class Domain { Source, Target };
enum class SplitTag { Train, Val };

inline std::string to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }
inline std::string to_string(SplitTag s) { return s == SplitTag::Train ? "train" : "val"; }

// One benchmark image: RGB in [0,1] as a (3,H,W) tensor plus its label map.
struct Sample {
    std::string id;
    TensorF image;
    LabelMap label;
    Domain domain = Domain::Source;
    SplitTag split = SplitTag::Train;
};

// Adaptation-facing view of a target image. Deliberately label-free: the
// adaptation loop can only ever see pixels, never target ground truth.
struct UnlabeledSample {
    std::string id;
    TensorF image;
};

constexpr int kNumClasses = 8;

inline const std::array<std::string, kNumClasses>& class_names() {
    static const std::array<std::string, kNumClasses> names = {
        "ceiling", "chair", "door", "floor", "sofa", "table", "wall", "window"};
    return names;
}

// Low-frequency classes reported as a separate mIoU group.
inline const std::vector<int>& default_minority_classes() {
    static const std::vector<int> m = {1, 2, 4, 5, 7};  // chair, door, sofa, table, window
    return m;
}

inline const std::array<std::array<float, 3>, kNumClasses>& class_palette() {
    static const std::array<std::array<float, 3>, kNumClasses> p = {{
        {0.82f, 0.82f, 0.86f},  // ceiling
        {0.72f, 0.16f, 0.16f},  // chair
        {0.56f, 0.34f, 0.12f},  // door
        {0.38f, 0.30f, 0.22f},  // floor
        {0.16f, 0.52f, 0.22f},  // sofa
        {0.45f, 0.18f, 0.60f},  // table
        {0.62f, 0.56f, 0.46f},  // wall
        {0.30f, 0.55f, 0.95f},  // window
    }};
    return p;
}

}  // namespace dapass
