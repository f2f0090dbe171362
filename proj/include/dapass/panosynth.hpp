#pragma once

// Deterministic synthetic benchmark: a flat "pinhole" source domain and a
// wider panoramic target domain with latitude-dependent horizontal stretch,
// seam wraparound and a global color shift. Classes follow a long-tailed
// draw distribution; ceiling/floor/wall come from the scene structure and the
// five object classes from per-image object placement.

#include <array>
#include <cstdint>
#include <vector>

#include "dapass/rng.hpp"
#include "dapass/types.hpp"

namespace dapass::synth {

struct DistortionProfile {
    bool enabled = true;
    double phi_max_deg = 60.0;  // latitude at the top/bottom image border
    double stretch_clamp = 3.0;
};

struct ColorShiftProfile {
    bool enabled = true;
    // out = clamp(mix * rgb + bias); row-major 3x3
    std::array<double, 9> mix = {0.69, 0.31, 0.00, 0.00, 0.73, 0.27, 0.25, 0.00, 0.75};
    std::array<double, 3> bias = {0.08, 0.035, -0.07};
};

struct SceneSpec {
    uint64_t seed = 0;
    int64_t width = 128;
    int64_t height = 64;
    int64_t classes = kNumClasses;
    double decay = 0.65;  // geometric ratio of the class-frequency simplex
    int64_t objects_per_image = 6;
    double noise_sigma = 0.05;
    DistortionProfile distortion;
    ColorShiftProfile color_shift;

    // decay^c / sum, indexed by class id
    std::vector<double> class_frequencies() const;
};

struct SceneObject {
    int32_t cls = 0;
    bool ellipse = false;
    double cx = 0, cy = 0;       // center, pixel coordinates
    double half_w = 0, half_h = 0;
    std::array<float, 3> color = {0, 0, 0};
};

struct SceneLayout {
    int64_t ceil_rows = 0, floor_rows = 0;
    std::array<float, 3> ceil_color, wall_color, floor_color;
    std::vector<SceneObject> objects;
};

// Horizontal magnification at a row: sec(latitude), clamped.
double latitude_stretch(double row, int64_t height, const DistortionProfile& p);

SceneLayout sample_layout(const SceneSpec& spec, Rng& rng, bool panoramic);

// Paints bands then objects (in order; later objects overwrite earlier ones).
// wrap: paint modulo the image width. distort: widen objects by the latitude
// stretch at their center row.
void render_scene(const SceneLayout& layout, int64_t width, int64_t height, bool wrap,
                  bool distort, const DistortionProfile& dp, TensorF& image, LabelMap& label);

std::vector<Sample> gen_source(const SceneSpec& spec, int64_t n, SplitTag split);
std::vector<Sample> gen_target(const SceneSpec& spec, int64_t n, SplitTag split);

}  // namespace dapass::synth
