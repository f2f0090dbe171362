#include "dapass/panosynth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace dapass::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Object classes are drawn from the class-frequency simplex restricted to the
// non-structural classes; ceiling/floor/wall appear through the band layout.
const std::vector<int32_t>& object_classes() {
    static const std::vector<int32_t> v = {1, 2, 4, 5, 7};  // chair door sofa table window
    return v;
}

struct SizeRange {
    double hw_lo, hw_hi, hh_lo, hh_hi;
    bool may_ellipse;
};

SizeRange size_range(int32_t cls) {
    switch (cls) {
        case 1: return {3, 6, 3, 6, true};     // chair
        case 2: return {3, 5, 8, 14, false};   // door
        case 4: return {8, 14, 4, 7, true};    // sofa
        case 5: return {7, 13, 4, 7, true};    // table
        case 7: return {10, 16, 5, 9, false};  // window
        default: return {4, 8, 4, 8, true};
    }
}

std::array<float, 3> jitter_color(const std::array<float, 3>& base, Rng& rng, double amp) {
    std::array<float, 3> out;
    for (int k = 0; k < 3; ++k) {
        double v = base[k] + rng.uniform_range(-amp, amp);
        out[k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

void paint_object(const SceneObject& obj, double half_w_eff, int64_t width, int64_t height,
                  bool wrap, TensorF* image, LabelMap& label) {
    const int64_t hw = width * height;
    float* img = image ? image->mutable_data().data() : nullptr;
    const int64_t y_lo = static_cast<int64_t>(std::ceil(obj.cy - obj.half_h));
    const int64_t y_hi = static_cast<int64_t>(std::floor(obj.cy + obj.half_h));
    const int64_t x_lo = static_cast<int64_t>(std::ceil(obj.cx - half_w_eff));
    const int64_t x_hi = static_cast<int64_t>(std::floor(obj.cx + half_w_eff));
    for (int64_t y = y_lo; y <= y_hi; ++y) {
        if (y < 0 || y >= height) continue;
        for (int64_t x = x_lo; x <= x_hi; ++x) {
            int64_t xx = x;
            if (wrap) {
                xx = x % width;
                if (xx < 0) xx += width;
            } else if (x < 0 || x >= width) {
                continue;
            }
            if (obj.ellipse) {
                const double dx = (static_cast<double>(x) - obj.cx) / std::max(half_w_eff, 1e-9);
                const double dy = (static_cast<double>(y) - obj.cy) / std::max(obj.half_h, 1e-9);
                if (dx * dx + dy * dy > 1.0) continue;
            }
            label.v[y * width + xx] = obj.cls;
            if (img) {
                for (int c = 0; c < 3; ++c) img[c * hw + y * width + xx] = obj.color[c];
            }
        }
    }
}

std::set<int32_t> label_classes(const LabelMap& l) {
    std::set<int32_t> s;
    for (int32_t v : l.v)
        if (v != kIgnoreLabel) s.insert(v);
    return s;
}

Sample make_sample(const SceneSpec& spec, const std::string& id, Domain domain, SplitTag split) {
    Rng rng = Rng(spec.seed).fork(id);
    const bool panoramic = domain == Domain::Target;
    const bool distort = panoramic && spec.distortion.enabled;

    SceneLayout layout;
    // A layout is accepted only if every object stays visible in both the
    // flat and the distorted label map, so the warp preserves the class
    // inventory by construction.
    for (int attempt = 0; attempt < 64; ++attempt) {
        layout = sample_layout(spec, rng, panoramic);
        LabelMap flat(spec.height, spec.width), warped(spec.height, spec.width);
        TensorF none;
        render_scene(layout, spec.width, spec.height, panoramic, false, spec.distortion, none,
                     flat);
        render_scene(layout, spec.width, spec.height, panoramic, true, spec.distortion, none,
                     warped);
        const auto a = label_classes(flat), b = label_classes(warped);
        bool ok = a == b;
        if (ok) {
            std::set<int32_t> placed;
            for (const auto& o : layout.objects) placed.insert(o.cls);
            for (int32_t c : placed)
                if (!a.count(c)) ok = false;
        }
        if (ok) break;
    }

    Sample s;
    s.id = id;
    s.domain = domain;
    s.split = split;
    s.image = TensorF::zeros({3, spec.height, spec.width});
    s.label = LabelMap(spec.height, spec.width);
    render_scene(layout, spec.width, spec.height, panoramic, distort, spec.distortion, s.image,
                 s.label);

    auto& img = s.image.mutable_data();
    const int64_t hw = spec.height * spec.width;
    if (panoramic && spec.color_shift.enabled) {
        const auto& cs = spec.color_shift;
        for (int64_t p = 0; p < hw; ++p) {
            const double r = img[p], g = img[hw + p], b = img[2 * hw + p];
            const double rr = cs.mix[0] * r + cs.mix[1] * g + cs.mix[2] * b + cs.bias[0];
            const double gg = cs.mix[3] * r + cs.mix[4] * g + cs.mix[5] * b + cs.bias[1];
            const double bb = cs.mix[6] * r + cs.mix[7] * g + cs.mix[8] * b + cs.bias[2];
            img[p] = static_cast<float>(std::clamp(rr, 0.0, 1.0));
            img[hw + p] = static_cast<float>(std::clamp(gg, 0.0, 1.0));
            img[2 * hw + p] = static_cast<float>(std::clamp(bb, 0.0, 1.0));
        }
    }
    if (spec.noise_sigma > 0) {
        for (auto& v : img) {
            const double n = rng.normal() * spec.noise_sigma;
            v = static_cast<float>(std::clamp(static_cast<double>(v) + n, 0.0, 1.0));
        }
    }
    return s;
}

std::vector<Sample> gen(const SceneSpec& spec, int64_t n, Domain domain, SplitTag split) {
    require(n >= 1, "dataset size must be >= 1");
    require(spec.width >= 16 && spec.height >= 16, "scene dimensions too small");
    const std::string prefix =
        std::string(domain == Domain::Source ? "src" : "tgt") + "-" + to_string(split) + "-";
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%04lld", static_cast<long long>(i));
        out.push_back(make_sample(spec, prefix + buf, domain, split));
    }
    return out;
}

}  // namespace

std::vector<double> SceneSpec::class_frequencies() const {
    require(decay > 0.0 && decay < 1.0, "decay must be in (0,1)");
    std::vector<double> f(static_cast<size_t>(classes));
    double z = 0.0;
    for (int64_t c = 0; c < classes; ++c) {
        f[c] = std::pow(decay, static_cast<double>(c));
        z += f[c];
    }
    for (auto& v : f) v /= z;
    return f;
}

double latitude_stretch(double row, int64_t height, const DistortionProfile& p) {
    const double phi_max = p.phi_max_deg * kPi / 180.0;
    const double lat = ((row + 0.5) / static_cast<double>(height) - 0.5) * 2.0 * phi_max;
    const double c = std::cos(lat);
    if (c <= 0.0) return p.stretch_clamp;
    return std::min(1.0 / c, p.stretch_clamp);
}

SceneLayout sample_layout(const SceneSpec& spec, Rng& rng, bool panoramic) {
    const auto freq = spec.class_frequencies();
    const auto& obj_cls = object_classes();
    std::vector<double> w;
    double z = 0.0;
    for (int32_t c : obj_cls) {
        w.push_back(freq[static_cast<size_t>(c)]);
        z += w.back();
    }
    for (auto& v : w) v /= z;

    const double unit = static_cast<double>(spec.height) / 64.0;
    SceneLayout lay;
    lay.ceil_rows = std::max<int64_t>(1, std::llround(spec.height * rng.uniform_range(0.18, 0.28)));
    lay.floor_rows =
        std::max<int64_t>(1, std::llround(spec.height * rng.uniform_range(0.18, 0.28)));
    lay.ceil_color = jitter_color(class_palette()[0], rng, 0.03);
    lay.floor_color = jitter_color(class_palette()[3], rng, 0.03);
    lay.wall_color = jitter_color(class_palette()[6], rng, 0.03);

    const double wall_top = static_cast<double>(lay.ceil_rows);
    const double wall_bot = static_cast<double>(spec.height - lay.floor_rows);
    // objects_per_image counts objects per 2:1 tile; wider panoramas carry
    // proportionally more objects so class statistics match across aspects.
    const int64_t n_objects = std::max<int64_t>(
        1, std::llround(static_cast<double>(spec.objects_per_image) *
                        static_cast<double>(spec.width) / (2.0 * spec.height)));
    for (int64_t i = 0; i < n_objects; ++i) {
        double u = rng.uniform();
        int32_t cls = obj_cls.back();
        for (size_t k = 0; k < w.size(); ++k) {
            if (u < w[k]) {
                cls = obj_cls[k];
                break;
            }
            u -= w[k];
        }
        const SizeRange r = size_range(cls);
        SceneObject obj;
        obj.cls = cls;
        obj.ellipse = r.may_ellipse && rng.uniform() < 0.5;
        obj.half_w = std::max(1.5, rng.uniform_range(r.hw_lo, r.hw_hi) * unit);
        obj.half_h = std::max(1.5, rng.uniform_range(r.hh_lo, r.hh_hi) * unit);
        const double max_hh = (wall_bot - wall_top) / 2.0 - 0.5;
        obj.half_h = std::min(obj.half_h, std::max(1.5, max_hh));
        obj.cy = rng.uniform_range(wall_top + obj.half_h * 0.5, wall_bot - obj.half_h * 0.5);
        if (panoramic) {
            obj.cx = rng.uniform_range(0.0, static_cast<double>(spec.width));
        } else {
            const double m = std::min(obj.half_w, static_cast<double>(spec.width) / 2.0 - 1.0);
            obj.cx = rng.uniform_range(m, static_cast<double>(spec.width) - m);
        }
        obj.color = jitter_color(class_palette()[static_cast<size_t>(cls)], rng, 0.04);
        lay.objects.push_back(obj);
    }
    return lay;
}

void render_scene(const SceneLayout& layout, int64_t width, int64_t height, bool wrap,
                  bool distort, const DistortionProfile& dp, TensorF& image, LabelMap& label) {
    require(label.h == height && label.w == width, "render_scene: label shape mismatch");
    const int64_t hw = width * height;
    float* img = image.defined() ? image.mutable_data().data() : nullptr;
    for (int64_t y = 0; y < height; ++y) {
        int32_t cls;
        const std::array<float, 3>* col;
        if (y < layout.ceil_rows) {
            cls = 0;
            col = &layout.ceil_color;
        } else if (y >= height - layout.floor_rows) {
            cls = 3;
            col = &layout.floor_color;
        } else {
            cls = 6;
            col = &layout.wall_color;
        }
        for (int64_t x = 0; x < width; ++x) {
            label.v[y * width + x] = cls;
            if (img)
                for (int c = 0; c < 3; ++c) img[c * hw + y * width + x] = (*col)[c];
        }
    }
    for (const auto& obj : layout.objects) {
        const double stretch = distort ? latitude_stretch(obj.cy, height, dp) : 1.0;
        paint_object(obj, obj.half_w * stretch, width, height, wrap,
                     image.defined() ? &image : nullptr, label);
    }
}

std::vector<Sample> gen_source(const SceneSpec& spec, int64_t n, SplitTag split) {
    return gen(spec, n, Domain::Source, split);
}

std::vector<Sample> gen_target(const SceneSpec& spec, int64_t n, SplitTag split) {
    return gen(spec, n, Domain::Target, split);
}

}  // namespace dapass::synth
