// Kernel benchmark: serial reference implementations vs the parallel kernels,
// on trainer-shaped workloads. Also reports the max abs deviation (expected 0:
// both paths use the same per-element accumulation order).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "dapass/kernels.hpp"
#include "dapass/parallel.hpp"
#include "dapass/reference_kernels.hpp"
#include "dapass/rng.hpp"

using namespace dapass;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0;
    for (size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

std::vector<float> randn(int64_t n, Rng& rng) {
    std::vector<float> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

void row(const char* name, double serial_ms, double parallel_ms, double diff) {
    std::printf("%-28s %10.3f ms %10.3f ms %8.2fx   max|d|=%g\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms, diff);
}

}  // namespace

int main() {
    Rng rng(7);
    std::printf("workers available: %d\n", max_threads());
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "parallel", "speedup");

    {
        const auto d = kernels::conv2d_dims(32, 64, 128, 64, 3, 3, 1, 1);
        auto x = randn(d.ci * d.h * d.w, rng);
        auto w = randn(d.co * d.ci * d.kh * d.kw, rng);
        auto b = randn(d.co, rng);
        std::vector<float> o1(static_cast<size_t>(d.co * d.oh * d.ow)),
            o2(static_cast<size_t>(d.co * d.oh * d.ow));
        const double ts = time_ms(
            [&] { reference::conv2d_forward(x.data(), w.data(), b.data(), o1.data(), d); }, 3);
        const double tp = time_ms(
            [&] { kernels::conv2d_forward(x.data(), w.data(), b.data(), o2.data(), d); }, 3);
        row("conv2d fwd 32->64 @64x128", ts, tp, max_abs_diff(o1, o2));

        auto dout = randn(d.co * d.oh * d.ow, rng);
        std::vector<float> g1(x.size(), 0), g2(x.size(), 0);
        const double ts2 = time_ms(
            [&] {
                std::fill(g1.begin(), g1.end(), 0.f);
                reference::conv2d_dinput(dout.data(), w.data(), g1.data(), d);
            },
            3);
        const double tp2 = time_ms(
            [&] {
                std::fill(g2.begin(), g2.end(), 0.f);
                kernels::conv2d_dinput(dout.data(), w.data(), g2.data(), d);
            },
            3);
        row("conv2d dinput", ts2, tp2, max_abs_diff(g1, g2));

        std::vector<float> w1(w.size(), 0), w2(w.size(), 0), b1(b.size(), 0), b2(b.size(), 0);
        const double ts3 = time_ms(
            [&] {
                std::fill(w1.begin(), w1.end(), 0.f);
                reference::conv2d_dweight(dout.data(), x.data(), w1.data(), b1.data(), d);
            },
            3);
        const double tp3 = time_ms(
            [&] {
                std::fill(w2.begin(), w2.end(), 0.f);
                kernels::conv2d_dweight(dout.data(), x.data(), w2.data(), b2.data(), d);
            },
            3);
        row("conv2d dweight", ts3, tp3, max_abs_diff(w1, w2));
    }

    {
        const int64_t c = 64, h = 32, w = 64, oh = 64, ow = 128;
        auto x = randn(c * h * w, rng);
        std::vector<float> o1(static_cast<size_t>(c * oh * ow)), o2(o1.size());
        const double ts =
            time_ms([&] { reference::bilinear_forward(x.data(), o1.data(), c, h, w, oh, ow); }, 5);
        const double tp =
            time_ms([&] { kernels::bilinear_forward(x.data(), o2.data(), c, h, w, oh, ow); }, 5);
        row("bilinear up x2 64ch", ts, tp, max_abs_diff(o1, o2));
    }

    {
        const int64_t c = 64, h = 16, w = 64, groups = 4;
        auto x = randn(c * h * w, rng);
        auto gm = randn(c, rng);
        auto bt = randn(c, rng);
        std::vector<float> o1(x.size()), o2(x.size());
        const double ts = time_ms(
            [&] {
                reference::group_norm_forward(x.data(), o1.data(), gm.data(), bt.data(), c, h, w,
                                              groups, 1e-5);
            },
            5);
        const double tp = time_ms(
            [&] {
                kernels::group_norm_forward(x.data(), o2.data(), gm.data(), bt.data(), c, h, w,
                                            groups, 1e-5);
            },
            5);
        row("group_norm fwd 64ch", ts, tp, max_abs_diff(o1, o2));
    }

    {
        const int64_t c = 8, hw = 64 * 256;
        auto x = randn(c * hw, rng);
        std::vector<float> o1(x.size()), o2(x.size());
        const double ts = time_ms(
            [&] { reference::softmax_channels_forward(x.data(), o1.data(), c, hw); }, 5);
        const double tp =
            time_ms([&] { kernels::softmax_channels_forward(x.data(), o2.data(), c, hw); }, 5);
        row("softmax 8ch @64x256", ts, tp, max_abs_diff(o1, o2));
    }

    return 0;
}
