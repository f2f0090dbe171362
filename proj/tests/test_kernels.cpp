#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// The parallel kernels must match the serial reference implementations
// bit-for-bit for any worker count: parallelism only partitions element
// ownership, never the per-element accumulation order.

#include "dapass/kernels.hpp"
#include "dapass/parallel.hpp"
#include "dapass/reference_kernels.hpp"
#include "dapass/rng.hpp"

using namespace dapass;

namespace {

std::vector<float> randn(int64_t n, Rng& rng) {
    std::vector<float> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("conv2d kernels match the serial reference bit-for-bit") {
    Rng rng(101);
    for (int inst = 0; inst < 4; ++inst) {
        const int64_t stride = inst % 2 ? 2 : 1;
        const auto d = kernels::conv2d_dims(3 + inst, 12, 16, 5, 3, 3, stride, 1);
        auto x = randn(d.ci * d.h * d.w, rng);
        auto w = randn(d.co * d.ci * d.kh * d.kw, rng);
        auto b = randn(d.co, rng);

        std::vector<float> ref(static_cast<size_t>(d.co * d.oh * d.ow));
        reference::conv2d_forward(x.data(), w.data(), b.data(), ref.data(), d);
        for (int threads : {1, 3, 8}) {
            ThreadLimitGuard guard(threads);
            std::vector<float> got(ref.size());
            kernels::conv2d_forward(x.data(), w.data(), b.data(), got.data(), d);
            CHECK(bit_equal(ref, got));
        }

        auto dout = randn(d.co * d.oh * d.ow, rng);
        std::vector<float> dref(x.size(), 0), wref(w.size(), 0), bref(b.size(), 0);
        reference::conv2d_dinput(dout.data(), w.data(), dref.data(), d);
        reference::conv2d_dweight(dout.data(), x.data(), wref.data(), bref.data(), d);
        for (int threads : {1, 5}) {
            ThreadLimitGuard guard(threads);
            std::vector<float> dgot(x.size(), 0), wgot(w.size(), 0), bgot(b.size(), 0);
            kernels::conv2d_dinput(dout.data(), w.data(), dgot.data(), d);
            kernels::conv2d_dweight(dout.data(), x.data(), wgot.data(), bgot.data(), d);
            CHECK(bit_equal(dref, dgot));
            CHECK(bit_equal(wref, wgot));
            CHECK(bit_equal(bref, bgot));
        }
    }
}

TEST_CASE("group_norm kernel matches the serial reference bit-for-bit") {
    Rng rng(7);
    const int64_t c = 8, h = 6, w = 10, groups = 4;
    auto x = randn(c * h * w, rng);
    auto gm = randn(c, rng);
    auto bt = randn(c, rng);
    std::vector<float> ref(x.size());
    reference::group_norm_forward(x.data(), ref.data(), gm.data(), bt.data(), c, h, w, groups,
                                  1e-5);
    for (int threads : {1, 4}) {
        ThreadLimitGuard guard(threads);
        std::vector<float> got(x.size());
        kernels::group_norm_forward(x.data(), got.data(), gm.data(), bt.data(), c, h, w, groups,
                                    1e-5);
        CHECK(bit_equal(ref, got));
    }
}

TEST_CASE("bilinear kernel matches the serial reference bit-for-bit") {
    Rng rng(13);
    const int64_t c = 3, h = 7, w = 9;
    auto x = randn(c * h * w, rng);
    for (auto [oh, ow] : std::vector<std::pair<int64_t, int64_t>>{{14, 18}, {3, 4}, {7, 9}}) {
        std::vector<float> ref(static_cast<size_t>(c * oh * ow));
        reference::bilinear_forward(x.data(), ref.data(), c, h, w, oh, ow);
        for (int threads : {1, 6}) {
            ThreadLimitGuard guard(threads);
            std::vector<float> got(ref.size());
            kernels::bilinear_forward(x.data(), got.data(), c, h, w, oh, ow);
            CHECK(bit_equal(ref, got));
        }
    }
}

TEST_CASE("softmax kernel matches the serial reference bit-for-bit") {
    Rng rng(19);
    const int64_t c = 8, hw = 40;
    auto x = randn(c * hw, rng);
    std::vector<float> ref(x.size());
    reference::softmax_channels_forward(x.data(), ref.data(), c, hw);
    for (int threads : {1, 2, 7}) {
        ThreadLimitGuard guard(threads);
        std::vector<float> got(x.size());
        kernels::softmax_channels_forward(x.data(), got.data(), c, hw);
        CHECK(bit_equal(ref, got));
    }
}
