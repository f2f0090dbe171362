#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dapass/ops.hpp"
#include "gradcheck.hpp"

using namespace dapass;

namespace {

TensorD random_simplex(int64_t c, int64_t h, int64_t w, Rng& rng) {
    const int64_t hw = h * w;
    std::vector<double> d(static_cast<size_t>(c * hw));
    for (int64_t p = 0; p < hw; ++p) {
        double z = 0;
        for (int64_t k = 0; k < c; ++k) {
            const double v = rng.uniform_range(0.05, 1.0);
            d[k * hw + p] = v;
            z += v;
        }
        for (int64_t k = 0; k < c; ++k) d[k * hw + p] /= z;
    }
    return TensorD::from_data({c, h, w}, std::move(d));
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
    CHECK_THROWS_AS(TensorF::from_data({2, 2}, {1.f, 2.f, 3.f}), InvalidArgument);
    auto t = TensorF::zeros({3, 4});
    CHECK(t.numel() == 12);
    CHECK_THROWS_AS(TensorF::zeros({0, 4}), InvalidArgument);
}

TEST_CASE("backward: quadratic gradient") {
    auto theta = TensorD::from_data({2}, {1.0, 2.0}, true);
    auto loss = sum(mul(theta, theta));
    backward(loss);
    CHECK(theta.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(theta.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("backward: repeated calls accumulate until zeroed") {
    auto theta = TensorD::from_data({2}, {1.0, 2.0}, true);
    backward(sum(mul(theta, theta)));
    backward(sum(mul(theta, theta)));
    CHECK(theta.grad()[0] == doctest::Approx(4.0));
    theta.zero_grad();
    backward(sum(mul(theta, theta)));
    CHECK(theta.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("backward: disconnected leaf keeps zero grad") {
    auto theta = TensorD::from_data({2}, {1.0, 2.0}, true);
    theta.zero_grad();
    auto other = TensorD::from_data({2}, {3.0, 4.0}, true);
    backward(sum(mul(other, other)));
    CHECK(theta.grad()[0] == 0.0);
    CHECK(theta.grad()[1] == 0.0);
}

TEST_CASE("backward requires a scalar loss") {
    auto theta = TensorD::from_data({2}, {1.0, 2.0}, true);
    auto y = mul(theta, theta);
    CHECK_THROWS_AS(backward(y), InvalidArgument);
}

TEST_CASE("kl_divergence: identity, hand value, degenerate support") {
    Rng rng(3);
    auto p = random_simplex(4, 2, 3, rng);
    auto zero = kl_divergence(p, p);
    for (double v : zero.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

    auto a = TensorD::from_data({2, 1, 1}, {0.5, 0.5});
    auto b = TensorD::from_data({2, 1, 1}, {0.25, 0.75});
    const double expect = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    CHECK(kl_divergence(a, b).data()[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(0.14384).epsilon(1e-4));

    auto e1 = TensorD::from_data({2, 1, 1}, {1.0, 0.0});
    CHECK(kl_divergence(e1, e1).data()[0] == 0.0);

    CHECK_THROWS_AS(kl_divergence(a, TensorD::from_data({3, 1, 1}, {0.2, 0.3, 0.5})),
                    InvalidArgument);
    auto neg = TensorD::from_data({2, 1, 1}, {-0.1, 1.1});
    CHECK_THROWS_AS(kl_divergence(neg, b), InvalidArgument);
}

TEST_CASE("kl_divergence: nonnegative, zero iff equal") {
    Rng rng(17);
    for (int i = 0; i < 50; ++i) {
        auto p = random_simplex(5, 2, 2, rng);
        auto q = random_simplex(5, 2, 2, rng);
        auto kl = kl_divergence(p, q);
        for (double v : kl.data()) CHECK(v >= -1e-12);
    }
    auto p = random_simplex(5, 2, 2, rng);
    auto kl = kl_divergence(p, p);
    for (double v : kl.data()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("softmax: normalization and shift invariance") {
    Rng rng(5);
    auto x = TensorD::rand_normal({6, 3, 4}, rng, 3.0);
    auto s = softmax_channels(x);
    const int64_t hw = 12;
    for (int64_t p = 0; p < hw; ++p) {
        double z = 0;
        for (int64_t k = 0; k < 6; ++k) z += s.data()[k * hw + p];
        CHECK(z == doctest::Approx(1.0).epsilon(1e-6));
    }
    auto shifted = affine(x, 1.0, 123.5);
    auto s2 = softmax_channels(shifted);
    for (size_t i = 0; i < s.data().size(); ++i)
        CHECK(s.data()[i] == doctest::Approx(s2.data()[i]).epsilon(1e-9));
}

TEST_CASE("softmax_cross_entropy: spec cases") {
    // confident correct prediction -> loss ~ 0
    LabelMap lab(1, 2);
    lab.at(0, 0) = 1;
    lab.at(0, 1) = 0;
    std::vector<double> d(3 * 2, 0.0);
    d[1 * 2 + 0] = 1e4;  // class 1 at pixel 0
    d[0 * 2 + 1] = 1e4;  // class 0 at pixel 1
    auto logits = TensorD::from_data({3, 1, 2}, std::move(d));
    CHECK(softmax_cross_entropy(logits, lab, 1.0).item() == doctest::Approx(0.0).epsilon(1e-9));

    // uniform logits over C=8 -> ln 8
    LabelMap lab8(2, 2, 3);
    auto uniform = TensorD::zeros({8, 2, 2});
    CHECK(softmax_cross_entropy(uniform, lab8, 1.0).item() ==
          doctest::Approx(std::log(8.0)).epsilon(1e-9));
    CHECK(std::log(8.0) == doctest::Approx(2.0794).epsilon(1e-4));

    // all ignored -> zero loss, zero gradient
    LabelMap ign(2, 2, kIgnoreLabel);
    Rng rng7(7);
    auto x = TensorD::rand_normal({8, 2, 2}, rng7, 1.0, true);
    x.zero_grad();
    auto l = softmax_cross_entropy(x, ign, 1.0);
    CHECK(l.item() == 0.0);
    backward(l);
    for (double g : x.grad()) CHECK(g == 0.0);

    // label out of range / bad temperature
    LabelMap bad(1, 1, 9);
    auto small = TensorD::zeros({3, 1, 1});
    CHECK_THROWS_AS(softmax_cross_entropy(small, bad, 1.0), InvalidArgument);
    LabelMap ok(1, 1, 0);
    CHECK_THROWS_AS(softmax_cross_entropy(small, ok, 0.0), InvalidArgument);
    CHECK_THROWS_AS(softmax_cross_entropy(small, ok, -1.0), InvalidArgument);
}

TEST_CASE("softmax_cross_entropy: temperature and weights enter the loss") {
    Rng rng(11);
    auto x = TensorD::rand_normal({4, 2, 2}, rng, 1.0);
    LabelMap lab(2, 2);
    for (int64_t i = 0; i < 4; ++i) lab.v[i] = static_cast<int32_t>(i % 4);
    auto l1 = softmax_cross_entropy(x, lab, 1.0);
    auto l2 = softmax_cross_entropy(x, lab, 4.0);
    CHECK(l1.item() != doctest::Approx(l2.item()).epsilon(1e-9));

    auto w = TensorD::from_data({2, 2}, {0.0, 0.0, 1.0, 1.0});
    auto lw = softmax_cross_entropy(x, lab, w, 1.0);
    // Mean still divides by all 4 valid pixels, but only two contribute.
    CHECK(lw.item() < l1.item() + 1e-12);
}

TEST_CASE("bilinear_resize: constants, oracle, linearity") {
    // constants preserved exactly (float pipeline precision)
    auto c = TensorF::full({2, 3, 5}, 0.73f);
    auto up = bilinear_resize(c, 9, 10);
    for (float v : up.data()) CHECK(v == 0.73f);

    // 2x2 -> 4x4 against the direct per-pixel interpolation oracle
    auto x = TensorD::from_data({1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
    auto y = bilinear_resize(x, 4, 4);
    auto src = [&](int64_t oy, int64_t ox) {
        auto coord = [&](int64_t i, int64_t n_in, int64_t n_out) {
            double s = (i + 0.5) * static_cast<double>(n_in) / n_out - 0.5;
            return std::clamp(s, 0.0, static_cast<double>(n_in - 1));
        };
        const double sy = coord(oy, 2, 4), sx = coord(ox, 2, 4);
        const int64_t y0 = static_cast<int64_t>(sy), x0 = static_cast<int64_t>(sx);
        const int64_t y1 = std::min<int64_t>(y0 + 1, 1), x1 = std::min<int64_t>(x0 + 1, 1);
        const double fy = sy - y0, fx = sx - x0;
        auto at = [&](int64_t yy, int64_t xx) { return x.data()[yy * 2 + xx]; };
        return (1 - fy) * (1 - fx) * at(y0, x0) + (1 - fy) * fx * at(y0, x1) +
               fy * (1 - fx) * at(y1, x0) + fy * fx * at(y1, x1);
    };
    for (int64_t oy = 0; oy < 4; ++oy)
        for (int64_t ox = 0; ox < 4; ++ox)
            CHECK(y.data()[oy * 4 + ox] == doctest::Approx(src(oy, ox)).epsilon(1e-12));

    // linearity: zeta(a*x + b*y) = a*zeta(x) + b*zeta(y)
    Rng rng(23);
    auto u = TensorD::rand_normal({2, 6, 8}, rng);
    auto v = TensorD::rand_normal({2, 6, 8}, rng);
    auto lhs = bilinear_resize(add(scale(u, 0.3), scale(v, -1.7)), 3, 4);
    auto rhs = add(scale(bilinear_resize(u, 3, 4), 0.3), scale(bilinear_resize(v, 3, 4), -1.7));
    for (size_t i = 0; i < lhs.data().size(); ++i)
        CHECK(lhs.data()[i] == doctest::Approx(rhs.data()[i]).epsilon(1e-6));

    // zeta(a) + zeta(1-a) = 1 pointwise
    auto a = TensorD::rand_uniform({1, 8, 8}, rng, 0.0, 1.0);
    auto sum1 = add(bilinear_resize(a, 4, 4), bilinear_resize(one_minus(a), 4, 4));
    for (double s : sum1.data()) CHECK(s == doctest::Approx(1.0).epsilon(1e-6));

    // non-integer output size
    auto odd = TensorD::zeros({1, 3, 3});
    CHECK_THROWS_AS(bilinear_scale(odd, 1, 2), InvalidArgument);
    CHECK(bilinear_scale(odd, 2, 1).dim(1) == 6);
}

TEST_CASE("gradcheck: elementwise and reductions") {
    Rng rng(31);
    for (int i = 0; i < 3; ++i) {
        auto a = TensorD::rand_normal({3, 4}, rng);
        auto b = TensorD::rand_normal({3, 4}, rng);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return add(in[0], in[1]); }, {a, b}) < 1e-6);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return mul(in[0], in[1]); }, {a, b}) < 1e-6);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return sub(in[0], in[1]); }, {a, b}) < 1e-6);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return mean(sigmoid(in[0])); }, {a}) < 1e-6);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return affine(in[0], -2.5, 0.7); }, {a}) < 1e-6);
    }
}

TEST_CASE("gradcheck: conv, norm, resize, softmax, losses") {
    Rng rng(37);
    for (int i = 0; i < 2; ++i) {
        auto x = TensorD::rand_normal({3, 6, 8}, rng);
        auto w = TensorD::rand_normal({4, 3, 3, 3}, rng, 0.5);
        auto b = TensorD::rand_normal({4}, rng, 0.1);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return conv2d(in[0], in[1], in[2], 1, 1); },
                  {x, w, b}) < 1e-4);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return conv2d(in[0], in[1], in[2], 2, 1); },
                  {x, w, b}) < 1e-4);

        auto gm = TensorD::rand_uniform({4}, rng, 0.5, 1.5);
        auto bt = TensorD::rand_normal({4}, rng, 0.2);
        auto xf = TensorD::rand_normal({4, 5, 6}, rng);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return group_norm(in[0], in[1], in[2], 2); },
                  {xf, gm, bt}) < 1e-4);

        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return bilinear_resize(in[0], 7, 9); }, {x}) <
              1e-4);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return bilinear_resize(in[0], 3, 4); }, {x}) <
              1e-4);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return softmax_channels(in[0]); }, {x}) < 1e-4);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return crop2d(in[0], 1, 5, 2, 7); }, {x}) <
              1e-6);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return pad_insert2d(in[0], 9, 11, 2, 1); },
                  {x}) < 1e-6);

        auto a2 = TensorD::rand_normal({3, 4}, rng);
        auto b2 = TensorD::rand_normal({4, 2}, rng);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return matmul(in[0], in[1]); }, {a2, b2}) <
              1e-4);

        // relu away from the kink
        auto xr = TensorD::rand_normal({4, 4}, rng);
        for (auto& v : xr.mutable_data())
            if (std::abs(v) < 0.1) v += 0.2;
        CHECK(testutil::gradcheck([](std::vector<TensorD>& in) { return relu(in[0]); }, {xr}) <
              1e-6);

        // KL wrt both args (interior points)
        auto p = random_simplex(4, 2, 2, rng);
        auto q = random_simplex(4, 2, 2, rng);
        CHECK(testutil::gradcheck(
                  [](std::vector<TensorD>& in) { return kl_divergence(in[0], in[1]); }, {p, q}) <
              1e-4);

        // CE wrt logits, weighted + temperature
        LabelMap lab(3, 4);
        Rng lr(static_cast<uint64_t>(i) + 100);
        for (auto& vl : lab.v) vl = static_cast<int32_t>(lr.uniform_int(5));
        lab.v[0] = kIgnoreLabel;
        auto wts = TensorD::rand_uniform({3, 4}, rng, 0.1, 1.0);
        auto logits = TensorD::rand_normal({5, 3, 4}, rng);
        CHECK(testutil::gradcheck(
                  [&](std::vector<TensorD>& in) {
                      return softmax_cross_entropy(in[0], lab, wts, 1.7);
                  },
                  {logits}) < 1e-4);
    }
}
