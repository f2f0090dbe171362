#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dapass/segnet.hpp"
#include "dapass/trainer.hpp"

using namespace dapass;

namespace {

TensorF random_image(int64_t h, int64_t w, uint64_t seed) {
    Rng rng(seed);
    return TensorF::rand_uniform({3, h, w}, rng, 0.0f, 1.0f);
}

SegModelConfig cfg_o4() {
    SegModelConfig c;
    c.arch = "b1-toy";
    c.output_stride = 4;
    return c;
}

}  // namespace

TEST_CASE("shape contract") {
    auto model = SegModelF::init(cfg_o4(), 1);
    auto out = model.forward(random_image(64, 128, 2));
    CHECK(out.logits.shape() == Shape{8, 16, 32});
    CHECK(out.attn_logit.shape() == Shape{1, 16, 32});

    SegModelConfig c8 = cfg_o4();
    c8.output_stride = 8;
    auto m8 = SegModelF::init(c8, 1);
    auto o8 = m8.forward(random_image(64, 128, 2));
    CHECK(o8.logits.shape() == Shape{8, 8, 16});

    for (int64_t h : {32, 64, 256}) {
        for (int64_t w : {32, 128, 512}) {
            auto o = model.forward(random_image(h, w, 3));
            CHECK(o.logits.shape() == Shape{8, h / 4, w / 4});
        }
    }
    CHECK_THROWS_AS(model.forward(random_image(30, 64, 4)), InvalidArgument);
}

TEST_CASE("forward determinism") {
    auto model = SegModelF::init(cfg_o4(), 11);
    auto x = random_image(32, 64, 5);
    auto a = model.forward(x).logits;
    auto b = model.forward(x).logits;
    CHECK(a.data() == b.data());
}

TEST_CASE("snapshot / restore round trip is bit-exact") {
    auto model = SegModelF::init(cfg_o4(), 21);
    auto x = random_image(32, 64, 6);
    auto before = model.forward(x).logits.data();
    auto snap = model.snapshot("theta0");
    for (auto& [name, t] : model.parameters())
        for (auto& v : t.mutable_data()) v += 0.25f;
    CHECK(model.forward(x).logits.data() != before);
    model.restore(snap);
    CHECK(model.forward(x).logits.data() == before);
}

TEST_CASE("snapshot at init equals fresh init under the same seed") {
    auto a = SegModelF::init(cfg_o4(), 77);
    auto b = SegModelF::init(cfg_o4(), 77);
    auto sa = a.snapshot("s"), sb = b.snapshot("s");
    REQUIRE(sa.values.size() == sb.values.size());
    for (size_t i = 0; i < sa.values.size(); ++i)
        CHECK(sa.values[i].second.data() == sb.values[i].second.data());
}

TEST_CASE("training a step changes outputs and snapshots differ") {
    auto model = SegModelF::init(cfg_o4(), 31);
    auto x = random_image(32, 64, 7);
    auto snap0 = model.snapshot("theta0", 0);
    auto before = model.forward(x).logits.data();

    LabelMap lab(32, 64, 2);
    train::AdamW<float> opt(model.parameter_tensors(), {});
    model.zero_grad();
    auto out = model.forward(x);
    auto up = bilinear_resize(out.logits, 32, 64);
    backward(softmax_cross_entropy(up, lab, 1.0));
    CHECK(opt.step(1e-2));

    auto snap1 = model.snapshot("theta1", 1);
    bool any_param_diff = false;
    for (size_t i = 0; i < snap0.values.size(); ++i)
        if (snap0.values[i].second.data() != snap1.values[i].second.data())
            any_param_diff = true;
    CHECK(any_param_diff);

    auto after = model.forward(x).logits.data();
    bool any_out_diff = false;
    for (size_t i = 0; i < before.size(); ++i)
        if (before[i] != after[i]) any_out_diff = true;
    CHECK(any_out_diff);
    CHECK(model.all_finite());
}

TEST_CASE("restore rejects shape-mismatched snapshots") {
    auto b1 = SegModelF::init(cfg_o4(), 1);
    SegModelConfig c2 = cfg_o4();
    c2.arch = "b2-toy";
    auto b2 = SegModelF::init(c2, 1);
    auto snap = b1.snapshot("b1");
    CHECK_THROWS_WITH_AS(b2.restore(snap),
                         doctest::Contains("shape mismatch for tensor 'block0.conv.w'"),
                         InvalidArgument);
}

TEST_CASE("heads are independent, encoder is shared") {
    auto model = SegModelF::init(cfg_o4(), 41);
    auto x = random_image(32, 64, 8);
    auto base = model.forward(x);
    auto base_logits = base.logits.data();
    auto base_attn = base.attn_logit.data();

    for (auto& t : model.head_parameters(false))
        for (auto& v : t.mutable_data()) v += 0.5f;
    auto after_seg = model.forward(x);
    CHECK(after_seg.attn_logit.data() == base_attn);
    CHECK(after_seg.logits.data() != base_logits);

    for (auto& t : model.head_parameters(true))
        for (auto& v : t.mutable_data()) v += 0.5f;
    auto after_attn = model.forward(x);
    CHECK(after_attn.logits.data() == after_seg.logits.data());
    CHECK(after_attn.attn_logit.data() != base_attn);
}

TEST_CASE("parameter count is deterministic and config-invariant") {
    auto a = SegModelF::init(cfg_o4(), 1);
    auto b = SegModelF::init(cfg_o4(), 999);
    CHECK(a.param_count() == b.param_count());
    CHECK(a.param_count() > 0);

    SegModelConfig c2 = cfg_o4();
    c2.arch = "b2-toy";
    auto big = SegModelF::init(c2, 1);
    CHECK(big.param_count() > a.param_count());
}
