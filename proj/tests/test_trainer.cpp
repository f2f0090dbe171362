#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dapass/panosynth.hpp"
#include "dapass/parallel.hpp"
#include "dapass/trainer.hpp"

using namespace dapass;
using namespace dapass::train;

namespace {

// Micro configuration: a few iterations on tiny images, enough to exercise
// every phase of the loop.
TrainConfig micro_config() {
    TrainConfig cfg;
    cfg.seed = 5;
    cfg.base_lr = 1e-3;
    cfg.batch = 2;
    cfg.total_iters = 8;
    cfg.tau = 4;
    cfg.pretrain_iters = 6;
    cfg.top_p = 25.0;
    cfg.pool_k = 3;
    cfg.context_h = 16;
    cfg.context_w = 32;
    cfg.detail_h = 8;
    cfg.detail_w = 16;
    cfg.data.source_width = 64;
    cfg.data.source_height = 32;
    cfg.data.target_width = 64;
    cfg.data.target_height = 32;
    cfg.data.n_source_train = 8;
    cfg.data.n_source_val = 4;
    cfg.data.n_target_train = 8;
    cfg.data.n_target_val = 4;
    return cfg;
}

struct MicroData {
    std::vector<Sample> src_train, src_val, tgt_val;
    std::vector<UnlabeledSample> tgt_train;
};

MicroData micro_data(const TrainConfig& cfg) {
    MicroData d;
    d.src_train = synth::gen_source(cfg.data.source_spec(cfg.seed), cfg.data.n_source_train,
                                    SplitTag::Train);
    d.src_val =
        synth::gen_source(cfg.data.source_spec(cfg.seed), cfg.data.n_source_val, SplitTag::Val);
    auto tt = synth::gen_target(cfg.data.target_spec(cfg.seed), cfg.data.n_target_train,
                                SplitTag::Train);
    for (auto& s : tt) d.tgt_train.push_back({s.id, s.image});
    d.tgt_val =
        synth::gen_target(cfg.data.target_spec(cfg.seed), cfg.data.n_target_val, SplitTag::Val);
    return d;
}

}  // namespace

TEST_CASE("poly_lr: endpoints, midpoint, range check") {
    CHECK(poly_lr(6e-5, 0, 1200, 0.9) == doctest::Approx(6e-5).epsilon(1e-12));
    CHECK(poly_lr(6e-5, 1200, 1200, 0.9) == doctest::Approx(0.0));
    CHECK(poly_lr(1.0, 600, 1200, 0.9) == doctest::Approx(std::pow(0.5, 0.9)).epsilon(1e-12));
    CHECK(std::pow(0.5, 0.9) == doctest::Approx(0.53589).epsilon(1e-4));
    CHECK_THROWS_AS(poly_lr(1.0, 1201, 1200, 0.9), InvalidArgument);
}

TEST_CASE("adamw: zero gradient cases") {
    auto theta = TensorF::from_data({2}, {1.0f, -2.0f}, true);
    theta.zero_grad();

    AdamWConfig no_decay;
    no_decay.weight_decay = 0.0;
    {
        AdamW<float> opt({theta}, no_decay);
        CHECK(opt.step(1e-3));
        CHECK(theta.data()[0] == 1.0f);
        CHECK(theta.data()[1] == -2.0f);
    }

    AdamWConfig decay;
    decay.weight_decay = 1e-4;
    {
        AdamW<float> opt({theta}, decay);
        CHECK(opt.step(1.0));
        CHECK(theta.data()[0] == doctest::Approx(1.0 * (1.0 - 1e-4)).epsilon(1e-7));
        CHECK(theta.data()[1] == doctest::Approx(-2.0 * (1.0 - 1e-4)).epsilon(1e-7));
    }
}

TEST_CASE("adamw: first step matches the closed form") {
    auto theta = TensorD::from_data({1}, {0.7}, true);
    theta.zero_grad();
    theta.mutable_grad()[0] = 0.5;
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW<double> opt({theta}, cfg);
    CHECK(opt.step(1e-3));
    // m_hat = g, v_hat = g^2 -> delta = -lr * g / (|g| + eps)
    const double expect = 0.7 - 1e-3 * 0.5 / (0.5 + 1e-8);
    CHECK(theta.data()[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw: non-finite gradients skip the step") {
    auto theta = TensorF::from_data({2}, {1.0f, 2.0f}, true);
    theta.zero_grad();
    theta.mutable_grad()[0] = std::numeric_limits<float>::quiet_NaN();
    AdamW<float> opt({theta}, {});
    CHECK(!opt.step(1e-3));
    CHECK(opt.step_count() == 0);
    CHECK(theta.data()[0] == 1.0f);
    CHECK(theta.data()[1] == 2.0f);
}

TEST_CASE("pretrain: deterministic, finite, snapshot restores identically") {
    auto cfg = micro_config();
    auto d = micro_data(cfg);
    auto a = pretrain_source(cfg, d.src_train, d.src_val);
    auto b = pretrain_source(cfg, d.src_train, d.src_val);
    CHECK(a.final_loss == doctest::Approx(b.final_loss).epsilon(1e-9));
    REQUIRE(a.snapshot.values.size() == b.snapshot.values.size());
    for (size_t i = 0; i < a.snapshot.values.size(); ++i)
        CHECK(a.snapshot.values[i].second.data() == b.snapshot.values[i].second.data());
    for (const auto& row : a.history) CHECK(std::isfinite(row.loss_total));
}

TEST_CASE("adapt: bit-reproducible history and parameters under a fixed seed") {
    auto cfg = micro_config();
    auto d = micro_data(cfg);
    auto pre = pretrain_source(cfg, d.src_train, d.src_val);
    auto r1 = adapt(cfg, pre.snapshot, d.tgt_train);
    auto r2 = adapt(cfg, pre.snapshot, d.tgt_train);
    CHECK(metrics_csv(r1.history) == metrics_csv(r2.history));
    REQUIRE(r1.adapted.values.size() == r2.adapted.values.size());
    for (size_t i = 0; i < r1.adapted.values.size(); ++i)
        CHECK(r1.adapted.values[i].second.data() == r2.adapted.values[i].second.data());
    for (const auto& row : r1.history) {
        CHECK(std::isfinite(row.loss_total));
        // the logged lr must reproduce the schedule exactly
        CHECK(row.lr == poly_lr(cfg.base_lr, row.iteration, cfg.total_iters, cfg.poly_power));
    }
    CHECK(!r1.records.empty());
}

TEST_CASE("adapt: results are identical under different worker counts") {
    auto cfg = micro_config();
    auto d = micro_data(cfg);
    auto pre = pretrain_source(cfg, d.src_train, d.src_val);
    ParamSnapshot<float> p1, p4;
    {
        ThreadLimitGuard guard(1);
        p1 = adapt(cfg, pre.snapshot, d.tgt_train).adapted;
    }
    {
        ThreadLimitGuard guard(4);
        p4 = adapt(cfg, pre.snapshot, d.tgt_train).adapted;
    }
    REQUIRE(p1.values.size() == p4.values.size());
    for (size_t i = 0; i < p1.values.size(); ++i)
        CHECK(p1.values[i].second.data() == p4.values[i].second.data());
}

TEST_CASE("adapt: ablation switches change the executed phases") {
    auto cfg = micro_config();
    auto d = micro_data(cfg);
    auto pre = pretrain_source(cfg, d.src_train, d.src_val);

    auto unweighted = arm_config(cfg, "Unweighted Pseudo-Labels");
    auto r_unw = adapt(unweighted, pre.snapshot, d.tgt_train);
    CHECK(r_unw.stats.path_a_steps == 0);
    CHECK(r_unw.stats.path_b_steps == 0);
    CHECK(r_unw.records.empty());

    auto no_a = arm_config(cfg, "w/o Path A");
    auto r_no_a = adapt(no_a, pre.snapshot, d.tgt_train);
    CHECK(r_no_a.stats.path_a_steps == 0);
    CHECK(r_no_a.stats.path_b_steps + r_no_a.stats.path_b_noops == cfg.total_iters);

    auto no_b = arm_config(cfg, "w/o Path B");
    auto r_no_b = adapt(no_b, pre.snapshot, d.tgt_train);
    CHECK(r_no_b.stats.path_b_steps == 0);
    CHECK(r_no_b.stats.path_a_steps == cfg.total_iters);

    auto full = arm_config(cfg, "PCGD (Full)");
    auto r_full = adapt(full, pre.snapshot, d.tgt_train);
    CHECK(r_full.stats.path_a_steps == cfg.total_iters);
    CHECK(r_full.stats.path_b_steps + r_full.stats.path_b_noops == cfg.total_iters);

    auto cram_arm = arm_config(cfg, "PCGD + CRAM");
    auto r_cram = adapt(cram_arm, pre.snapshot, d.tgt_train);
    bool cram_loss_seen = false;
    for (const auto& row : r_cram.history)
        if (row.loss_detail != 0.0) cram_loss_seen = true;
    CHECK(cram_loss_seen);

    CHECK(ablation_arm_names(false).size() == 5);
    CHECK(ablation_arm_names(true).size() == 6);
    CHECK_THROWS_AS(arm_config(cfg, "bogus"), InvalidArgument);
}

TEST_CASE("adapt: tau beyond the schedule is rejected") {
    auto cfg = micro_config();
    cfg.tau = cfg.total_iters + 1;
    auto d = micro_data(cfg);
    auto pre = pretrain_source(micro_config(), d.src_train, d.src_val);
    CHECK_THROWS_AS(adapt(cfg, pre.snapshot, d.tgt_train), InvalidArgument);
}

TEST_CASE("metrics csv format") {
    std::vector<MetricsRow> rows = {{0, "probe", 1.5, 0.2, 0.1, 6e-5}};
    auto csv = metrics_csv(rows);
    CHECK(csv.find("iteration,phase,loss_total,loss_fused,loss_detail,lr") == 0);
    CHECK(csv.find("0,probe,1.5,0.2,0.1,6e-05") != std::string::npos);
}
