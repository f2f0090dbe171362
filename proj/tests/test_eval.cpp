#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "dapass/evalm.hpp"

using namespace dapass;
using evalm::ConfusionMatrix;

namespace {

LabelMap make(int64_t h, int64_t w, std::vector<int32_t> v) {
    LabelMap l(h, w);
    l.v = std::move(v);
    return l;
}

}  // namespace

TEST_CASE("accumulate: hand counts and ignore handling") {
    ConfusionMatrix cm(4);
    cm.accumulate(make(1, 3, {0, 1, 1}), make(1, 3, {0, 1, 1}));
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(1, 1) == 2);
    CHECK(cm.total() == 3);

    ConfusionMatrix cm2(4);
    cm2.accumulate(make(1, 3, {0, 1, 2}), make(1, 3, {255, 255, 255}));
    CHECK(cm2.total() == 0);

    CHECK_THROWS_AS(cm.accumulate(make(1, 2, {0, 0}), make(2, 1, {0, 0})), InvalidArgument);
    CHECK_THROWS_AS(cm.accumulate(make(1, 1, {0}), make(1, 1, {7})), InvalidArgument);
}

TEST_CASE("accumulation is order-independent") {
    std::vector<std::pair<LabelMap, LabelMap>> pairs = {
        {make(1, 2, {0, 1}), make(1, 2, {1, 1})},
        {make(1, 2, {2, 2}), make(1, 2, {2, 0})},
        {make(1, 2, {1, 0}), make(1, 2, {255, 0})},
    };
    ConfusionMatrix fwd(3), rev(3);
    for (const auto& [p, g] : pairs) fwd.accumulate(p, g);
    for (auto it = pairs.rbegin(); it != pairs.rend(); ++it) rev.accumulate(it->first, it->second);
    for (int64_t g = 0; g < 3; ++g)
        for (int64_t p = 0; p < 3; ++p) CHECK(fwd.at(g, p) == rev.at(g, p));
}

TEST_CASE("iou_report: toy case 7/12") {
    // gt [[0,0],[1,1]], pred [[0,1],[1,1]]
    ConfusionMatrix cm(2);
    cm.accumulate(make(2, 2, {0, 1, 1, 1}), make(2, 2, {0, 0, 1, 1}));
    auto r = evalm::iou_report(cm, {1});
    CHECK(r.iou[0] == doctest::Approx(0.5));
    CHECK(r.iou[1] == doctest::Approx(2.0 / 3.0));
    CHECK(r.miou == doctest::Approx(7.0 / 12.0));
    CHECK(r.minority_miou == doctest::Approx(2.0 / 3.0));
    CHECK(r.majority_miou == doctest::Approx(0.5));
}

TEST_CASE("iou_report: perfect and disjoint predictions") {
    ConfusionMatrix cm(3);
    cm.accumulate(make(1, 4, {0, 1, 2, 1}), make(1, 4, {0, 1, 2, 1}));
    auto r = evalm::iou_report(cm, {});
    CHECK(r.miou == doctest::Approx(1.0));
    for (int64_t c = 0; c < 3; ++c) CHECK(r.iou[static_cast<size_t>(c)] == doctest::Approx(1.0));

    ConfusionMatrix dj(3);
    dj.accumulate(make(1, 2, {1, 1}), make(1, 2, {0, 0}));
    auto rd = evalm::iou_report(dj, {});
    CHECK(rd.iou[0] == doctest::Approx(0.0));
    CHECK(rd.iou[1] == doctest::Approx(0.0));
    CHECK(rd.present[2] == false);
    CHECK(rd.miou == doctest::Approx(0.0));
}

TEST_CASE("zero-union classes are excluded from means") {
    ConfusionMatrix cm(4);
    cm.accumulate(make(1, 2, {0, 1}), make(1, 2, {0, 1}));
    auto r = evalm::iou_report(cm, {3});
    CHECK(r.present[2] == false);
    CHECK(r.present[3] == false);
    CHECK(r.miou == doctest::Approx(1.0));
    CHECK(r.minority_miou == doctest::Approx(0.0));  // no minority class present
}

TEST_CASE("miou is invariant under simultaneous relabeling") {
    Rng rng(5);
    LabelMap pred(8, 8), gt(8, 8);
    for (int64_t i = 0; i < 64; ++i) {
        pred.v[i] = static_cast<int32_t>(rng.uniform_int(4));
        gt.v[i] = static_cast<int32_t>(rng.uniform_int(4));
    }
    ConfusionMatrix a(4);
    a.accumulate(pred, gt);
    const double miou_a = evalm::iou_report(a, {}).miou;

    const int32_t perm[4] = {2, 0, 3, 1};
    LabelMap pred2 = pred, gt2 = gt;
    for (int64_t i = 0; i < 64; ++i) {
        pred2.v[i] = perm[pred.v[i]];
        gt2.v[i] = perm[gt.v[i]];
    }
    ConfusionMatrix b(4);
    b.accumulate(pred2, gt2);
    CHECK(evalm::iou_report(b, {}).miou == doctest::Approx(miou_a).epsilon(1e-12));
}

TEST_CASE("report is a pure function and csv carries the summary") {
    ConfusionMatrix cm(8);
    cm.accumulate(make(1, 3, {0, 3, 6}), make(1, 3, {0, 3, 3}));
    auto r1 = evalm::iou_report(cm, default_minority_classes());
    auto r2 = evalm::iou_report(cm, default_minority_classes());
    CHECK(r1.miou == r2.miou);
    CHECK(r1.miou >= 0.0);
    CHECK(r1.miou <= 1.0);
    auto csv = evalm::iou_csv(r1);
    CHECK(csv.find("miou,") != std::string::npos);
    CHECK(csv.find("minority_miou,") != std::string::npos);
    CHECK(csv.find("ceiling,") != std::string::npos);
}
