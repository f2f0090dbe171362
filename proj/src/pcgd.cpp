#include "dapass/pcgd.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "dapass/ops.hpp"

namespace dapass::pcgd {

namespace {
using json = nlohmann::json;
}

ScoreParts consistency_from_probs(const TensorF& p0, const TensorF& p1) {
    require(same_shape(p0.shape(), p1.shape()), "consistency: probability grids differ in shape");
    require(p0.rank() == 3, "consistency: expects (C,gh,gw)");
    const int64_t c = p0.dim(0);
    const int64_t hw = p0.dim(1) * p0.dim(2);
    ScoreParts out;
    double total = 0.0;
    for (int64_t p = 0; p < hw; ++p) {
        int32_t arg = 0;
        float best = p0.data()[p];
        double kl = 0.0;
        for (int64_t k = 0; k < c; ++k) {
            const double pv = static_cast<double>(p0.data()[k * hw + p]);
            if (static_cast<float>(pv) > best) {
                best = static_cast<float>(pv);
                arg = static_cast<int32_t>(k);
            }
            if (pv <= 0.0) continue;
            const double qv = std::max(static_cast<double>(p1.data()[k * hw + p]), kKlEps);
            kl += pv * (std::log(pv) - std::log(qv));
        }
        total += kl;
        out.per_class[arg] -= kl;
    }
    out.cs = -total;
    return out;
}

ConsistencyRecord consistency_score(SegModelF& scratch, const ParamSnapshot<float>& theta0,
                                    const ParamSnapshot<float>& theta_tau, const TensorF& image,
                                    const std::string& id) {
    scratch.restore(theta0);
    auto p0 = softmax_channels(scratch.forward(image).logits).detach();
    scratch.restore(theta_tau);
    auto p1 = softmax_channels(scratch.forward(image).logits).detach();
    auto parts = consistency_from_probs(p0, p1);
    ConsistencyRecord rec;
    rec.id = id;
    rec.cs = parts.cs;
    rec.per_class = std::move(parts.per_class);
    return rec;
}

std::vector<ConsistencyRecord> score_all(SegModelF& scratch, const ParamSnapshot<float>& theta0,
                                         const ParamSnapshot<float>& theta_tau,
                                         const std::vector<UnlabeledSample>& images) {
    std::vector<TensorF> probs0;
    probs0.reserve(images.size());
    scratch.restore(theta0);
    for (const auto& s : images)
        probs0.push_back(softmax_channels(scratch.forward(s.image).logits).detach());
    scratch.restore(theta_tau);
    std::vector<ConsistencyRecord> out;
    out.reserve(images.size());
    for (size_t i = 0; i < images.size(); ++i) {
        auto p1 = softmax_channels(scratch.forward(images[i].image).logits).detach();
        auto parts = consistency_from_probs(probs0[i], p1);
        ConsistencyRecord rec;
        rec.id = images[i].id;
        rec.cs = parts.cs;
        rec.per_class = std::move(parts.per_class);
        out.push_back(std::move(rec));
    }
    return out;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_sets(
    std::vector<ConsistencyRecord>& records, double top_p) {
    require(!records.empty(), "split_sets: no records");
    require(top_p > 0.0 && top_p <= 100.0, "split_sets: top_p must be in (0,100]");
    const int64_t n = static_cast<int64_t>(records.size());
    int64_t keep = static_cast<int64_t>(
        std::ceil(top_p * static_cast<double>(n) / 100.0));
    keep = std::min(keep, n);
    check_internal(keep >= 1, "split_sets: empty consistent set");

    std::vector<const ConsistencyRecord*> order;
    order.reserve(records.size());
    for (const auto& r : records) order.push_back(&r);
    std::sort(order.begin(), order.end(), [](const ConsistencyRecord* a, const ConsistencyRecord* b) {
        if (a->cs != b->cs) return a->cs > b->cs;
        return a->id < b->id;
    });
    std::set<std::string> chosen;
    for (int64_t i = 0; i < keep; ++i) chosen.insert(order[i]->id);

    std::vector<std::string> con, inc;
    for (auto& r : records) {
        r.consistent = chosen.count(r.id) > 0;
        (r.consistent ? con : inc).push_back(r.id);
    }
    return {con, inc};
}

std::map<int32_t, ClassPool> build_class_pools(const std::vector<ConsistencyRecord>& records,
                                               int64_t k) {
    require(k >= 1, "build_class_pools: K must be >= 1");
    std::map<int32_t, std::vector<PoolEntry>> raw;
    for (const auto& r : records) {
        if (!r.consistent) continue;
        for (const auto& [cls, score] : r.per_class) raw[cls].push_back({r.id, score});
    }
    std::map<int32_t, ClassPool> pools;
    for (auto& [cls, entries] : raw) {
        std::sort(entries.begin(), entries.end(), [](const PoolEntry& a, const PoolEntry& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.id < b.id;
        });
        ClassPool pool;
        pool.cls = cls;
        const size_t keep = std::min(entries.size(), static_cast<size_t>(k));
        pool.entries.assign(entries.begin(), entries.begin() + static_cast<int64_t>(keep));
        pools.emplace(cls, std::move(pool));
    }
    return pools;
}

namespace {

void l2_normalize(std::vector<float>& v) {
    double n = 0.0;
    for (float x : v) n += static_cast<double>(x) * x;
    n = std::sqrt(n);
    if (n < 1e-12) return;
    for (float& x : v) x = static_cast<float>(x / n);
}

}  // namespace

std::vector<float> style_layout_descriptor(const TensorF& encoder_features,
                                           const LabelMap& pseudo_label, int64_t classes) {
    require(encoder_features.rank() == 3, "descriptor: features must be (C,h,w)");
    const int64_t fc = encoder_features.dim(0);
    const int64_t fhw = encoder_features.dim(1) * encoder_features.dim(2);

    std::vector<float> style(static_cast<size_t>(2 * fc));
    for (int64_t c = 0; c < fc; ++c) {
        double s = 0.0, s2 = 0.0;
        for (int64_t p = 0; p < fhw; ++p) {
            const double v = static_cast<double>(encoder_features.data()[c * fhw + p]);
            s += v;
            s2 += v * v;
        }
        const double m = s / fhw;
        double var = s2 / fhw - m * m;
        if (var < 0) var = 0;
        style[static_cast<size_t>(c)] = static_cast<float>(m);
        style[static_cast<size_t>(fc + c)] = static_cast<float>(std::sqrt(var));
    }
    l2_normalize(style);

    constexpr int64_t kGridH = 4, kGridW = 8;
    std::vector<float> layout(static_cast<size_t>(kGridH * kGridW * classes), 0.0f);
    std::vector<int64_t> cell_count(static_cast<size_t>(kGridH * kGridW), 0);
    for (int64_t y = 0; y < pseudo_label.h; ++y) {
        const int64_t gy = std::min(kGridH - 1, y * kGridH / pseudo_label.h);
        for (int64_t x = 0; x < pseudo_label.w; ++x) {
            const int64_t gx = std::min(kGridW - 1, x * kGridW / pseudo_label.w);
            const int64_t cell = gy * kGridW + gx;
            ++cell_count[static_cast<size_t>(cell)];
            const int32_t lab = pseudo_label.at(y, x);
            if (lab == kIgnoreLabel || lab < 0 || lab >= classes) continue;
            layout[static_cast<size_t>(cell * classes + lab)] += 1.0f;
        }
    }
    for (int64_t cell = 0; cell < kGridH * kGridW; ++cell) {
        const int64_t n = cell_count[static_cast<size_t>(cell)];
        if (n == 0) continue;
        for (int64_t c = 0; c < classes; ++c)
            layout[static_cast<size_t>(cell * classes + c)] /= static_cast<float>(n);
    }
    l2_normalize(layout);

    std::vector<float> desc;
    desc.reserve(style.size() + layout.size());
    desc.insert(desc.end(), style.begin(), style.end());
    desc.insert(desc.end(), layout.begin(), layout.end());
    l2_normalize(desc);
    return desc;
}

std::string retrieve_neighbor(const std::vector<float>& query, const DescriptorIndex& index) {
    require(!index.ids.empty(), "retrieve_neighbor: empty index");
    check_internal(index.ids.size() == index.vecs.size(), "retrieve_neighbor: corrupt index");
    double best = -2.0;
    const std::string* best_id = nullptr;
    for (size_t i = 0; i < index.ids.size(); ++i) {
        require(index.vecs[i].size() == query.size(),
                "retrieve_neighbor: descriptor dimension mismatch");
        double dot = 0.0;
        for (size_t k = 0; k < query.size(); ++k)
            dot += static_cast<double>(query[k]) * static_cast<double>(index.vecs[i][k]);
        if (best_id == nullptr || dot > best || (dot == best && index.ids[i] < *best_id)) {
            best = dot;
            best_id = &index.ids[i];
        }
    }
    return *best_id;
}

std::vector<int32_t> classes_of(const LabelMap& l) {
    std::set<int32_t> s;
    for (int32_t v : l.v)
        if (v != kIgnoreLabel) s.insert(v);
    return {s.begin(), s.end()};
}

int64_t paste_class(PseudoSample& base, const PseudoSample& donor, int32_t cls,
                    double min_confidence) {
    require(base.label.h == donor.label.h && base.label.w == donor.label.w,
            "paste_class: sample shapes differ");
    const int64_t hw = base.label.size();
    auto& img = base.image.mutable_data();
    auto& conf = base.confidence.mutable_data();
    int64_t pasted = 0;
    for (int64_t p = 0; p < hw; ++p) {
        if (donor.label.v[p] != cls) continue;
        if (static_cast<double>(donor.confidence.data()[p]) < min_confidence) continue;
        base.label.v[p] = cls;
        conf[p] = donor.confidence.data()[p];
        for (int c = 0; c < 3; ++c) img[c * hw + p] = donor.image.data()[c * hw + p];
        ++pasted;
    }
    return pasted;
}

PseudoSample neighbor_complete(const PseudoSample& x_con,
                               const std::vector<int32_t>& wanted_classes,
                               const std::map<int32_t, ClassPool>& pools,
                               const std::function<const PseudoSample&(const std::string&)>& fetch,
                               Rng& rng, int64_t* skipped_classes, double min_confidence) {
    PseudoSample out;
    out.id = x_con.id;
    out.image = x_con.image.clone();
    out.label = x_con.label;
    out.confidence = x_con.confidence.clone();

    const auto present_vec = classes_of(x_con.label);
    std::set<int32_t> present(present_vec.begin(), present_vec.end());
    std::vector<int32_t> missing;
    for (int32_t c : wanted_classes)
        if (!present.count(c)) missing.push_back(c);
    std::sort(missing.begin(), missing.end());

    for (int32_t c : missing) {
        auto it = pools.find(c);
        if (it == pools.end() || it->second.entries.empty()) {
            if (skipped_classes) ++(*skipped_classes);
            continue;
        }
        const auto& entry =
            it->second.entries[static_cast<size_t>(rng.uniform_int(
                static_cast<int64_t>(it->second.entries.size())))];
        paste_class(out, fetch(entry.id), c, min_confidence);
    }
    return out;
}

void write_records(const std::string& path, const std::vector<ConsistencyRecord>& records) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot write records: " + path);
    for (const auto& r : records) {
        json j;
        j["id"] = r.id;
        j["cs"] = r.cs;
        j["assignment"] = r.consistent ? "consistent" : "inconsistent";
        json pc = json::object();
        for (const auto& [cls, score] : r.per_class) pc[std::to_string(cls)] = score;
        j["per_class"] = pc;
        f << j.dump() << "\n";
    }
}

std::vector<ConsistencyRecord> read_records(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read records: " + path);
    std::vector<ConsistencyRecord> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        ConsistencyRecord r;
        r.id = j.at("id").get<std::string>();
        r.cs = j.at("cs").get<double>();
        r.consistent = j.at("assignment").get<std::string>() == "consistent";
        for (auto it = j.at("per_class").begin(); it != j.at("per_class").end(); ++it)
            r.per_class[static_cast<int32_t>(std::stoi(it.key()))] = it.value().get<double>();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace dapass::pcgd
