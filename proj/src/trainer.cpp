#include "dapass/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "dapass/cram.hpp"
#include "dapass/evalm.hpp"
#include "dapass/ops.hpp"

namespace dapass::train {

double poly_lr(double base_lr, int64_t t, int64_t total, double power) {
    require(total >= 1, "poly_lr: schedule length must be >= 1");
    require(t >= 0, "poly_lr: negative step");
    require(t <= total, "poly_lr: step " + std::to_string(t) + " beyond schedule end " +
                            std::to_string(total));
    return base_lr * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total), power);
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream ss;
    ss << "iteration,phase,loss_total,loss_fused,loss_detail,lr\n";
    for (const auto& r : rows)
        ss << r.iteration << "," << r.phase << "," << r.loss_total << "," << r.loss_fused << ","
           << r.loss_detail << "," << r.lr << "\n";
    return ss.str();
}

namespace {

AdamWConfig adam_config(const TrainConfig& cfg) {
    AdamWConfig a;
    a.beta1 = cfg.adam_beta1;
    a.beta2 = cfg.adam_beta2;
    a.eps = cfg.adam_eps;
    a.weight_decay = cfg.weight_decay;
    return a;
}

TensorF full_image_ce(const SegModelF& model, const TensorF& image, const LabelMap& labels,
                      const TensorF& weights, double temperature) {
    auto out = model.forward(image);
    auto up = bilinear_resize(out.logits, image.dim(1), image.dim(2));
    return softmax_cross_entropy(up, labels, weights, temperature);
}

struct TeacherAnalysis {
    LabelMap label;
    TensorF confidence;
    TensorF features;
};

// Frozen pseudo-labeling model. Its parameters never require gradients, so
// its forwards build no graph.
class Teacher {
public:
    Teacher(const SegModelConfig& mc, const ParamSnapshot<float>& snap, double floor)
        : model_(SegModelF::init(mc, 0)), floor_(floor) {
        model_.restore(snap);
        model_.set_requires_grad(false);
    }

    TeacherAnalysis analyze(const TensorF& image) const {
        auto out = model_.forward(image);
        auto up = bilinear_resize(out.logits, image.dim(1), image.dim(2));
        auto probs = softmax_channels(up);
        TeacherAnalysis t;
        t.label = argmax_channels(probs);
        t.confidence = max_channels(probs);
        t.features = out.features.detach();
        for (int64_t i = 0; i < t.label.size(); ++i)
            if (static_cast<double>(t.confidence.data()[static_cast<size_t>(i)]) < floor_)
                t.label.v[static_cast<size_t>(i)] = kIgnoreLabel;
        return t;
    }

private:
    SegModelF model_;
    double floor_;
};

// Panorama view augmentation for adaptation steps: a random circular
// horizontal shift (exact for equirectangular content) plus an optional
// horizontal flip, applied identically to pixels, pseudo-labels and
// confidence. Gives self-training signal beyond refitting the frozen
// teacher's own predictions.
pcgd::PseudoSample augment_view(const pcgd::PseudoSample& ps, Rng& rng) {
    const int64_t h = ps.label.h, w = ps.label.w, hw = h * w;
    const int64_t dx = rng.uniform_int(w);
    const bool flip = rng.uniform() < 0.5;
    if (dx == 0 && !flip) return ps;
    pcgd::PseudoSample out;
    out.id = ps.id;
    out.image = TensorF::zeros({3, h, w});
    out.label = LabelMap(h, w);
    out.confidence = TensorF::zeros({h, w});
    auto& img = out.image.mutable_data();
    auto& conf = out.confidence.mutable_data();
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            int64_t src = flip ? (w - 1 - x + dx) % w : (x + dx) % w;
            out.label.v[y * w + x] = ps.label.v[y * w + src];
            conf[y * w + x] = ps.confidence.data()[y * w + src];
            for (int c = 0; c < 3; ++c)
                img[c * hw + y * w + x] = ps.image.data()[c * hw + y * w + src];
        }
    }
    return out;
}

struct CramStepValues {
    double fused = 0, detail = 0;
};

// One cross-resolution loss evaluation: sample a context crop and a detail
// crop, run both branches, fuse with the masked attention and combine the
// two branch losses.
TensorF cram_step_loss(const SegModelF& model, const TensorF& image, const LabelMap& labels,
                       const TensorF& conf, const TrainConfig& cfg, Rng& rng,
                       CramStepValues* values) {
    const int64_t o = cfg.output_stride, s = cfg.scale_s;
    auto ctx = cram::sample_context_crop(image.dim(1), image.dim(2), s, o, cfg.context_h,
                                         cfg.context_w, rng);
    auto det = cram::sample_detail_crop(ctx, cfg.detail_h, cfg.detail_w, o, rng);
    auto lr_in = cram::extract_context(image, ctx);
    auto hr_in = cram::extract_detail(image, ctx, det);
    auto lr_out = model.forward(lr_in);
    auto hr_out = model.forward(hr_in);

    cram::FusionInputs<float> fin;
    fin.context_logits = lr_out.logits;
    fin.detail_logits = hr_out.logits;
    fin.attention = sigmoid(lr_out.attn_logit);
    fin.detail_cell_top = det.top / o;
    fin.detail_cell_left = det.left / o;
    auto fused = cram::fuse(fin, s, o);

    LabelMap p_fused = cram::crop_label(labels, ctx.top, ctx.bottom, ctx.left, ctx.right);
    LabelMap p_det = cram::crop_label(labels, ctx.top + det.top, ctx.top + det.bottom,
                                      ctx.left + det.left, ctx.left + det.right);
    TensorF q_fused, q_det;
    if (conf.defined()) {
        q_fused = cram::crop_plane(conf, ctx.top, ctx.bottom, ctx.left, ctx.right);
        q_det = cram::crop_plane(conf, ctx.top + det.top, ctx.top + det.bottom,
                                 ctx.left + det.left, ctx.left + det.right);
    }
    auto parts = cram::cram_loss(fused, hr_out.logits, p_fused, p_det, q_fused, q_det,
                                 cfg.lambda_d, cfg.temperature, o);
    if (values) {
        values->fused = static_cast<double>(parts.fused_ce.item());
        values->detail = static_cast<double>(parts.detail_ce.item());
    }
    return parts.total;
}

}  // namespace

PretrainResult pretrain_source(const TrainConfig& cfg, const std::vector<Sample>& train,
                               const std::vector<Sample>& val) {
    cfg.validate();
    require(!train.empty(), "pretrain: no training samples");
    auto model = SegModelF::init(cfg.model_config(), cfg.seed);
    AdamW<float> opt(model.parameter_tensors(), adam_config(cfg));
    Rng rng = Rng(cfg.seed).fork("pretrain");

    PretrainResult res;
    for (int64_t t = 0; t < cfg.pretrain_iters; ++t) {
        const double lr = poly_lr(cfg.base_lr, t, cfg.pretrain_iters, cfg.poly_power);
        model.zero_grad();
        TensorF loss;
        for (int64_t b = 0; b < cfg.batch; ++b) {
            const auto& s = train[static_cast<size_t>(
                rng.uniform_int(static_cast<int64_t>(train.size())))];
            auto l = full_image_ce(model, s.image, s.label, TensorF(), 1.0);
            loss = loss.defined() ? add(loss, l) : l;
        }
        loss = scale(loss, 1.0f / static_cast<float>(cfg.batch));
        res.final_loss = static_cast<double>(loss.item());
        if (!std::isfinite(res.final_loss) || res.final_loss > 1e3)
            throw InternalError("pretraining diverged at iteration " + std::to_string(t) +
                                " (loss " + std::to_string(res.final_loss) + ")");
        backward(loss);
        opt.step(lr);
        if (t % 50 == 0 || t == cfg.pretrain_iters - 1)
            res.history.push_back({t, "pretrain", res.final_loss, 0, 0, lr});
    }
    check_internal(model.all_finite(), "pretrain: non-finite parameter after optimizer step");
    res.snapshot = model.snapshot("source", cfg.pretrain_iters);
    if (!val.empty())
        res.source_val_miou = evalm::evaluate_miou(model, val, default_minority_classes());
    return res;
}

std::vector<std::string> ablation_arm_names(bool with_cram) {
    std::vector<std::string> arms = {"Source-Only", "Unweighted Pseudo-Labels", "w/o Path A",
                                     "w/o Path B", "PCGD (Full)"};
    if (with_cram) arms.push_back("PCGD + CRAM");
    return arms;
}

TrainConfig arm_config(const TrainConfig& base, const std::string& arm) {
    TrainConfig c = base;
    if (arm == "Unweighted Pseudo-Labels") {
        c.use_path_a = false;
        c.use_path_b = false;
        c.use_cram = false;
        c.weighted_pseudo_labels = false;
    } else if (arm == "w/o Path A") {
        c.use_path_a = false;
        c.use_path_b = true;
        c.use_cram = false;
    } else if (arm == "w/o Path B") {
        c.use_path_a = true;
        c.use_path_b = false;
        c.use_cram = false;
    } else if (arm == "PCGD (Full)") {
        c.use_path_a = true;
        c.use_path_b = true;
        c.use_cram = false;
    } else if (arm == "PCGD + CRAM") {
        c.use_path_a = true;
        c.use_path_b = true;
        c.use_cram = true;
    } else if (arm != "Source-Only") {
        throw InvalidArgument("unknown ablation arm '" + arm + "'");
    }
    return c;
}

AdaptResult adapt(const TrainConfig& cfg, const ParamSnapshot<float>& source_snapshot,
                  const std::vector<UnlabeledSample>& target) {
    cfg.validate();
    require(!target.empty(), "adapt: no target images");
    require(cfg.tau <= cfg.total_iters, "adapt: tau must not exceed total_iters");
    const auto mc = cfg.model_config();
    const int64_t n = static_cast<int64_t>(target.size());

    AdaptResult res;
    Rng rng = Rng(cfg.seed).fork("adapt");

    // Teacher pass: pseudo-label, confidence and retrieval descriptor per image.
    Teacher teacher(mc, source_snapshot, cfg.confidence_floor);
    std::vector<pcgd::PseudoSample> store(target.size());
    std::vector<std::vector<float>> descs(target.size());
    std::unordered_map<std::string, size_t> index_of;
    for (size_t i = 0; i < target.size(); ++i) {
        auto t = teacher.analyze(target[i].image);
        store[i] = {target[i].id, target[i].image, std::move(t.label), std::move(t.confidence)};
        descs[i] = pcgd::style_layout_descriptor(t.features, store[i].label, cfg.classes);
        index_of[target[i].id] = i;
    }
    auto fetch = [&](const std::string& id) -> const pcgd::PseudoSample& {
        return store[index_of.at(id)];
    };

    auto model = SegModelF::init(mc, cfg.seed);
    model.restore(source_snapshot);

    auto record = [&](int64_t it, const std::string& phase, double lt, double lf, double ld,
                      double lr) {
        if (it % 50 == 0 || it == cfg.total_iters - 1)
            res.history.push_back({it, phase, lt, lf, ld, lr});
    };

    auto self_train = [&](SegModelF& m, AdamW<float>& opt, int64_t iters, bool weighted,
                          const std::string& phase, bool do_record) {
        for (int64_t t = 0; t < iters; ++t) {
            const double lr = poly_lr(cfg.base_lr, t, cfg.total_iters, cfg.poly_power);
            m.zero_grad();
            TensorF loss;
            for (int64_t b = 0; b < cfg.batch; ++b) {
                auto ps = augment_view(store[static_cast<size_t>(rng.uniform_int(n))], rng);
                auto l = full_image_ce(m, ps.image, ps.label,
                                       weighted ? ps.confidence : TensorF(), 1.0);
                loss = loss.defined() ? add(loss, l) : l;
            }
            loss = scale(loss, 1.0f / static_cast<float>(cfg.batch));
            const double lv = static_cast<double>(loss.item());
            backward(loss);
            if (!opt.step(lr)) ++res.stats.skipped_nonfinite;
            if (do_record) record(t, phase, lv, 0, 0, lr);
        }
    };

    const bool pcgd_enabled = cfg.use_path_a || cfg.use_path_b;
    if (!pcgd_enabled) {
        // Plain pseudo-label self-training for the whole budget.
        AdamW<float> opt(model.parameter_tensors(), adam_config(cfg));
        self_train(model, opt, cfg.total_iters, cfg.weighted_pseudo_labels, "self_train", true);
        check_internal(model.all_finite(), "adapt: non-finite parameter after optimizer step");
        res.adapted = model.snapshot("adapted", cfg.total_iters);
        return res;
    }

    // Scoring probe: tau iterations of plain self-training from the source
    // weights. Only its snapshot survives; the probe model is discarded.
    ParamSnapshot<float> theta_tau;
    {
        auto probe = SegModelF::init(mc, cfg.seed);
        probe.restore(source_snapshot);
        AdamW<float> popt(probe.parameter_tensors(), adam_config(cfg));
        self_train(probe, popt, cfg.tau, false, "probe", true);
        theta_tau = probe.snapshot("theta_tau", cfg.tau);
    }

    {
        auto scratch = SegModelF::init(mc, cfg.seed);
        scratch.set_requires_grad(false);
        res.records = pcgd::score_all(scratch, source_snapshot, theta_tau, target);
    }
    auto [con_ids, inc_ids] = pcgd::split_sets(res.records, cfg.top_p);
    if (con_ids.empty())
        throw InvalidArgument("adapt: degenerate split produced an empty consistent set");
    auto pools = pcgd::build_class_pools(res.records, cfg.pool_k);

    pcgd::DescriptorIndex index;
    for (const auto& id : con_ids) {
        index.ids.push_back(id);
        index.vecs.push_back(descs[index_of.at(id)]);
    }

    AdamW<float> opt(model.parameter_tensors(), adam_config(cfg));
    auto params = model.parameter_tensors();

    // The paths compose at the loss level: each iteration evaluates the
    // neighbor-denoising gradient (at theta_inner) and the class-balancing
    // gradient, averages them, and takes a single optimizer step at the
    // iteration's scheduled learning rate.
    for (int64_t t = 0; t < cfg.total_iters; ++t) {
        const double lr = poly_lr(cfg.base_lr, t, cfg.total_iters, cfg.poly_power);
        std::vector<std::vector<float>> grad_a;
        bool have_a = false, have_b = false;

        if (cfg.use_path_a && !inc_ids.empty()) {
            const auto& xi_raw = fetch(inc_ids[static_cast<size_t>(
                rng.uniform_int(static_cast<int64_t>(inc_ids.size())))]);
            const std::string nb = pcgd::retrieve_neighbor(descs[index_of.at(xi_raw.id)], index);
            auto xhat_raw =
                pcgd::neighbor_complete(fetch(nb), pcgd::classes_of(xi_raw.label), pools, fetch,
                                        rng, &res.stats.missing_pool_classes, cfg.paste_floor);
            auto xi = augment_view(xi_raw, rng);
            auto xhat = augment_view(xhat_raw, rng);
            CramStepValues cv;
            double outer_value = 0;
            auto inner_fn = [&] {
                return full_image_ce(model, xi.image, xi.label,
                                     cfg.weighted_pseudo_labels ? xi.confidence : TensorF(),
                                     1.0);
            };
            auto outer_fn = [&]() -> TensorF {
                TensorF l;
                if (cfg.use_cram) {
                    l = cram_step_loss(model, xhat.image, xhat.label,
                                       cfg.weighted_pseudo_labels ? xhat.confidence : TensorF(),
                                       cfg, rng, &cv);
                } else {
                    l = full_image_ce(model, xhat.image, xhat.label,
                                      cfg.weighted_pseudo_labels ? xhat.confidence : TensorF(),
                                      1.0);
                }
                outer_value = static_cast<double>(l.item());
                return l;
            };
            auto outcome = pcgd::first_order_bilevel<float>(
                params, inner_fn, outer_fn, cfg.inner_lr, [&] {
                    grad_a.clear();
                    for (auto& p : params) {
                        p.mutable_grad();
                        grad_a.push_back(p.grad());
                    }
                });
            have_a = outcome.applied;
            if (!outcome.applied) ++res.stats.skipped_nonfinite;
            ++res.stats.path_a_steps;
            record(t, "path_a", outer_value, cv.fused, cv.detail, lr);
        }

        if (cfg.use_path_b) {
            // Class-balancing copy-paste gradient.
            std::vector<std::pair<int32_t, double>> choices;
            double z = 0.0;
            for (int c : default_minority_classes()) {
                auto it = pools.find(c);
                if (it == pools.end() || it->second.entries.empty()) continue;
                const double wgt = 1.0 / static_cast<double>(it->second.entries.size());
                choices.emplace_back(c, wgt);
                z += wgt;
            }
            if (choices.empty()) {
                ++res.stats.path_b_noops;
                record(t, "path_b_noop", 0, 0, 0, lr);
            } else {
                double u = rng.uniform() * z;
                int32_t cls = choices.back().first;
                for (const auto& [c, wgt] : choices) {
                    if (u < wgt) {
                        cls = c;
                        break;
                    }
                    u -= wgt;
                }
                const auto& pool = pools.at(cls);
                const auto& donor = fetch(
                    pool.entries[static_cast<size_t>(
                                     rng.uniform_int(static_cast<int64_t>(pool.entries.size())))]
                        .id);
                const auto& base = store[static_cast<size_t>(rng.uniform_int(n))];
                pcgd::PseudoSample aug;
                aug.id = base.id;
                aug.image = base.image.clone();
                aug.label = base.label;
                aug.confidence = base.confidence.clone();
                pcgd::paste_class(aug, donor, cls, cfg.paste_floor);
                aug = augment_view(aug, rng);

                model.zero_grad();
                CramStepValues cv;
                TensorF loss;
                if (cfg.use_cram) {
                    loss = cram_step_loss(model, aug.image, aug.label,
                                          cfg.weighted_pseudo_labels ? aug.confidence
                                                                     : TensorF(),
                                          cfg, rng, &cv);
                } else {
                    loss = full_image_ce(model, aug.image, aug.label,
                                         cfg.weighted_pseudo_labels ? aug.confidence
                                                                    : TensorF(),
                                         1.0);
                }
                const double lv = static_cast<double>(loss.item());
                backward(loss);
                have_b = true;
                ++res.stats.path_b_steps;
                record(t, "path_b", lv, cv.fused, cv.detail, lr);
            }
        }

        if (have_a && have_b) {
            for (size_t k = 0; k < params.size(); ++k) {
                auto& g = params[k].mutable_grad();
                const auto& ga = grad_a[k];
                const float sa = static_cast<float>(cfg.outer_scale);
                for (size_t i = 0; i < g.size(); ++i) g[i] = 0.5f * (sa * ga[i] + g[i]);
            }
            if (!opt.step(lr)) ++res.stats.skipped_nonfinite;
        } else if (have_a) {
            for (size_t k = 0; k < params.size(); ++k) params[k].mutable_grad() = grad_a[k];
            if (!opt.step(lr * cfg.outer_scale)) ++res.stats.skipped_nonfinite;
        } else if (have_b) {
            if (!opt.step(lr)) ++res.stats.skipped_nonfinite;
        }
    }
    check_internal(model.all_finite(), "adapt: non-finite parameter after optimizer step");
    res.adapted = model.snapshot("adapted", cfg.total_iters);
    return res;
}

}  // namespace dapass::train
