// Command-line driver: dataset generation, source pretraining, source-free
// adaptation, evaluation, the ablation suite and the hyperparameter sweep.
// Every command echoes its effective config into --out and ends with a single
// machine-parseable "RESULT {...}" line. Exit codes: 0 success, 1 bad
// input/precondition, 2 internal invariant violation.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dapass/checkpoint.hpp"
#include "dapass/config.hpp"
#include "dapass/dataset.hpp"
#include "dapass/evalm.hpp"
#include "dapass/panosynth.hpp"
#include "dapass/pcgd.hpp"
#include "dapass/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dapass;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    uint64_t seed = 0;
    bool seed_set = false;
};

TrainConfig resolve_config(const CommonArgs& a) {
    TrainConfig cfg = a.config_path.empty() ? TrainConfig{} : load_config(a.config_path);
    if (a.seed_set) cfg.seed = a.seed;
    cfg.validate();
    return cfg;
}

void emit_result(const json& j) { std::cout << "RESULT " << j.dump() << std::endl; }

void write_text(const std::string& path, const std::string& text) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << text;
}

ParamSnapshot<float> load_model_snapshot(const std::string& path) {
    return ckpt::load_checkpoint(path).snapshot;
}

int cmd_gen_data(const CommonArgs& a) {
    TrainConfig cfg = resolve_config(a);
    write_effective_config(cfg, a.out_dir);
    const auto src_spec = cfg.data.source_spec(cfg.seed);
    const auto tgt_spec = cfg.data.target_spec(cfg.seed);
    std::vector<Sample> all;
    auto append = [&](std::vector<Sample> v) {
        for (auto& s : v) all.push_back(std::move(s));
    };
    append(synth::gen_source(src_spec, cfg.data.n_source_train, SplitTag::Train));
    append(synth::gen_source(src_spec, cfg.data.n_source_val, SplitTag::Val));
    append(synth::gen_target(tgt_spec, cfg.data.n_target_train, SplitTag::Train));
    append(synth::gen_target(tgt_spec, cfg.data.n_target_val, SplitTag::Val));
    data::write_dataset(a.out_dir, all);
    emit_result({{"cmd", "gen-data"},
                 {"out", a.out_dir},
                 {"samples", all.size()},
                 {"source_train", cfg.data.n_source_train},
                 {"source_val", cfg.data.n_source_val},
                 {"target_train", cfg.data.n_target_train},
                 {"target_val", cfg.data.n_target_val}});
    return 0;
}

int cmd_pretrain(const CommonArgs& a, const std::string& data_dir) {
    TrainConfig cfg = resolve_config(a);
    write_effective_config(cfg, a.out_dir);
    auto tr = data::load_samples(data_dir, Domain::Source, SplitTag::Train);
    auto va = data::load_samples(data_dir, Domain::Source, SplitTag::Val);
    auto res = train::pretrain_source(cfg, tr, va);
    ckpt::CheckpointMeta meta{"source", cfg.pretrain_iters, config_to_json(cfg)};
    ckpt::save_checkpoint(res.snapshot, meta, a.out_dir + "/source.ckpt");
    write_text(a.out_dir + "/pretrain_metrics.csv", train::metrics_csv(res.history));
    emit_result({{"cmd", "pretrain"},
                 {"checkpoint", a.out_dir + "/source.ckpt"},
                 {"final_loss", res.final_loss},
                 {"source_val_miou", res.source_val_miou}});
    return 0;
}

int cmd_adapt(const CommonArgs& a, const std::string& data_dir, const std::string& model_path) {
    TrainConfig cfg = resolve_config(a);
    write_effective_config(cfg, a.out_dir);
    auto snap = load_model_snapshot(model_path);
    auto target = data::load_unlabeled_split(data_dir, Domain::Target, SplitTag::Train);
    auto res = train::adapt(cfg, snap, target);
    ckpt::CheckpointMeta meta{"adapted", cfg.total_iters, config_to_json(cfg)};
    ckpt::save_checkpoint(res.adapted, meta, a.out_dir + "/adapted.ckpt");
    write_text(a.out_dir + "/metrics.csv", train::metrics_csv(res.history));
    if (!res.records.empty()) pcgd::write_records(a.out_dir + "/split_records.jsonl", res.records);
    emit_result({{"cmd", "adapt"},
                 {"checkpoint", a.out_dir + "/adapted.ckpt"},
                 {"path_a_steps", res.stats.path_a_steps},
                 {"path_b_steps", res.stats.path_b_steps},
                 {"skipped_nonfinite", res.stats.skipped_nonfinite}});
    return 0;
}

Domain parse_domain(const std::string& split) {
    if (split.rfind("source", 0) == 0) return Domain::Source;
    if (split.rfind("target", 0) == 0) return Domain::Target;
    throw InvalidArgument("unknown split '" + split + "'");
}

SplitTag parse_split_tag(const std::string& split) {
    if (split.size() >= 3 && split.substr(split.size() - 3) == "val") return SplitTag::Val;
    if (split.size() >= 5 && split.substr(split.size() - 5) == "train") return SplitTag::Train;
    throw InvalidArgument("unknown split '" + split + "'");
}

int cmd_eval(const CommonArgs& a, const std::string& data_dir, const std::string& model_path,
             const std::string& split, int64_t render_n) {
    TrainConfig cfg = resolve_config(a);
    write_effective_config(cfg, a.out_dir);
    auto snap = load_model_snapshot(model_path);
    auto model = SegModelF::init(cfg.model_config(), cfg.seed);
    model.restore(snap);
    auto samples = data::load_samples(data_dir, parse_domain(split), parse_split_tag(split));
    evalm::IouReport report;
    const double miou =
        evalm::evaluate_miou(model, samples, default_minority_classes(), &report);
    write_text(a.out_dir + "/iou_report.csv", evalm::iou_csv(report));
    for (int64_t i = 0; i < std::min<int64_t>(render_n, static_cast<int64_t>(samples.size()));
         ++i) {
        auto pred = evalm::predict_labels(model, samples[static_cast<size_t>(i)].image);
        evalm::render_comparison(a.out_dir + "/render_" + samples[static_cast<size_t>(i)].id +
                                     ".ppm",
                                 pred, samples[static_cast<size_t>(i)].label);
    }
    emit_result({{"cmd", "eval"},
                 {"split", split},
                 {"miou", miou},
                 {"minority_miou", report.minority_miou},
                 {"majority_miou", report.majority_miou},
                 {"report", a.out_dir + "/iou_report.csv"}});
    return 0;
}

struct ArmRow {
    std::string arm;
    uint64_t seed;
    double miou, minority, majority;
};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_ablate(const CommonArgs& a, const std::string& data_dir, const std::string& seeds_arg,
               bool with_cram) {
    TrainConfig base = resolve_config(a);
    write_effective_config(base, a.out_dir);
    std::vector<uint64_t> seeds;
    {
        std::istringstream ss(seeds_arg.empty() ? std::to_string(base.seed) : seeds_arg);
        std::string tok;
        while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
    }
    auto src_tr = data::load_samples(data_dir, Domain::Source, SplitTag::Train);
    auto src_va = data::load_samples(data_dir, Domain::Source, SplitTag::Val);
    auto tgt_tr = data::load_unlabeled_split(data_dir, Domain::Target, SplitTag::Train);
    auto tgt_va = data::load_samples(data_dir, Domain::Target, SplitTag::Val);

    const auto arms = train::ablation_arm_names(with_cram);
    std::vector<ArmRow> rows;
    for (uint64_t seed : seeds) {
        TrainConfig cfg = base;
        cfg.seed = seed;
        auto pre = train::pretrain_source(cfg, src_tr, src_va);
        for (const auto& arm : arms) {
            TrainConfig ac = train::arm_config(cfg, arm);
            ParamSnapshot<float> final_snap;
            if (arm == "Source-Only") {
                final_snap = pre.snapshot;
            } else {
                final_snap = train::adapt(ac, pre.snapshot, tgt_tr).adapted;
            }
            auto model = SegModelF::init(ac.model_config(), ac.seed);
            model.restore(final_snap);
            evalm::IouReport rep;
            const double miou =
                evalm::evaluate_miou(model, tgt_va, default_minority_classes(), &rep);
            rows.push_back({arm, seed, miou, rep.minority_miou, rep.majority_miou});
            std::cerr << "[ablate] seed " << seed << "  " << arm << "  miou " << miou
                      << "  minority " << rep.minority_miou << "\n";
        }
    }

    std::ostringstream csv;
    csv << "arm,seed,miou,minority_miou,majority_miou\n";
    for (const auto& r : rows)
        csv << r.arm << "," << r.seed << "," << r.miou << "," << r.minority << "," << r.majority
            << "\n";
    write_text(a.out_dir + "/ablate.csv", csv.str());

    json summary = json::array();
    std::cout << "arm, median mIoU over " << seeds.size() << " seed(s)\n";
    for (const auto& arm : arms) {
        std::vector<double> m, mn;
        for (const auto& r : rows)
            if (r.arm == arm) {
                m.push_back(r.miou);
                mn.push_back(r.minority);
            }
        std::cout << "  " << arm << ": " << median(m) << "\n";
        summary.push_back({{"arm", arm},
                           {"median_miou", median(m)},
                           {"median_minority_miou", median(mn)}});
    }
    emit_result({{"cmd", "ablate"}, {"csv", a.out_dir + "/ablate.csv"}, {"arms", summary}});
    return 0;
}

int cmd_sweep(const CommonArgs& a, const std::string& data_dir, const std::string& p_grid_arg,
              const std::string& tau_ratio_arg) {
    TrainConfig base = resolve_config(a);
    write_effective_config(base, a.out_dir);
    auto parse_grid = [](const std::string& s) {
        std::vector<double> out;
        std::istringstream ss(s);
        std::string tok;
        while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
        return out;
    };
    const std::vector<double> p_grid =
        p_grid_arg.empty() ? std::vector<double>{1, 5, 10, 15, 20} : parse_grid(p_grid_arg);
    const std::vector<double> tau_ratios =
        tau_ratio_arg.empty() ? std::vector<double>{0.2, 0.4, 0.6, 0.8, 1.0}
                              : parse_grid(tau_ratio_arg);

    auto src_tr = data::load_samples(data_dir, Domain::Source, SplitTag::Train);
    auto src_va = data::load_samples(data_dir, Domain::Source, SplitTag::Val);
    auto tgt_tr = data::load_unlabeled_split(data_dir, Domain::Target, SplitTag::Train);
    auto tgt_va = data::load_samples(data_dir, Domain::Target, SplitTag::Val);

    auto pre = train::pretrain_source(base, src_tr, src_va);
    std::ostringstream csv;
    csv << "p,tau_ratio,tau,miou,minority_miou,majority_miou\n";
    json rows = json::array();
    for (double r : tau_ratios) {
        for (double p : p_grid) {
            TrainConfig cfg = base;
            cfg.top_p = p;
            cfg.tau = std::max<int64_t>(
                1, static_cast<int64_t>(std::llround(r * static_cast<double>(cfg.total_iters))));
            auto res = train::adapt(cfg, pre.snapshot, tgt_tr);
            auto model = SegModelF::init(cfg.model_config(), cfg.seed);
            model.restore(res.adapted);
            evalm::IouReport rep;
            const double miou =
                evalm::evaluate_miou(model, tgt_va, default_minority_classes(), &rep);
            csv << p << "," << r << "," << cfg.tau << "," << miou << "," << rep.minority_miou
                << "," << rep.majority_miou << "\n";
            rows.push_back({{"p", p}, {"tau_ratio", r}, {"miou", miou}});
            std::cerr << "[sweep] P=" << p << " tau_ratio=" << r << " miou=" << miou << "\n";
        }
    }
    write_text(a.out_dir + "/sweep.csv", csv.str());
    emit_result({{"cmd", "sweep"}, {"csv", a.out_dir + "/sweep.csv"}, {"rows", rows}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"panoramic source-free domain adaptation sandbox"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string data_dir, model_path, split = "target_val";
    std::string seeds_arg, p_grid_arg, tau_ratio_arg;
    int64_t render_n = 0;
    bool with_cram = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", common.config_path, "config JSON path");
        cmd->add_option("--out", common.out_dir, "output directory");
        cmd->add_option("--seed", common.seed, "run seed (overrides config)")
            ->each([&](const std::string&) { common.seed_set = true; });
    };

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
    add_common(gen);

    auto* pre = app.add_subcommand("pretrain", "train the source model");
    add_common(pre);
    pre->add_option("--data", data_dir, "dataset directory")->required();

    auto* ad = app.add_subcommand("adapt", "source-free adaptation");
    add_common(ad);
    ad->add_option("--data", data_dir, "dataset directory")->required();
    ad->add_option("--model", model_path, "source checkpoint")->required();

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev);
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--model", model_path, "checkpoint to evaluate")->required();
    ev->add_option("--split", split, "source_train|source_val|target_train|target_val");
    ev->add_option("--render", render_n, "render first N prediction/GT comparisons");

    auto* ab = app.add_subcommand("ablate", "run the ablation arm suite");
    add_common(ab);
    ab->add_option("--data", data_dir, "dataset directory")->required();
    ab->add_option("--seeds", seeds_arg, "comma-separated seeds (default: config seed)");
    ab->add_flag("--cram", with_cram, "append the cross-resolution arm");

    auto* sw = app.add_subcommand("sweep", "hyperparameter sensitivity sweep");
    add_common(sw);
    sw->add_option("--data", data_dir, "dataset directory")->required();
    sw->add_option("--p-grid", p_grid_arg, "comma-separated P values (default 1,5,10,15,20)");
    sw->add_option("--tau-ratios", tau_ratio_arg,
                   "comma-separated tau/total ratios (default 0.2,0.4,0.6,0.8,1.0)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(common);
        if (pre->parsed()) return cmd_pretrain(common, data_dir);
        if (ad->parsed()) return cmd_adapt(common, data_dir, model_path);
        if (ev->parsed()) return cmd_eval(common, data_dir, model_path, split, render_n);
        if (ab->parsed()) return cmd_ablate(common, data_dir, seeds_arg, with_cram);
        if (sw->parsed()) return cmd_sweep(common, data_dir, p_grid_arg, tau_ratio_arg);
    } catch (const InvalidArgument& e) {
        std::cerr << "DIAG: " << e.what() << std::endl;
        return 1;
    } catch (const IoError& e) {
        std::cerr << "DIAG: " << e.what() << std::endl;
        return 1;
    } catch (const InternalError& e) {
        std::cerr << "INTERNAL: " << e.what() << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "INTERNAL: " << e.what() << std::endl;
        return 2;
    }
    return 1;
}
