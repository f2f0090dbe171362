#include "dapass/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dapass/segnet.hpp"

namespace dapass {

namespace {

using json = nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& known, const std::string& section) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key()))
            throw InvalidArgument("unknown config key '" +
                                  (section.empty() ? it.key() : section + "." + it.key()) + "'");
    }
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

synth::SceneSpec DataConfig::source_spec(uint64_t seed) const {
    synth::SceneSpec s;
    s.seed = seed;
    s.width = source_width;
    s.height = source_height;
    s.decay = decay;
    s.objects_per_image = objects_per_image;
    s.noise_sigma = noise_sigma;
    s.distortion.enabled = false;
    s.color_shift.enabled = false;
    s.distortion.phi_max_deg = phi_max_deg;
    s.distortion.stretch_clamp = stretch_clamp;
    return s;
}

synth::SceneSpec DataConfig::target_spec(uint64_t seed) const {
    synth::SceneSpec s = source_spec(seed ^ 0x7470ULL);
    s.width = target_width;
    s.height = target_height;
    s.distortion.enabled = distortion;
    s.color_shift.enabled = color_shift;
    return s;
}

void TrainConfig::validate() const {
    model_config();  // validates arch / output_stride
    require(base_lr > 0, "base_lr must be positive");
    require(poly_power > 0, "poly_power must be positive");
    require(weight_decay > 0, "weight_decay must be positive");
    require(adam_eps > 0, "adam_eps must be positive");
    require(adam_beta1 > 0 && adam_beta1 < 1 && adam_beta2 > 0 && adam_beta2 < 1,
            "adam betas must be in (0,1)");
    require(batch >= 1, "batch must be >= 1");
    require(total_iters >= 1, "total_iters must be >= 1");
    require(pretrain_iters >= 1, "pretrain_iters must be >= 1");
    require(top_p > 0 && top_p <= 100, "top_p must be in (0,100]");
    require(tau >= 1, "tau must be >= 1");
    require(pool_k >= 1, "pool_k must be >= 1");
    require(inner_lr > 0, "inner_lr must be positive");
    require(outer_scale > 0, "outer_scale must be positive");
    require(confidence_floor >= 0 && confidence_floor < 1, "confidence_floor must be in [0,1)");
    require(paste_floor >= 0 && paste_floor <= 1, "paste_floor must be in [0,1]");
    require(scale_s >= 1, "scale_s must be an integer >= 1");
    require(lambda_d >= 0 && lambda_d <= 1, "lambda_d must be in [0,1]");
    require(temperature > 0, "temperature must be positive");
    require(context_h >= 1 && context_w >= 1 && detail_h >= 1 && detail_w >= 1,
            "crop sizes must be positive");
    require(detail_h <= context_h && detail_w <= context_w,
            "detail crop must not exceed the context crop");
    require(data.decay > 0 && data.decay < 1, "data.decay must be in (0,1)");
    require(data.noise_sigma >= 0, "data.noise_sigma must be >= 0");
    require(data.n_source_train >= 1 && data.n_source_val >= 1 && data.n_target_train >= 1 &&
                data.n_target_val >= 1,
            "dataset sizes must be >= 1");
}

SegModelConfig TrainConfig::model_config() const {
    SegModelConfig mc;
    mc.arch = arch;
    mc.output_stride = output_stride;
    mc.classes = classes;
    mc.widths();   // validates
    mc.strides();  // validates
    return mc;
}

TrainConfig parse_config_json(const std::string& text) {
    TrainConfig cfg;
    std::string trimmed;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) trimmed.push_back(c);
    if (trimmed.empty()) {
        cfg.validate();
        return cfg;
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw InvalidArgument("config root must be a JSON object");
    check_keys(j, {"model", "train", "pcgd", "cram", "data", "seed"}, "");

    if (j.contains("model")) {
        const auto& m = j["model"];
        check_keys(m, {"arch", "output_stride", "classes"}, "model");
        get_to(m, "arch", cfg.arch);
        get_to(m, "output_stride", cfg.output_stride);
        get_to(m, "classes", cfg.classes);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        check_keys(t,
                   {"base_lr", "poly_power", "weight_decay", "adam_eps", "adam_beta1",
                    "adam_beta2", "batch", "total_iters", "pretrain_iters"},
                   "train");
        get_to(t, "base_lr", cfg.base_lr);
        get_to(t, "poly_power", cfg.poly_power);
        get_to(t, "weight_decay", cfg.weight_decay);
        get_to(t, "adam_eps", cfg.adam_eps);
        get_to(t, "adam_beta1", cfg.adam_beta1);
        get_to(t, "adam_beta2", cfg.adam_beta2);
        get_to(t, "batch", cfg.batch);
        get_to(t, "total_iters", cfg.total_iters);
        get_to(t, "pretrain_iters", cfg.pretrain_iters);
    }
    if (j.contains("pcgd")) {
        const auto& p = j["pcgd"];
        check_keys(p,
                   {"top_p", "tau", "pool_k", "inner_lr", "outer_scale", "confidence_floor",
                    "paste_floor", "use_path_a", "use_path_b", "weighted_pseudo_labels"},
                   "pcgd");
        get_to(p, "top_p", cfg.top_p);
        get_to(p, "tau", cfg.tau);
        get_to(p, "pool_k", cfg.pool_k);
        get_to(p, "inner_lr", cfg.inner_lr);
        get_to(p, "outer_scale", cfg.outer_scale);
        get_to(p, "confidence_floor", cfg.confidence_floor);
        get_to(p, "paste_floor", cfg.paste_floor);
        get_to(p, "use_path_a", cfg.use_path_a);
        get_to(p, "use_path_b", cfg.use_path_b);
        get_to(p, "weighted_pseudo_labels", cfg.weighted_pseudo_labels);
    }
    if (j.contains("cram")) {
        const auto& c = j["cram"];
        check_keys(c,
                   {"enabled", "scale_s", "lambda_d", "temperature", "context_h", "context_w",
                    "detail_h", "detail_w"},
                   "cram");
        get_to(c, "enabled", cfg.use_cram);
        get_to(c, "scale_s", cfg.scale_s);
        get_to(c, "lambda_d", cfg.lambda_d);
        get_to(c, "temperature", cfg.temperature);
        get_to(c, "context_h", cfg.context_h);
        get_to(c, "context_w", cfg.context_w);
        get_to(c, "detail_h", cfg.detail_h);
        get_to(c, "detail_w", cfg.detail_w);
    }
    if (j.contains("data")) {
        const auto& d = j["data"];
        check_keys(d,
                   {"source_width", "source_height", "target_width", "target_height",
                    "n_source_train", "n_source_val", "n_target_train", "n_target_val", "decay",
                    "objects_per_image", "noise_sigma", "phi_max_deg", "stretch_clamp",
                    "distortion", "color_shift"},
                   "data");
        get_to(d, "source_width", cfg.data.source_width);
        get_to(d, "source_height", cfg.data.source_height);
        get_to(d, "target_width", cfg.data.target_width);
        get_to(d, "target_height", cfg.data.target_height);
        get_to(d, "n_source_train", cfg.data.n_source_train);
        get_to(d, "n_source_val", cfg.data.n_source_val);
        get_to(d, "n_target_train", cfg.data.n_target_train);
        get_to(d, "n_target_val", cfg.data.n_target_val);
        get_to(d, "decay", cfg.data.decay);
        get_to(d, "objects_per_image", cfg.data.objects_per_image);
        get_to(d, "noise_sigma", cfg.data.noise_sigma);
        get_to(d, "phi_max_deg", cfg.data.phi_max_deg);
        get_to(d, "stretch_clamp", cfg.data.stretch_clamp);
        get_to(d, "distortion", cfg.data.distortion);
        get_to(d, "color_shift", cfg.data.color_shift);
    }
    if (j.contains("seed")) j.at("seed").get_to(cfg.seed);

    cfg.validate();
    return cfg;
}

TrainConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidArgument("cannot open config: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_json(ss.str());
}

std::string config_to_json(const TrainConfig& cfg) {
    json j;
    j["model"] = {{"arch", cfg.arch},
                  {"output_stride", cfg.output_stride},
                  {"classes", cfg.classes}};
    j["train"] = {{"base_lr", cfg.base_lr},
                  {"poly_power", cfg.poly_power},
                  {"weight_decay", cfg.weight_decay},
                  {"adam_eps", cfg.adam_eps},
                  {"adam_beta1", cfg.adam_beta1},
                  {"adam_beta2", cfg.adam_beta2},
                  {"batch", cfg.batch},
                  {"total_iters", cfg.total_iters},
                  {"pretrain_iters", cfg.pretrain_iters}};
    j["pcgd"] = {{"top_p", cfg.top_p},
                 {"tau", cfg.tau},
                 {"pool_k", cfg.pool_k},
                 {"inner_lr", cfg.inner_lr},
                 {"outer_scale", cfg.outer_scale},
                 {"confidence_floor", cfg.confidence_floor},
                 {"paste_floor", cfg.paste_floor},
                 {"use_path_a", cfg.use_path_a},
                 {"use_path_b", cfg.use_path_b},
                 {"weighted_pseudo_labels", cfg.weighted_pseudo_labels}};
    j["cram"] = {{"enabled", cfg.use_cram},
                 {"scale_s", cfg.scale_s},
                 {"lambda_d", cfg.lambda_d},
                 {"temperature", cfg.temperature},
                 {"context_h", cfg.context_h},
                 {"context_w", cfg.context_w},
                 {"detail_h", cfg.detail_h},
                 {"detail_w", cfg.detail_w}};
    j["data"] = {{"source_width", cfg.data.source_width},
                 {"source_height", cfg.data.source_height},
                 {"target_width", cfg.data.target_width},
                 {"target_height", cfg.data.target_height},
                 {"n_source_train", cfg.data.n_source_train},
                 {"n_source_val", cfg.data.n_source_val},
                 {"n_target_train", cfg.data.n_target_train},
                 {"n_target_val", cfg.data.n_target_val},
                 {"decay", cfg.data.decay},
                 {"objects_per_image", cfg.data.objects_per_image},
                 {"noise_sigma", cfg.data.noise_sigma},
                 {"phi_max_deg", cfg.data.phi_max_deg},
                 {"stretch_clamp", cfg.data.stretch_clamp},
                 {"distortion", cfg.data.distortion},
                 {"color_shift", cfg.data.color_shift}};
    j["seed"] = cfg.seed;
    return j.dump(2) + "\n";
}

void write_effective_config(const TrainConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ofstream f(out_dir + "/config_effective.json");
    if (!f) throw IoError("cannot write effective config in " + out_dir);
    f << config_to_json(cfg);
}

}  // namespace dapass
