#pragma once

// Run configuration: strict JSON with nested sections. Unknown keys are
// fatal so a typo in a hyperparameter name can never silently run with the
// default value. An empty config file means "all defaults".

#include <cstdint>
#include <string>

#include "dapass/panosynth.hpp"
#include "dapass/segnet.hpp"

namespace dapass {

struct DataConfig {
    int64_t source_width = 128, source_height = 64;
    int64_t target_width = 256, target_height = 64;
    int64_t n_source_train = 200, n_source_val = 40;
    int64_t n_target_train = 200, n_target_val = 40;
    double decay = 0.65;
    int64_t objects_per_image = 6;
    double noise_sigma = 0.05;
    double phi_max_deg = 60.0;
    double stretch_clamp = 3.0;
    bool distortion = true;
    bool color_shift = true;

    synth::SceneSpec source_spec(uint64_t seed) const;
    synth::SceneSpec target_spec(uint64_t seed) const;
};

struct TrainConfig {
    // model
    std::string arch = "b1-toy";
    int64_t output_stride = 4;
    int64_t classes = kNumClasses;

    // optimization protocol
    double base_lr = 6e-5;
    double poly_power = 0.9;
    double weight_decay = 1e-4;
    double adam_eps = 1e-8;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    int64_t batch = 4;
    int64_t total_iters = 1200;
    int64_t pretrain_iters = 800;

    // pseudo-label denoising
    double top_p = 10.0;          // top-P% consistent split
    int64_t tau = 600;            // self-training probe length for scoring
    int64_t pool_k = 15;          // per-class pool size
    double inner_lr = 1e-4;       // inner gradient step of the bi-level update
    double outer_scale = 1.0;     // multiplier on the outer step's learning rate
    double confidence_floor = 0.2;
    double paste_floor = 0.5;  // min donor confidence for copy-paste pixels
    bool use_path_a = true;
    bool use_path_b = true;
    bool weighted_pseudo_labels = true;

    // cross-resolution fusion
    bool use_cram = true;
    int64_t scale_s = 2;
    double lambda_d = 0.3;
    double temperature = 1.0;
    int64_t context_h = 32, context_w = 64;  // LR crop size after downsampling
    int64_t detail_h = 16, detail_w = 32;    // detail crop size, native resolution

    uint64_t seed = 1;
    DataConfig data;

    void validate() const;
    SegModelConfig model_config() const;
};

// Strict load: unknown keys error, out-of-range values error, empty file is
// all-defaults.
TrainConfig load_config(const std::string& path);
TrainConfig parse_config_json(const std::string& text);
std::string config_to_json(const TrainConfig& cfg);
void write_effective_config(const TrainConfig& cfg, const std::string& out_dir);

}  // namespace dapass
