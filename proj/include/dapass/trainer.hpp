#pragma once

// Training orchestration: source pretraining, the self-training probe that
// produces the second snapshot for consistency scoring, and the adaptation
// loop that alternates neighbor-denoising and class-balancing steps with the
// cross-resolution loss.

#include <cstdint>
#include <string>
#include <vector>

#include "dapass/config.hpp"
#include "dapass/pcgd.hpp"
#include "dapass/segnet.hpp"
#include "dapass/types.hpp"

namespace dapass::train {

double poly_lr(double base_lr, int64_t t, int64_t total, double power);

struct AdamWConfig {
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// Decoupled weight decay followed by the bias-corrected moment update.
// A step with any non-finite gradient is skipped: parameters, moments and
// the step counter stay untouched and the method returns false.
template <typename T>
class AdamW {
public:
    AdamW(std::vector<Tensor<T>> params, const AdamWConfig& cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (auto& p : params_) {
            m_.emplace_back(p.data().size(), T(0));
            v_.emplace_back(p.data().size(), T(0));
        }
    }

    bool step(double lr) {
        for (auto& p : params_) {
            p.mutable_grad();
            for (const T& g : p.grad())
                if (!std::isfinite(static_cast<double>(g))) return false;
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t k = 0; k < params_.size(); ++k) {
            auto& data = params_[k].mutable_data();
            const auto& grad = params_[k].grad();
            auto& m = m_[k];
            auto& v = v_[k];
            for (size_t i = 0; i < data.size(); ++i) {
                const double g = static_cast<double>(grad[i]);
                double x = static_cast<double>(data[i]);
                x -= lr * cfg_.weight_decay * x;
                const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1 - cfg_.beta1) * g;
                const double vi =
                    cfg_.beta2 * static_cast<double>(v[i]) + (1 - cfg_.beta2) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                x -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                data[i] = static_cast<T>(x);
            }
        }
        return true;
    }

    int64_t step_count() const { return t_; }

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<T>> m_, v_;
    int64_t t_ = 0;
    AdamWConfig cfg_;
};

struct MetricsRow {
    int64_t iteration = 0;
    std::string phase;
    double loss_total = 0, loss_fused = 0, loss_detail = 0;
    double lr = 0;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct AdaptStats {
    int64_t path_a_steps = 0, path_b_steps = 0;
    int64_t skipped_nonfinite = 0;
    int64_t missing_pool_classes = 0;
    int64_t path_b_noops = 0;
};

struct PretrainResult {
    ParamSnapshot<float> snapshot;
    double final_loss = 0;
    double source_val_miou = 0;
    std::vector<MetricsRow> history;
};

PretrainResult pretrain_source(const TrainConfig& cfg, const std::vector<Sample>& train,
                               const std::vector<Sample>& val);

struct AdaptResult {
    ParamSnapshot<float> adapted;
    std::vector<MetricsRow> history;
    std::vector<pcgd::ConsistencyRecord> records;
    AdaptStats stats;
};

// Source-free adaptation. Only unlabeled target images enter here; target
// ground truth is not reachable from this call.
AdaptResult adapt(const TrainConfig& cfg, const ParamSnapshot<float>& source_snapshot,
                  const std::vector<UnlabeledSample>& target);

// Ablation arms in report order.
std::vector<std::string> ablation_arm_names(bool with_cram);

// Arm configs differ from the base config only in the path/CRAM/weighting
// switches ("Source-Only" is handled by the caller: no adaptation at all).
TrainConfig arm_config(const TrainConfig& base, const std::string& arm);

}  // namespace dapass::train
