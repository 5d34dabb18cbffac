#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vmsvae/augment.hpp"
#include "vmsvae/dataset.hpp"
#include "vmsvae/model.hpp"

namespace vmsvae {

struct LossBreakdown {
    double reconstruction = 0.0;
    double kl = 0.0;
    double l2_penalty = 0.0;
    double total = 0.0;
};

// 0.5 * sum(exp(logvar) + mu^2 - 1 - logvar): KL to the standard normal.
double kl_divergence(const std::vector<double>& mu, const std::vector<double>& logvar);

// Summed Bernoulli negative log-likelihood (predictions clamped to
// [1e-7, 1-1e-7]) or summed absolute error, over all cells.
double reconstruction_loss(const VmsMap& pred, const VmsMap& target, ReconMode mode);

// Loss over one batch: a single stochastic forward with noise drawn from
// `noise_rng`, one normal per latent coordinate per sample. Leaves
// parameters, gradients, and normalization statistics unchanged.
LossBreakdown total_loss(ModelState& state, const std::vector<const ImageSample*>& batch,
                         Rng& noise_rng);

struct EpochRecord {
    size_t epoch = 0;  // 1-based
    double recon = 0.0, kl = 0.0, l2 = 0.0, total = 0.0;
    double seconds = 0.0;
};

struct TrainHistory {
    ModelConfig config;
    std::vector<EpochRecord> epochs;
    std::optional<double> val_rho_all, val_mse_all;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Runs epochs x steps_per_epoch optimizer updates on batches drawn (with
// augmentation) from train_ds. History is filled as epochs complete, so it
// holds the finished prefix if a non-finite loss aborts the run.
void train(ModelState& state, const Dataset& train_ds, const AugmentConfig& aug,
           TrainHistory& history, const Dataset* val = nullptr,
           const EpochCallback& on_epoch = nullptr);

void write_history_jsonl(const TrainHistory& history, const std::string& path);

}  // namespace vmsvae
