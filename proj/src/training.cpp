#include "vmsvae/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "vmsvae/metrics.hpp"

namespace vmsvae {

double kl_divergence(const std::vector<double>& mu, const std::vector<double>& logvar) {
    if (mu.size() != logvar.size()) {
        throw ValidationError("kl_divergence inputs differ in length");
    }
    double s = 0.0;
    for (size_t i = 0; i < mu.size(); ++i) {
        s += 0.5 * (std::exp(logvar[i]) + mu[i] * mu[i] - 1.0 - logvar[i]);
    }
    return s;
}

double reconstruction_loss(const VmsMap& pred, const VmsMap& target, ReconMode mode) {
    validate_map(pred, "prediction");
    validate_map(target, "target");
    constexpr double kClamp = 1e-7;
    double s = 0.0;
    auto channel = [&](const std::vector<float>& p, const std::vector<float>& t) {
        if (mode == ReconMode::kLogLikelihood) {
            for (size_t i = 0; i < p.size(); ++i) {
                double pi = std::clamp(static_cast<double>(p[i]), kClamp, 1.0 - kClamp);
                s -= t[i] * std::log(pi) + (1.0 - t[i]) * std::log(1.0 - pi);
            }
        } else {
            for (size_t i = 0; i < p.size(); ++i) {
                s += std::abs(static_cast<double>(p[i]) - t[i]);
            }
        }
    };
    channel(pred.true_channel, target.true_channel);
    channel(pred.false_channel, target.false_channel);
    return s;
}

namespace {

// Stacks a batch into the channel-major target layout the net expects:
// (2, batch*HW), channel 0 = true, channel 1 = false.
void fill_targets(const VmsMap& vms, std::vector<float>& targets, size_t batch, size_t b) {
    size_t hw = kMapCells;
    std::copy(vms.true_channel.begin(), vms.true_channel.end(),
              targets.begin() + static_cast<long>(b * hw));
    std::copy(vms.false_channel.begin(), vms.false_channel.end(),
              targets.begin() + static_cast<long>(batch * hw + b * hw));
}

}  // namespace

LossBreakdown total_loss(ModelState& state, const std::vector<const ImageSample*>& batch,
                         Rng& noise_rng) {
    if (batch.empty()) throw ValidationError("loss requires a non-empty batch");
    size_t b = batch.size();
    size_t m = state.config.m;
    std::vector<float> feats(b * Backbone::kFeatDim);
    std::vector<float> targets(2 * b * kMapCells);
    for (size_t i = 0; i < b; ++i) {
        const ImageSample& s = *batch[i];
        if (!s.vms) throw ValidationError("sample " + s.image_id + " has no VMS target");
        std::vector<float> f = state.backbone.features(s.rgb);
        std::copy(f.begin(), f.end(), feats.begin() + static_cast<long>(i * Backbone::kFeatDim));
        fill_targets(*s.vms, targets, b, i);
    }
    std::vector<float> noise(b * m);
    for (auto& v : noise) v = static_cast<float>(noise_rng.normal());
    LossTerms terms =
        state.net.forward_backward(feats, targets, noise, b, state.config.recon_mode,
                                   static_cast<float>(state.config.l2_coefficient),
                                   /*update_running=*/false);
    state.net.zero_grad();
    LossBreakdown out;
    out.reconstruction = terms.recon;
    out.kl = terms.kl;
    out.l2_penalty = terms.l2;
    out.total = terms.recon + terms.kl + terms.l2;
    return out;
}

void train(ModelState& state, const Dataset& train_ds, const AugmentConfig& aug,
           TrainHistory& history, const Dataset* val, const EpochCallback& on_epoch) {
    const ModelConfig& cfg = state.config;
    cfg.validate();
    aug.validate();
    if (train_ds.size() == 0) throw ValidationError("training set is empty");
    if (!train_ds.labeled()) throw ValidationError("training set must carry VMS targets");
    for (auto& pr : state.net.params()) {
        for (float v : pr.p->w) {
            if (!std::isfinite(v)) {
                throw RuntimeFault("parameter " + pr.name + " holds a non-finite value");
            }
        }
    }

    history.config = cfg;
    history.epochs.clear();

    Rng rng_shuffle(splitmix64(cfg.seed ^ 0x73687566UL));  // batch order stream
    Rng rng_aug(splitmix64(cfg.seed ^ 0x61756755UL));      // augmentation stream
    Rng rng_noise(splitmix64(cfg.seed ^ 0x6e6f6973UL));    // posterior noise stream

    size_t n = train_ds.size();
    size_t b = cfg.batch_size;
    size_t m = cfg.m;

    // With identity augmentation the frozen backbone sees each sample
    // unchanged every epoch, so its features are computed once.
    bool cache_feats = aug.is_identity();
    std::vector<std::vector<float>> feat_cache;
    if (cache_feats) {
        feat_cache.reserve(n);
        for (const auto& s : train_ds.samples) {
            if (!s.vms) throw ValidationError("sample " + s.image_id + " has no VMS target");
            feat_cache.push_back(state.backbone.features(s.rgb));
        }
    }

    std::vector<size_t> order;
    size_t pos = 0;
    auto next_index = [&]() {
        if (pos == order.size()) {
            order.resize(n);
            std::iota(order.begin(), order.end(), size_t{0});
            rng_shuffle.shuffle(order);
            pos = 0;
        }
        return order[pos++];
    };

    std::vector<float> feats(b * Backbone::kFeatDim);
    std::vector<float> targets(2 * b * kMapCells);
    std::vector<float> noise(b * m);
    for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        double sum_recon = 0.0, sum_kl = 0.0, sum_l2 = 0.0;
        for (size_t step = 0; step < cfg.steps_per_epoch; ++step) {
            for (size_t i = 0; i < b; ++i) {
                size_t idx = next_index();
                const ImageSample& s = train_ds.samples[idx];
                if (cache_feats) {
                    std::copy(feat_cache[idx].begin(), feat_cache[idx].end(),
                              feats.begin() + static_cast<long>(i * Backbone::kFeatDim));
                    fill_targets(*s.vms, targets, b, i);
                } else {
                    if (!s.vms) {
                        throw ValidationError("sample " + s.image_id + " has no VMS target");
                    }
                    ImageSample a = augment_sample(s, aug, rng_aug);
                    std::vector<float> f = state.backbone.features(a.rgb);
                    std::copy(f.begin(), f.end(),
                              feats.begin() + static_cast<long>(i * Backbone::kFeatDim));
                    fill_targets(*a.vms, targets, b, i);
                }
            }
            for (auto& v : noise) v = static_cast<float>(rng_noise.normal());
            state.net.zero_grad();
            LossTerms terms = state.net.forward_backward(
                feats, targets, noise, b, cfg.recon_mode,
                static_cast<float>(cfg.l2_coefficient), /*update_running=*/true);
            double step_total = terms.recon + terms.kl + terms.l2;
            if (!std::isfinite(step_total)) {
                throw RuntimeFault("non-finite loss at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(step + 1) + "; aborting");
            }
            state.net.adam_step(static_cast<float>(cfg.learning_rate));
            sum_recon += terms.recon;
            sum_kl += terms.kl;
            sum_l2 += terms.l2;
        }
        double steps = static_cast<double>(cfg.steps_per_epoch);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.recon = sum_recon / steps;
        rec.kl = sum_kl / steps;
        rec.l2 = sum_l2 / steps;
        rec.total = rec.recon + rec.kl + rec.l2;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }

    if (val && val->size() > 0) {
        double rho = 0.0, mse = 0.0;
        size_t counted = 0;
        for (const auto& s : val->samples) {
            if (!s.vms) continue;
            VmsMap pred = predict_vms(state, s.rgb);
            MapScore score = score_map(pred, *s.vms);
            rho += score.rho_all;
            mse += score.mse_all;
            ++counted;
        }
        if (counted > 0) {
            history.val_rho_all = rho / static_cast<double>(counted);
            history.val_mse_all = mse / static_cast<double>(counted);
        }
    }
}

void write_history_jsonl(const TrainHistory& history, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw RuntimeFault("cannot write history: " + path);
    for (const auto& rec : history.epochs) {
        nlohmann::json line = {{"epoch", rec.epoch},
                               {"recon", rec.recon},
                               {"kl", rec.kl},
                               {"l2", rec.l2},
                               {"total", rec.total}};
        f << line.dump() << "\n";
    }
    if (!f) throw RuntimeFault("failed writing history: " + path);
}

}  // namespace vmsvae
