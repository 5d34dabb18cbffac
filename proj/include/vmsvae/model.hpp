#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vmsvae/backbone.hpp"
#include "vmsvae/image.hpp"
#include "vmsvae/net.hpp"

namespace vmsvae {

struct ModelConfig {
    size_t n = 128;
    size_t m = 32;
    ReconMode recon_mode = ReconMode::kLogLikelihood;
    double l2_coefficient = 0.02;
    double learning_rate = 1e-4;
    size_t batch_size = 32;
    size_t epochs = 250;
    size_t steps_per_epoch = 20;
    uint64_t seed = 0;
    std::string backbone_weights;  // empty -> seeded random pyramid

    void validate() const;
};

const char* recon_mode_name(ReconMode mode);
ReconMode recon_mode_from_name(const std::string& name);

struct LatentCode {
    std::vector<float> mu, logvar, z;
};

// Frozen backbone plus the trainable stack. Forward passes reuse internal
// scratch buffers, so calls on one state must be externally synchronized.
struct ModelState {
    ModelConfig config;
    Backbone backbone;
    VaeNet<float> net;

    explicit ModelState(const ModelConfig& cfg);
    ModelState(const ModelConfig& cfg, Backbone bb);
};

// Posterior parameters (mu, logvar) for one image.
std::pair<std::vector<float>, std::vector<float>> encode(ModelState& state,
                                                         const std::vector<uint8_t>& rgb);

// z = mu + exp(logvar/2) * noise, elementwise.
std::vector<float> reparameterize(const std::vector<float>& mu, const std::vector<float>& logvar,
                                  const std::vector<float>& noise);

VmsMap decode(ModelState& state, const std::vector<float>& z);

// Deterministic inference: decode the posterior mean, no sampling.
VmsMap predict_vms(ModelState& state, const std::vector<uint8_t>& rgb);

// Digest over trainable parameters and normalization statistics.
std::string trainable_digest(ModelState& state);

// Writes the weight container at `path` and a sidecar manifest at
// `path + ".json"`; load verifies the pair and rebuilds the backbone.
void save_model(ModelState& state, const std::string& path);
ModelState load_model(const std::string& path);

}  // namespace vmsvae
