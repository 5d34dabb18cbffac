#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace vmsvae {

// Frozen convolutional feature extractor: 224x224 RGB -> 7x7x512 features,
// flattened channel-major (25088 values per image).
class Backbone {
  public:
    static constexpr size_t kFeatDim = 512 * 7 * 7;

    // Deterministic random-weight conv pyramid (five conv/pool stages, widths
    // 32..512). Stands in when no pretrained weight file is configured.
    static Backbone seeded_pyramid(uint64_t seed);

    // Reads a "VMSW1" weight container (vgg16 or pyramid layout).
    static Backbone from_file(const std::string& path);

    std::vector<float> features(const std::vector<uint8_t>& rgb) const;

    const std::string& arch() const { return arch_; }
    uint64_t seed() const { return seed_; }
    // SHA-256 over architecture, preprocessing, and every weight.
    const std::string& digest() const { return digest_; }

    void save(const std::string& path) const;

  private:
    struct Layer {
        int cout = -1;            // -1 marks a 2x2 max-pool
        std::vector<float> w, b;  // conv kernels (cout, cin*9) and biases
    };

    void finalize();  // validates geometry, computes the digest

    std::string arch_;
    uint64_t seed_ = 0;  // meaningful for the pyramid only
    bool swap_to_bgr_ = false;
    std::array<float, 3> mean_{0.f, 0.f, 0.f};
    std::array<float, 3> scale_{1.f, 1.f, 1.f};
    std::vector<Layer> layers_;
    std::string digest_;
};

}  // namespace vmsvae
