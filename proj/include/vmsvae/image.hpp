#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vmsvae/taxonomy.hpp"

namespace vmsvae {

inline constexpr int kMapSize = 224;
inline constexpr int kMapCells = kMapSize * kMapSize;

// Dual-channel per-pixel density map. Channel values live in [0, 1];
// true_channel holds densities of regions causing correct remembering,
// false_channel of regions causing false remembering.
struct VmsMap {
    std::vector<float> true_channel;   // kMapCells, row-major
    std::vector<float> false_channel;  // kMapCells, row-major

    static VmsMap zeros() {
        return {std::vector<float>(kMapCells, 0.0f), std::vector<float>(kMapCells, 0.0f)};
    }

    float& t(int r, int c) { return true_channel[r * kMapSize + c]; }
    float& f(int r, int c) { return false_channel[r * kMapSize + c]; }
    float t(int r, int c) const { return true_channel[r * kMapSize + c]; }
    float f(int r, int c) const { return false_channel[r * kMapSize + c]; }
};

// Throws ValidationError when a channel is missized or a value leaves [0,1].
void validate_map(const VmsMap& m, const std::string& context);

struct ImageSample {
    std::string image_id;
    std::vector<uint8_t> rgb;  // 224*224*3, row-major, RGB interleaved
    std::optional<CategoryPath> category;
    std::optional<VmsMap> vms;

    uint8_t px(int r, int c, int ch) const { return rgb[(r * kMapSize + c) * 3 + ch]; }
    uint8_t& px(int r, int c, int ch) { return rgb[(r * kMapSize + c) * 3 + ch]; }
};

// Decodes any readable image to 224x224 RGB (bilinear resize on size
// mismatch). Throws RuntimeFault when undecodable.
std::vector<uint8_t> load_image_rgb(const std::string& path);

// VMS PNG convention: one RGB PNG, green = true channel * 255,
// red = false channel * 255, blue = 0.
VmsMap load_vms_png(const std::string& path);
void save_vms_png(const VmsMap& m, const std::string& path);

void save_image_rgb(const std::vector<uint8_t>& rgb, const std::string& path);

}  // namespace vmsvae
