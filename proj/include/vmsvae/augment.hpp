#pragma once

#include <cstdint>

#include "vmsvae/common.hpp"
#include "vmsvae/image.hpp"

namespace vmsvae {

struct AugmentConfig {
    double shift_fraction = 0.1;
    double zoom_lo = 0.9;
    double zoom_hi = 1.1;
    bool horizontal_flip = true;
    uint64_t seed = 0;

    void validate() const;

    // True when every possible draw is the identity transform.
    bool is_identity() const {
        return shift_fraction == 0.0 && zoom_lo == 1.0 && zoom_hi == 1.0 && !horizontal_flip;
    }
};

// One sampled geometric transform: pixel shift, isotropic zoom about the
// image centre, optional horizontal mirror.
struct GeomDraw {
    double dx = 0.0;
    double dy = 0.0;
    double zoom = 1.0;
    bool flip = false;
};

GeomDraw draw_geometry(const AugmentConfig& cfg, Rng& rng);

// Applies the same transform to the RGB image (nearest-edge fill) and, when
// present, to both VMS channels (zero fill). Integer-aligned draws (pure
// flip, whole-pixel shift) reproduce source pixels exactly.
ImageSample apply_geometric(const ImageSample& s, const GeomDraw& d);

ImageSample augment_sample(const ImageSample& s, const AugmentConfig& cfg, Rng& rng);

}  // namespace vmsvae
