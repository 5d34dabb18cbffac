#include "vmsvae/augment.hpp"

#include <algorithm>
#include <cmath>

namespace vmsvae {

void AugmentConfig::validate() const {
    if (!(shift_fraction >= 0.0 && shift_fraction < 1.0)) {
        throw ValidationError("shift_fraction must lie in [0, 1)");
    }
    if (!(zoom_lo > 0.0 && zoom_hi > 0.0)) {
        throw ValidationError("zoom bounds must be positive");
    }
    if (zoom_lo > zoom_hi) {
        throw ValidationError("zoom range is inverted");
    }
}

GeomDraw draw_geometry(const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    GeomDraw d;
    double span = cfg.shift_fraction * kMapSize;
    d.dx = rng.uniform(-span, span);
    d.dy = rng.uniform(-span, span);
    d.zoom = rng.uniform(cfg.zoom_lo, cfg.zoom_hi);
    d.flip = cfg.horizontal_flip && rng.bernoulli(0.5);
    return d;
}

namespace {

// Inverse map for output pixel (xo, yo): undo the flip, then the zoom about
// the image centre, then the shift.
struct InverseMap {
    double zoom, dx, dy;
    bool flip;
    static constexpr double kCentre = (kMapSize - 1) / 2.0;

    void operator()(int xo, int yo, double& xi, double& yi) const {
        double xf = flip ? (kMapSize - 1.0 - xo) : xo;
        xi = (xf - kCentre) / zoom + kCentre - dx;
        yi = (yo - kCentre) / zoom + kCentre - dy;
    }
};

// Bilinear sample with zero fill outside the frame.
double sample_zero(const std::vector<float>& src, double xi, double yi) {
    int x0 = static_cast<int>(std::floor(xi));
    int y0 = static_cast<int>(std::floor(yi));
    double fx = xi - x0, fy = yi - y0;
    auto at = [&](int x, int y) -> double {
        if (x < 0 || x >= kMapSize || y < 0 || y >= kMapSize) return 0.0;
        return src[static_cast<size_t>(y) * kMapSize + x];
    };
    double top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    double bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

void warp_channel(const std::vector<float>& src, std::vector<float>& dst, const InverseMap& map) {
    for (int yo = 0; yo < kMapSize; ++yo) {
        for (int xo = 0; xo < kMapSize; ++xo) {
            double xi, yi;
            map(xo, yo, xi, yi);
            dst[static_cast<size_t>(yo) * kMapSize + xo] =
                static_cast<float>(std::clamp(sample_zero(src, xi, yi), 0.0, 1.0));
        }
    }
}

// Bilinear sample of one RGB pixel with nearest-edge fill.
void warp_rgb(const std::vector<uint8_t>& src, std::vector<uint8_t>& dst, const InverseMap& map) {
    auto at = [&](int x, int y, int ch) -> double {
        x = std::clamp(x, 0, kMapSize - 1);
        y = std::clamp(y, 0, kMapSize - 1);
        return src[(static_cast<size_t>(y) * kMapSize + x) * 3 + ch];
    };
    for (int yo = 0; yo < kMapSize; ++yo) {
        for (int xo = 0; xo < kMapSize; ++xo) {
            double xi, yi;
            map(xo, yo, xi, yi);
            int x0 = static_cast<int>(std::floor(xi));
            int y0 = static_cast<int>(std::floor(yi));
            double fx = xi - x0, fy = yi - y0;
            for (int ch = 0; ch < 3; ++ch) {
                double top = at(x0, y0, ch) * (1.0 - fx) + at(x0 + 1, y0, ch) * fx;
                double bot = at(x0, y0 + 1, ch) * (1.0 - fx) + at(x0 + 1, y0 + 1, ch) * fx;
                double v = top * (1.0 - fy) + bot * fy;
                dst[(static_cast<size_t>(yo) * kMapSize + xo) * 3 + ch] =
                    static_cast<uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
            }
        }
    }
}

}  // namespace

ImageSample apply_geometric(const ImageSample& s, const GeomDraw& d) {
    if (d.dx == 0.0 && d.dy == 0.0 && d.zoom == 1.0 && !d.flip) {
        return s;
    }
    InverseMap map{d.zoom, d.dx, d.dy, d.flip};
    ImageSample out;
    out.image_id = s.image_id;
    out.category = s.category;
    out.rgb.resize(s.rgb.size());
    warp_rgb(s.rgb, out.rgb, map);
    if (s.vms) {
        VmsMap m = VmsMap::zeros();
        warp_channel(s.vms->true_channel, m.true_channel, map);
        warp_channel(s.vms->false_channel, m.false_channel, map);
        out.vms = std::move(m);
    }
    return out;
}

ImageSample augment_sample(const ImageSample& s, const AugmentConfig& cfg, Rng& rng) {
    return apply_geometric(s, draw_geometry(cfg, rng));
}

}  // namespace vmsvae
