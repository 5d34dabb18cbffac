#include "vmsvae/backbone.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

#include "vmsvae/common.hpp"
#include "vmsvae/digest.hpp"
#include "vmsvae/image.hpp"
#include "vmsvae/net.hpp"

namespace vmsvae {

namespace {

using nlohmann::json;

// Shifted-copy im2col for 3x3 kernels with unit zero padding:
// cols is (cin*9, side*side), row index ci*9 + kh*3 + kw.
void im2col3(const float* in, size_t cin, size_t side, float* cols) {
    size_t hw = side * side;
    for (size_t ci = 0; ci < cin; ++ci) {
        const float* plane = in + ci * hw;
        for (int kh = 0; kh < 3; ++kh) {
            for (int kw = 0; kw < 3; ++kw) {
                float* crow = cols + ((ci * 3 + kh) * 3 + kw) * hw;
                for (size_t oy = 0; oy < side; ++oy) {
                    long iy = static_cast<long>(oy) + kh - 1;
                    float* dst = crow + oy * side;
                    if (iy < 0 || iy >= static_cast<long>(side)) {
                        std::memset(dst, 0, side * sizeof(float));
                        continue;
                    }
                    const float* srow = plane + static_cast<size_t>(iy) * side;
                    if (kw == 0) {
                        dst[0] = 0.f;
                        std::memcpy(dst + 1, srow, (side - 1) * sizeof(float));
                    } else if (kw == 1) {
                        std::memcpy(dst, srow, side * sizeof(float));
                    } else {
                        std::memcpy(dst, srow + 1, (side - 1) * sizeof(float));
                        dst[side - 1] = 0.f;
                    }
                }
            }
        }
    }
}

void maxpool2(const std::vector<float>& in, size_t c, size_t side, std::vector<float>& out) {
    size_t oside = side / 2;
    out.resize(c * oside * oside);
    for (size_t ch = 0; ch < c; ++ch) {
        const float* plane = in.data() + ch * side * side;
        float* oplane = out.data() + ch * oside * oside;
        for (size_t oy = 0; oy < oside; ++oy) {
            for (size_t ox = 0; ox < oside; ++ox) {
                const float* p = plane + 2 * oy * side + 2 * ox;
                float v = std::max(std::max(p[0], p[1]), std::max(p[side], p[side + 1]));
                oplane[oy * oside + ox] = v;
            }
        }
    }
}

const std::vector<int> kPyramidLayers = {32, -1, 64, -1, 128, -1, 256, -1, 512, -1};

}  // namespace

Backbone Backbone::seeded_pyramid(uint64_t seed) {
    Backbone b;
    b.arch_ = "pyramid32";
    b.seed_ = seed;
    b.mean_ = {127.5f, 127.5f, 127.5f};
    b.scale_ = {1.f / 127.5f, 1.f / 127.5f, 1.f / 127.5f};
    Rng rng(splitmix64(seed ^ 0xbacbb0 /* backbone stream */));
    size_t cin = 3;
    for (int spec : kPyramidLayers) {
        Layer layer;
        layer.cout = spec;
        if (spec > 0) {
            size_t cout = static_cast<size_t>(spec);
            layer.w.resize(cout * cin * 9);
            layer.b.assign(cout, 0.f);
            double s = 1.0 / std::sqrt(static_cast<double>(cin * 9));
            for (auto& v : layer.w) v = static_cast<float>(rng.uniform(-s, s));
            cin = cout;
        }
        b.layers_.push_back(std::move(layer));
    }
    b.finalize();
    return b;
}

std::vector<float> Backbone::features(const std::vector<uint8_t>& rgb) const {
    if (rgb.size() != static_cast<size_t>(kMapCells) * 3) {
        throw ValidationError("backbone input must be 224x224x3");
    }
    size_t side = kMapSize;
    std::vector<float> cur(3 * side * side);
    for (size_t ch = 0; ch < 3; ++ch) {
        size_t src_ch = swap_to_bgr_ ? 2 - ch : ch;
        float* plane = cur.data() + ch * side * side;
        for (size_t i = 0; i < static_cast<size_t>(kMapCells); ++i) {
            plane[i] = (static_cast<float>(rgb[i * 3 + src_ch]) - mean_[ch]) * scale_[ch];
        }
    }
    std::vector<float> next, cols;
    size_t cin = 3;
    for (const Layer& layer : layers_) {
        if (layer.cout < 0) {
            maxpool2(cur, cin, side, next);
            side /= 2;
            std::swap(cur, next);
            continue;
        }
        size_t cout = static_cast<size_t>(layer.cout);
        size_t hw = side * side;
        cols.resize(cin * 9 * hw);
        im2col3(cur.data(), cin, side, cols.data());
        next.resize(cout * hw);
        gemm(false, false, cout, hw, cin * 9, 1.f, layer.w.data(), cin * 9, cols.data(), hw, 0.f,
             next.data(), hw);
        for (size_t co = 0; co < cout; ++co) {
            float* plane = next.data() + co * hw;
            float bias = layer.b[co];
            for (size_t i = 0; i < hw; ++i) {
                float v = plane[i] + bias;
                plane[i] = v > 0.f ? v : 0.f;
            }
        }
        cin = cout;
        std::swap(cur, next);
    }
    return cur;
}

void Backbone::finalize() {
    size_t cin = 3, side = kMapSize;
    for (const Layer& layer : layers_) {
        if (layer.cout < 0) {
            if (side % 2) throw ValidationError("backbone pool on odd grid");
            side /= 2;
            continue;
        }
        size_t cout = static_cast<size_t>(layer.cout);
        if (layer.w.size() != cout * cin * 9 || layer.b.size() != cout) {
            throw ValidationError("backbone layer weight shapes are inconsistent");
        }
        cin = cout;
    }
    if (cin != 512 || side != 7) {
        throw ValidationError("backbone must end at a 7x7x512 grid");
    }
    Sha256 h;
    h.update(arch_.data(), arch_.size());
    uint8_t swap = swap_to_bgr_ ? 1 : 0;
    h.update(&swap, 1);
    h.update(mean_.data(), sizeof(mean_));
    h.update(scale_.data(), sizeof(scale_));
    for (const Layer& layer : layers_) {
        int32_t c = layer.cout;
        h.update(&c, sizeof(c));
        h.update(layer.w.data(), layer.w.size() * sizeof(float));
        h.update(layer.b.data(), layer.b.size() * sizeof(float));
    }
    digest_ = h.hex();
}

namespace {

constexpr char kMagic[] = "VMSW1\n";

template <typename T>
void write_raw(std::ofstream& f, const T* p, size_t n) {
    f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
}

template <typename T>
void read_raw(std::ifstream& f, T* p, size_t n) {
    f.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
    if (!f) throw RuntimeFault("weight container is truncated");
}

}  // namespace

void Backbone::save(const std::string& path) const {
    json manifest;
    manifest["arch"] = arch_;
    manifest["order"] = swap_to_bgr_ ? "bgr" : "rgb";
    manifest["mean"] = {mean_[0], mean_[1], mean_[2]};
    manifest["scale"] = {scale_[0], scale_[1], scale_[2]};
    json layers = json::array();
    for (const Layer& layer : layers_) layers.push_back(layer.cout);
    manifest["layers"] = layers;
    std::string head = manifest.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw RuntimeFault("cannot write weight container: " + path);
    f.write(kMagic, 6);
    uint32_t len = static_cast<uint32_t>(head.size());
    write_raw(f, &len, 1);
    f.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const Layer& layer : layers_) {
        if (layer.cout < 0) continue;
        write_raw(f, layer.w.data(), layer.w.size());
        write_raw(f, layer.b.data(), layer.b.size());
    }
    if (!f) throw RuntimeFault("failed writing weight container: " + path);
}

Backbone Backbone::from_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw RuntimeFault("cannot open weight container: " + path);
    char magic[6];
    read_raw(f, magic, 6);
    if (std::memcmp(magic, kMagic, 6) != 0) {
        throw RuntimeFault("not a VMSW1 weight container: " + path);
    }
    uint32_t len = 0;
    read_raw(f, &len, 1);
    std::string head(len, '\0');
    read_raw(f, head.data(), len);
    json manifest;
    try {
        manifest = json::parse(head);
    } catch (const json::exception& e) {
        throw RuntimeFault(std::string("corrupt weight container manifest: ") + e.what());
    }

    Backbone b;
    b.arch_ = manifest.at("arch").get<std::string>();
    b.swap_to_bgr_ = manifest.at("order").get<std::string>() == "bgr";
    for (size_t i = 0; i < 3; ++i) {
        b.mean_[i] = manifest.at("mean").at(i).get<float>();
        b.scale_[i] = manifest.at("scale").at(i).get<float>();
    }
    size_t cin = 3;
    for (const auto& spec : manifest.at("layers")) {
        Layer layer;
        layer.cout = spec.get<int>();
        if (layer.cout > 0) {
            size_t cout = static_cast<size_t>(layer.cout);
            layer.w.resize(cout * cin * 9);
            layer.b.resize(cout);
            read_raw(f, layer.w.data(), layer.w.size());
            read_raw(f, layer.b.data(), layer.b.size());
            cin = cout;
        }
        b.layers_.push_back(std::move(layer));
    }
    f.peek();
    if (!f.eof()) throw RuntimeFault("weight container has trailing bytes: " + path);
    b.finalize();
    return b;
}

}  // namespace vmsvae
