#include "vmsvae/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "vmsvae/common.hpp"

namespace fs = std::filesystem;

namespace vmsvae {

namespace {

bool has_image_ext(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e == ".jpg" || e == ".jpeg" || e == ".png";
}

void sort_by_id(Dataset& ds) {
    std::sort(ds.samples.begin(), ds.samples.end(),
              [](const ImageSample& a, const ImageSample& b) { return a.image_id < b.image_id; });
}

void check_unique_ids(const Dataset& ds) {
    for (size_t i = 1; i < ds.samples.size(); ++i) {
        if (ds.samples[i].image_id == ds.samples[i - 1].image_id) {
            throw ValidationError("duplicate image_id in dataset: " + ds.samples[i].image_id);
        }
    }
}

}  // namespace

Dataset load_dataset(const std::string& root, bool with_vms) {
    if (!fs::is_directory(root)) {
        throw ValidationError("dataset root is not a directory: " + root);
    }
    Dataset ds;
    ds.name = fs::path(root).filename().string();
    for (const auto& l1 : fs::directory_iterator(root)) {
        if (!l1.is_directory()) continue;
        std::string level1 = l1.path().filename().string();
        if (level1 == "vms") continue;
        if (level1 != "indoor" && level1 != "outdoor") {
            throw ValidationError("malformed category directory: " + l1.path().string());
        }
        for (const auto& l2 : fs::directory_iterator(l1.path())) {
            if (!l2.is_directory()) {
                throw ValidationError("unexpected file in category tree: " + l2.path().string());
            }
            std::string level2 = l2.path().filename().string();
            for (const auto& l3 : fs::directory_iterator(l2.path())) {
                if (!l3.is_directory()) {
                    throw ValidationError("unexpected file in category tree: " + l3.path().string());
                }
                std::string leaf = l3.path().filename().string();
                auto cat = make_category(level1, level2, leaf);
                if (!cat) {
                    throw ValidationError("malformed category directory: " + l3.path().string());
                }
                for (const auto& f : fs::directory_iterator(l3.path())) {
                    if (!f.is_regular_file() || !has_image_ext(f.path())) continue;
                    ImageSample s;
                    s.image_id = f.path().stem().string();
                    s.rgb = load_image_rgb(f.path().string());
                    s.category = *cat;
                    if (with_vms) {
                        fs::path vp = fs::path(root) / "vms" / (s.image_id + ".png");
                        if (!fs::exists(vp)) {
                            throw ValidationError("missing paired VMS map for image_id: " +
                                                  s.image_id);
                        }
                        s.vms = load_vms_png(vp.string());
                        validate_map(*s.vms, s.image_id);
                    }
                    ds.samples.push_back(std::move(s));
                }
            }
        }
    }
    if (ds.samples.empty()) {
        throw ValidationError("no samples found under " + root);
    }
    sort_by_id(ds);
    check_unique_ids(ds);
    return ds;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, size_t n_train, uint64_t seed) {
    if (n_train > ds.size()) {
        throw ValidationError("n_train " + std::to_string(n_train) + " exceeds dataset size " +
                              std::to_string(ds.size()));
    }
    // Bucket sample indices per leaf (index -1 for uncategorized).
    std::map<int, std::vector<size_t>> buckets;
    for (size_t i = 0; i < ds.size(); ++i) {
        int li = ds.samples[i].category ? leaf_index(ds.samples[i].category->leaf) : -1;
        buckets[li].push_back(i);
    }
    Rng rng(seed);
    for (auto& [li, idx] : buckets) rng.shuffle(idx);

    // Largest-remainder quotas keep each leaf within 1 of exact proportion.
    double ratio = ds.size() ? static_cast<double>(n_train) / ds.size() : 0.0;
    std::vector<std::pair<double, int>> remainders;  // (fractional part, leaf key)
    std::map<int, size_t> take;
    size_t assigned = 0;
    for (auto& [li, idx] : buckets) {
        double exact = ratio * idx.size();
        size_t base = static_cast<size_t>(std::floor(exact));
        base = std::min(base, idx.size());
        take[li] = base;
        assigned += base;
        remainders.push_back({exact - static_cast<double>(base), li});
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (const auto& [frac, li] : remainders) {
        if (assigned >= n_train) break;
        if (take[li] < buckets[li].size()) {
            ++take[li];
            ++assigned;
        }
    }
    // Leftover only when some leaf saturated; spill into any leaf with room.
    for (auto& [li, idx] : buckets) {
        while (assigned < n_train && take[li] < idx.size()) {
            ++take[li];
            ++assigned;
        }
    }

    Dataset train, test;
    train.name = ds.name + "-train";
    test.name = ds.name + "-test";
    for (auto& [li, idx] : buckets) {
        for (size_t k = 0; k < idx.size(); ++k) {
            (k < take[li] ? train : test).samples.push_back(ds.samples[idx[k]]);
        }
    }
    sort_by_id(train);
    sort_by_id(test);
    return {std::move(train), std::move(test)};
}

namespace {

void stamp_disc(std::vector<uint8_t>& rgb, int cr, int cc, int radius, uint8_t value) {
    for (int r = std::max(0, cr - radius); r <= std::min(kMapSize - 1, cr + radius); ++r) {
        for (int c = std::max(0, cc - radius); c <= std::min(kMapSize - 1, cc + radius); ++c) {
            int dr = r - cr, dc = c - cc;
            if (dr * dr + dc * dc <= radius * radius) {
                size_t base = (static_cast<size_t>(r) * kMapSize + c) * 3;
                rgb[base] = rgb[base + 1] = rgb[base + 2] = value;
            }
        }
    }
}

void stamp_square(std::vector<uint8_t>& rgb, int cr, int cc, int half, uint8_t value) {
    for (int r = std::max(0, cr - half); r <= std::min(kMapSize - 1, cr + half); ++r) {
        for (int c = std::max(0, cc - half); c <= std::min(kMapSize - 1, cc + half); ++c) {
            size_t base = (static_cast<size_t>(r) * kMapSize + c) * 3;
            rgb[base] = rgb[base + 1] = rgb[base + 2] = value;
        }
    }
}

void stamp_blob(std::vector<float>& ch, int cr, int cc, double sigma, double peak) {
    double inv = 1.0 / (2.0 * sigma * sigma);
    for (int r = 0; r < kMapSize; ++r) {
        for (int c = 0; c < kMapSize; ++c) {
            double d2 = static_cast<double>(r - cr) * (r - cr) + static_cast<double>(c - cc) * (c - cc);
            ch[r * kMapSize + c] = static_cast<float>(peak * std::exp(-d2 * inv));
        }
    }
}

}  // namespace

ImageSample make_synthetic_sample(int disc_r, int disc_c, int sq_r, int sq_c,
                                  const std::string& id, const std::string& leaf) {
    constexpr int kDiscRadius = 34;
    constexpr int kSquareHalf = 11;
    ImageSample s;
    s.image_id = id;
    s.rgb.assign(static_cast<size_t>(kMapCells) * 3, 110);
    stamp_square(s.rgb, sq_r, sq_c, kSquareHalf, 45);
    stamp_disc(s.rgb, disc_r, disc_c, kDiscRadius, 235);
    s.category = category_for_leaf(leaf);
    VmsMap m = VmsMap::zeros();
    stamp_blob(m.true_channel, disc_r, disc_c, 20.0, 1.0);
    stamp_blob(m.false_channel, sq_r, sq_c, 10.0, 0.5);
    s.vms = std::move(m);
    return s;
}

Dataset make_synthetic_dataset(size_t n, uint64_t seed) {
    if (n == 0) {
        throw ValidationError("synthetic dataset size must be positive");
    }
    constexpr int kMargin = 44;
    // Disc radius plus the square's corner reach plus clearance: placements
    // closer than this would occlude the square under the disc, leaving a
    // false-channel target with no visible evidence in the image.
    constexpr int kMinSeparation = 54;
    Dataset ds;
    ds.name = "synthetic";
    Rng rng(seed);
    const auto& leaves = taxonomy_leaves();
    for (size_t i = 0; i < n; ++i) {
        int disc_r = kMargin + static_cast<int>(rng.index(kMapSize - 2 * kMargin));
        int disc_c = kMargin + static_cast<int>(rng.index(kMapSize - 2 * kMargin));
        int sq_r, sq_c;
        do {
            sq_r = kMargin + static_cast<int>(rng.index(kMapSize - 2 * kMargin));
            sq_c = kMargin + static_cast<int>(rng.index(kMapSize - 2 * kMargin));
        } while ((sq_r - disc_r) * (sq_r - disc_r) + (sq_c - disc_c) * (sq_c - disc_c) <
                 kMinSeparation * kMinSeparation);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "synth_%05zu", i);
        ds.samples.push_back(
            make_synthetic_sample(disc_r, disc_c, sq_r, sq_c, buf, leaves[i % kLeafCount]));
    }
    sort_by_id(ds);
    return ds;
}

void write_dataset_layout(const Dataset& ds, const std::string& root) {
    fs::create_directories(root);
    if (ds.labeled()) fs::create_directories(fs::path(root) / "vms");
    for (const auto& s : ds.samples) {
        if (!s.category) {
            throw ValidationError("cannot write layout: sample " + s.image_id + " lacks a category");
        }
        fs::path dir = fs::path(root) / category_relative_dir(*s.category);
        fs::create_directories(dir);
        save_image_rgb(s.rgb, (dir / (s.image_id + ".png")).string());
        if (s.vms) {
            save_vms_png(*s.vms, (fs::path(root) / "vms" / (s.image_id + ".png")).string());
        }
    }
}

std::vector<std::pair<std::string, std::string>> list_images(const std::string& dir) {
    if (!fs::is_directory(dir)) {
        throw ValidationError("image directory does not exist: " + dir);
    }
    std::vector<std::pair<std::string, std::string>> files;
    bool tree = fs::is_directory(fs::path(dir) / "indoor") ||
                fs::is_directory(fs::path(dir) / "outdoor");
    if (tree) {
        for (const auto& f : fs::recursive_directory_iterator(dir)) {
            if (!f.is_regular_file() || !has_image_ext(f.path())) continue;
            auto rel = fs::relative(f.path(), dir);
            if (rel.begin()->string() == "vms") continue;
            files.emplace_back(f.path().stem().string(), f.path().string());
        }
    } else {
        for (const auto& f : fs::directory_iterator(dir)) {
            if (!f.is_regular_file() || !has_image_ext(f.path())) continue;
            files.emplace_back(f.path().stem().string(), f.path().string());
        }
    }
    if (files.empty()) {
        throw ValidationError("no images found under " + dir);
    }
    std::sort(files.begin(), files.end());
    for (size_t i = 1; i < files.size(); ++i) {
        if (files[i].first == files[i - 1].first) {
            throw ValidationError("duplicate image id: " + files[i].first);
        }
    }
    return files;
}

Dataset scan_images(const std::string& dir) {
    if (fs::is_directory(fs::path(dir) / "indoor") || fs::is_directory(fs::path(dir) / "outdoor")) {
        return load_dataset(dir, false);
    }
    Dataset ds;
    ds.name = fs::path(dir).filename().string();
    for (const auto& [id, path] : list_images(dir)) {
        ImageSample s;
        s.image_id = id;
        s.rgb = load_image_rgb(path);
        ds.samples.push_back(std::move(s));
    }
    sort_by_id(ds);
    check_unique_ids(ds);
    return ds;
}

}  // namespace vmsvae
