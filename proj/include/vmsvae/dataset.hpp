#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vmsvae/image.hpp"

namespace vmsvae {

// Immutable after construction; samples are ordered by image_id. A dataset
// is either fully labeled (every sample carries a VmsMap) or fully
// unlabeled; mixtures are rejected.
struct Dataset {
    std::string name;
    std::vector<ImageSample> samples;

    size_t size() const { return samples.size(); }
    bool labeled() const { return !samples.empty() && samples.front().vms.has_value(); }
};

// Walks `<root>/<level1>/<level2>/<leaf>/<id>.{jpg,jpeg,png}`; when
// with_vms, pairs each image with `<root>/vms/<id>.png`. Throws
// ValidationError on malformed layout, duplicate ids, or a missing VMS
// pair; RuntimeFault on undecodable files.
Dataset load_dataset(const std::string& root, bool with_vms);

// Deterministic stratified split: each leaf contributes to the train side
// in proportion to its size (largest-remainder rounding, per-leaf order
// from a seeded shuffle). Throws ValidationError when n_train > |ds|.
std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, size_t n_train, uint64_t seed);

// Verification-harness data: a bright disc whose position fixes a Gaussian
// blob (sigma 20 px, peak 1) in the true channel, and a smaller dark
// square whose position fixes a weaker blob (sigma 10 px, peak 0.5) in the
// false channel. Categories round-robin over the 8 leaves.
Dataset make_synthetic_dataset(size_t n, uint64_t seed);

// Single synthetic sample with explicit disc/square centers.
ImageSample make_synthetic_sample(int disc_r, int disc_c, int sq_r, int sq_c,
                                  const std::string& id, const std::string& leaf);

// Writes a dataset to the on-disk layout consumed by load_dataset
// (category tree + vms/ when labeled).
void write_dataset_layout(const Dataset& ds, const std::string& root);

// (image_id, file path) pairs sorted by id: walks a category tree when the
// root has indoor/outdoor subdirectories, otherwise one flat directory.
std::vector<std::pair<std::string, std::string>> list_images(const std::string& dir);

// Image scan for prediction: a taxonomy root (categories attached) or a
// flat directory of images (no categories). Always unlabeled.
Dataset scan_images(const std::string& dir);

}  // namespace vmsvae
