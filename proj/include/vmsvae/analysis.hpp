#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "vmsvae/dataset.hpp"
#include "vmsvae/metrics.hpp"
#include "vmsvae/model.hpp"

namespace vmsvae {

struct EmbeddingRecord {
    std::string image_id;
    std::vector<float> mu;
    double true_mem = 0.0;   // min-max normalized over the dataset
    double false_mem = 0.0;
    CategoryPath category;
};

// One record per image: posterior mean plus the memorability pair of the
// predicted map, min-max normalized across the dataset.
std::vector<EmbeddingRecord> embed_dataset(ModelState& state, const Dataset& ds);

struct Projection2D {
    std::map<std::string, std::pair<double, double>> coords;
    std::vector<double> basis_u, basis_v;  // unit projection directions
    std::vector<double> center;            // subtracted before projecting
    bool fallback = false;                 // rank-deficient: first two coordinates
};

// Top-2 principal components of the mu vectors; sign fixed by making each
// basis vector's largest-magnitude coordinate positive.
Projection2D project_2d(const std::vector<EmbeddingRecord>& records);

void write_embedding_csv(const std::vector<EmbeddingRecord>& records, const Projection2D& proj,
                         const std::string& path);

// The three architecture variants the reports cover.
extern const std::vector<std::string> kVariantNames;  // n64_m8, n64_m8_l1, n128_m32

struct VariantTable {
    nlohmann::json json;
    std::string text;  // aligned rendering with published reference magnitudes
};

VariantTable build_table1(const std::map<std::string, CategoryReport>& variants);

// CSV of (leaf, mean rho_all, stddev, count) in fixed taxonomy order.
std::string build_category_figure(const CategoryReport& report);

// Fixed-key JSON serialization of a CategoryReport row / full report.
nlohmann::json category_report_json(const CategoryReport& report);

}  // namespace vmsvae
