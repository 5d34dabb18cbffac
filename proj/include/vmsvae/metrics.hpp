#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vmsvae/image.hpp"
#include "vmsvae/taxonomy.hpp"

namespace vmsvae {

struct Pearson2dResult {
    double rho = 0.0;
    // Set when either input has zero variance; rho is then defined as 0.
    bool degenerate = false;
};

// Pearson product-moment coefficient of two flattened grids, population
// convention. Shapes must match and be non-empty.
Pearson2dResult pearson2d(const std::vector<float>& a, const std::vector<float>& b);

struct MapScore {
    std::string image_id;
    double rho_true = 0.0, rho_false = 0.0, rho_all = 0.0;
    double mse_true = 0.0, mse_false = 0.0, mse_all = 0.0;
    bool degenerate_true = false, degenerate_false = false, degenerate_all = false;
};

// Per-channel and concatenated Pearson plus MSE on the 8-bit (x255) scale.
MapScore score_map(const VmsMap& pred, const VmsMap& gt);

struct MemorabilityPair {
    std::string image_id;
    double true_mem = 0.0;
    double false_mem = 0.0;
};

// Channel means: the map-to-scalar memorability statistic.
MemorabilityPair memorability_from_map(const VmsMap& v);

struct SpearmanResult {
    double rho = 0.0;
    double p = 1.0;
    bool degenerate = false;
    size_t n = 0;
};

// Rank correlation with tie-averaged ranks; two-sided p from the
// t-approximation t = rho*sqrt((n-2)/(1-rho^2)), with p = 0 when |rho| = 1.
SpearmanResult spearman(const std::vector<double>& xs, const std::vector<double>& ys);

struct Stat {
    double mean = 0.0;
    double stddev = 0.0;
};

struct AggRow {
    std::string label;
    size_t count = 0;
    Stat rho_true, rho_false, rho_all;
    Stat mse_true, mse_false, mse_all;
    Stat true_mem, false_mem;
};

struct CategoryReport {
    std::vector<AggRow> leaves;  // fixed taxonomy order, one row per leaf
    AggRow overall;
};

CategoryReport category_report(const std::vector<MapScore>& scores,
                               const std::vector<MemorabilityPair>& mems,
                               const std::map<std::string, CategoryPath>& cats);

enum class MemField { kTrueMem, kFalseMem };

// Spearman over the per-leaf means of the chosen memorability field.
SpearmanResult compare_category_distributions(const CategoryReport& a, const CategoryReport& b,
                                              MemField field);

// Spearman between per-image true_mem and an external id->score table over
// the id intersection (must have at least 3 common ids).
SpearmanResult correlate_with_scores(const std::vector<MemorabilityPair>& mems,
                                     const std::map<std::string, double>& scores);

struct SaliencyCorrelation {
    std::optional<double> mean_true, mean_false, mean_all;
    size_t used = 0;     // images with a saliency map
    size_t skipped = 0;  // images lacking one
    size_t degenerate_true = 0, degenerate_false = 0, degenerate_all = 0;
};

// Mean over images of pearson2d(channel, saliency); the combined statistic
// correlates the two-channel concatenation against the saliency map repeated
// once per channel. Degenerate pairs are excluded from the mean.
SaliencyCorrelation correlate_with_saliency(
    const std::vector<std::pair<std::string, VmsMap>>& preds,
    const std::map<std::string, std::vector<float>>& saliency);

}  // namespace vmsvae
