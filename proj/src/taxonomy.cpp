#include "vmsvae/taxonomy.hpp"

namespace vmsvae {

namespace {

struct LeafEntry {
    const char* leaf;
    const char* level1;
    const char* level2;
};

constexpr std::array<LeafEntry, kLeafCount> kTree = {{
    {"kitchen", "indoor", "private"},
    {"living_room", "indoor", "private"},
    {"small", "indoor", "public"},
    {"big", "indoor", "public"},
    {"work_home", "outdoor", "man-made"},
    {"public_entertainment", "outdoor", "man-made"},
    {"populated", "outdoor", "natural"},
    {"isolated", "outdoor", "natural"},
}};

}  // namespace

const std::array<std::string, kLeafCount>& taxonomy_leaves() {
    static const std::array<std::string, kLeafCount> leaves = [] {
        std::array<std::string, kLeafCount> a;
        for (int i = 0; i < kLeafCount; ++i) a[i] = kTree[i].leaf;
        return a;
    }();
    return leaves;
}

int leaf_index(const std::string& leaf) {
    for (int i = 0; i < kLeafCount; ++i) {
        if (leaf == kTree[i].leaf) return i;
    }
    return -1;
}

CategoryPath category_for_leaf(const std::string& leaf) {
    int i = leaf_index(leaf);
    if (i < 0) return {};
    return {kTree[i].level1, kTree[i].level2, kTree[i].leaf};
}

std::optional<CategoryPath> make_category(const std::string& level1,
                                          const std::string& level2,
                                          const std::string& leaf) {
    int i = leaf_index(leaf);
    if (i < 0) return std::nullopt;
    if (level1 != kTree[i].level1 || level2 != kTree[i].level2) return std::nullopt;
    return CategoryPath{level1, level2, leaf};
}

std::string category_relative_dir(const CategoryPath& c) {
    return c.level1 + "/" + c.level2 + "/" + c.leaf;
}

}  // namespace vmsvae
