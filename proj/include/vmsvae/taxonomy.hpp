#pragma once

#include <array>
#include <optional>
#include <string>

namespace vmsvae {

// The VISCHEMA category tree:
//   indoor  / private  / {kitchen, living_room}
//   indoor  / public   / {small, big}
//   outdoor / man-made / {work_home, public_entertainment}
//   outdoor / natural  / {populated, isolated}
struct CategoryPath {
    std::string level1;
    std::string level2;
    std::string leaf;

    bool operator==(const CategoryPath&) const = default;
};

inline constexpr int kLeafCount = 8;

// Leaves in fixed taxonomy order; directory names double as identifiers.
const std::array<std::string, kLeafCount>& taxonomy_leaves();

// indoor/private, indoor/public, outdoor/man-made, outdoor/natural
CategoryPath category_for_leaf(const std::string& leaf);
int leaf_index(const std::string& leaf);  // -1 when unknown

// Validates leaf-ancestor consistency against the tree.
std::optional<CategoryPath> make_category(const std::string& level1,
                                          const std::string& level2,
                                          const std::string& leaf);

// "<level1>/<level2>/<leaf>" relative directory for a category.
std::string category_relative_dir(const CategoryPath& c);

}  // namespace vmsvae
