#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "smarttree/tree.hpp"

namespace smarttree {

inline constexpr const char* kTreeSchema = "smarttree.tree";
inline constexpr int kTreeSchemaVersion = 1;

/// Versioned JSON document: nodes in preorder with split rules, stats and
/// payloads (survival leaves carry the full KM arrays), training config and
/// feature catalog. The thread count is left out since it never changes a tree.
nlohmann::json tree_to_json(const Tree& tree);
/// Throws FormatError on a wrong schema, version or malformed node list.
Tree tree_from_json(const nlohmann::json& j);

std::string tree_json_string(const Tree& tree);
Tree read_tree_file(const std::filesystem::path& path);

/// Leaf statistic used for shading: expected survival days or failure probability.
double leaf_shade_value(const TreeNode& node);

/// Graphviz digraph. Leaves are filled on a light-to-dark ramp scaled between
/// the smallest and largest leaf statistic, so darker means longer expected
/// survival (survival trees) or higher failure probability (classification).
std::string tree_to_dot(const Tree& tree);

/// Feature name for display: catalog column name, or "x<index>".
std::string feature_name(const Tree& tree, std::size_t feature);

}  // namespace smarttree
