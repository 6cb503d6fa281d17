#include "smarttree/tree_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "smarttree/io.hpp"
#include "smarttree/serialize.hpp"

namespace smarttree {

using nlohmann::json;

namespace {

json config_to_json(const TrainConfig& c) {
  return {{"max_depth", c.max_depth},
          {"min_samples_leaf", c.min_samples_leaf},
          {"cp", c.cp},
          {"local_search_rounds", c.local_search_rounds},
          {"seed", c.seed},
          {"max_thresholds", c.max_thresholds},
          {"class_loss", std::string(to_string(c.class_loss))}};
}

TrainConfig config_of_json(const json& j) {
  TrainConfig c;
  c.max_depth = j.at("max_depth").get<int>();
  c.min_samples_leaf = j.at("min_samples_leaf").get<int>();
  c.cp = j.at("cp").get<double>();
  c.local_search_rounds = j.at("local_search_rounds").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.max_thresholds = j.at("max_thresholds").get<std::size_t>();
  const auto loss = parse_class_loss(j.value("class_loss", std::string("misclassification")));
  if (!loss) throw FormatError("unknown class_loss " + j.at("class_loss").dump());
  c.class_loss = *loss;
  return c;
}

json km_to_json(const KMCurve& km) {
  return {{"times", km.times},
          {"survival", km.survival},
          {"at_risk", km.at_risk},
          {"deaths", km.deaths},
          {"n_total", km.n_total}};
}

KMCurve km_of_json(const json& j) {
  KMCurve km;
  km.times = j.at("times").get<std::vector<std::int32_t>>();
  km.survival = j.at("survival").get<std::vector<double>>();
  km.at_risk = j.at("at_risk").get<std::vector<std::int64_t>>();
  km.deaths = j.at("deaths").get<std::vector<std::int64_t>>();
  km.n_total = j.at("n_total").get<std::int64_t>();
  const auto k = km.times.size();
  if (km.survival.size() != k || km.at_risk.size() != k || km.deaths.size() != k) {
    throw FormatError("KM arrays have different lengths");
  }
  return km;
}

json node_to_json(const Tree& tree, const TreeNode& node, std::size_t id) {
  json j{{"id", id}, {"depth", node.depth}, {"n", node.stats.n}};
  if (tree.kind == TreeKind::classification) {
    j["positives"] = node.stats.positives;
  } else {
    j["events"] = node.stats.events;
    j["total_time"] = node.stats.total_time;
  }
  if (node.is_leaf()) {
    j["split"] = nullptr;
  } else {
    j["split"] = {{"feature", node.split->feature},
                  {"column", feature_name(tree, node.split->feature)},
                  {"threshold", node.split->threshold},
                  {"missing_goes_left", node.split->missing_goes_left},
                  {"gain", node.split_gain}};
    j["left"] = node.left;
    j["right"] = node.right;
  }
  if (const auto* c = std::get_if<ClassLeaf>(&node.payload)) {
    j["payload"] = {{"n_samples", c->n_samples}, {"positive_count", c->positive_count}, {"probability", c->probability}};
  } else {
    const auto& s = std::get<SurvivalLeaf>(node.payload);
    j["payload"] = {{"n_samples", s.n_samples},
                    {"expected_survival_days", s.expected_survival_days},
                    {"km", km_to_json(s.km)}};
  }
  return j;
}

TreeNode node_of_json(TreeKind kind, const json& j) {
  TreeNode node;
  node.depth = j.at("depth").get<int>();
  node.stats.n = j.at("n").get<std::int64_t>();
  const auto& p = j.at("payload");
  if (kind == TreeKind::classification) {
    node.stats.positives = j.at("positives").get<std::int64_t>();
    node.payload = ClassLeaf{p.at("n_samples").get<std::int64_t>(), p.at("positive_count").get<std::int64_t>(),
                             p.at("probability").get<double>()};
  } else {
    node.stats.events = j.at("events").get<std::int64_t>();
    node.stats.total_time = j.at("total_time").get<std::int64_t>();
    node.payload = SurvivalLeaf{p.at("n_samples").get<std::int64_t>(), km_of_json(p.at("km")),
                                p.at("expected_survival_days").get<double>()};
  }
  const auto& split = j.at("split");
  if (!split.is_null()) {
    node.split = SplitRule{split.at("feature").get<std::size_t>(), split.at("threshold").get<double>(),
                           split.at("missing_goes_left").get<bool>()};
    node.split_gain = split.at("gain").get<double>();
    node.left = j.at("left").get<int>();
    node.right = j.at("right").get<int>();
  }
  return node;
}

}  // namespace

std::string feature_name(const Tree& tree, std::size_t feature) {
  if (feature < tree.catalog.size()) return tree.catalog[feature].column_name();
  return "x" + std::to_string(feature);
}

json tree_to_json(const Tree& tree) {
  json nodes = json::array();
  for (std::size_t v = 0; v < tree.nodes.size(); ++v) nodes.push_back(node_to_json(tree, tree.nodes[v], v));
  return {{"schema", kTreeSchema},
          {"version", kTreeSchemaVersion},
          {"kind", std::string(to_string(tree.kind))},
          {"n_features", tree.n_features},
          {"catalog", catalog_to_json(tree.catalog)},
          {"config", config_to_json(tree.config)},
          {"rmst_tau", tree.rmst_tau},
          {"window_days", tree.window_days},
          {"nodes", std::move(nodes)}};
}

Tree tree_from_json(const json& j) {
  try {
    if (j.at("schema").get<std::string>() != kTreeSchema) throw FormatError("not a tree document");
    if (j.at("version").get<int>() != kTreeSchemaVersion) {
      throw FormatError("unsupported tree version " + j.at("version").dump());
    }
    Tree tree;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "classification") {
      tree.kind = TreeKind::classification;
    } else if (kind == "survival") {
      tree.kind = TreeKind::survival;
    } else {
      throw FormatError("unknown tree kind '" + kind + "'");
    }
    tree.n_features = j.at("n_features").get<std::size_t>();
    tree.catalog = catalog_of_json(j.at("catalog"));
    tree.config = config_of_json(j.at("config"));
    tree.rmst_tau = j.at("rmst_tau").get<double>();
    tree.window_days = j.at("window_days").get<int>();
    for (const auto& n : j.at("nodes")) tree.nodes.push_back(node_of_json(tree.kind, n));
    if (tree.nodes.empty()) throw FormatError("tree has no nodes");
    const int count = static_cast<int>(tree.nodes.size());
    for (int v = 0; v < count; ++v) {
      const auto& node = tree.nodes[static_cast<std::size_t>(v)];
      if (node.is_leaf()) continue;
      if (node.left <= v || node.right <= v || node.left >= count || node.right >= count) {
        throw FormatError("node " + std::to_string(v) + " has invalid children");
      }
      if (node.split->feature >= tree.n_features) throw FormatError("split feature out of range");
    }
    return tree;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed tree document: ") + e.what());
  }
}

std::string tree_json_string(const Tree& tree) { return tree_to_json(tree).dump(2) + "\n"; }

Tree read_tree_file(const std::filesystem::path& path) {
  const auto text = io::read_file(path);
  try {
    return tree_from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

double leaf_shade_value(const TreeNode& node) {
  if (const auto* c = std::get_if<ClassLeaf>(&node.payload)) return c->probability;
  return std::get<SurvivalLeaf>(node.payload).expected_survival_days;
}

namespace {

std::string hex_color(double frac) {
  // Blues ramp: #f7fbff (light) to #08306b (dark).
  constexpr int lo[3] = {0xf7, 0xfb, 0xff};
  constexpr int hi[3] = {0x08, 0x30, 0x6b};
  char buf[8];
  int c[3];
  for (int i = 0; i < 3; ++i) c[i] = static_cast<int>(std::lround(lo[i] + (hi[i] - lo[i]) * frac));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string tree_to_dot(const Tree& tree) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& node : tree.nodes) {
    if (!node.is_leaf()) continue;
    lo = std::min(lo, leaf_shade_value(node));
    hi = std::max(hi, leaf_shade_value(node));
  }
  std::ostringstream out;
  out << "digraph tree {\n"
      << "  node [shape=box, style=\"rounded,filled\", fontname=\"Helvetica\", fillcolor=\"#ffffff\"];\n"
      << "  edge [fontname=\"Helvetica\"];\n";
  for (std::size_t v = 0; v < tree.nodes.size(); ++v) {
    const auto& node = tree.nodes[v];
    out << "  n" << v << " [label=\"";
    if (!node.is_leaf()) {
      out << feature_name(tree, node.split->feature) << " < " << io::format_double(node.split->threshold)
          << "\\nn = " << node.stats.n << "\"];\n";
      continue;
    }
    const double value = leaf_shade_value(node);
    const double frac = hi > lo ? (value - lo) / (hi - lo) : 0.0;
    out << "leaf " << v << "\\nn = " << node.stats.n << "\\n";
    if (tree.kind == TreeKind::classification) {
      out << "p(fail) = " << fixed(value, 3);
    } else {
      out << "E[T] = " << fixed(value, 1) << " d";
    }
    out << "\", fillcolor=\"" << hex_color(frac) << "\"";
    if (frac > 0.55) out << ", fontcolor=\"#ffffff\"";
    out << "];\n";
  }
  for (std::size_t v = 0; v < tree.nodes.size(); ++v) {
    const auto& node = tree.nodes[v];
    if (node.is_leaf()) continue;
    const bool ml = node.split->missing_goes_left;
    out << "  n" << v << " -> n" << node.left << " [label=\"yes" << (ml ? " / missing" : "") << "\"];\n";
    out << "  n" << v << " -> n" << node.right << " [label=\"no" << (ml ? "" : " / missing") << "\"];\n";
  }
  out << "}\n";
  return out.str();
}

}  // namespace smarttree
