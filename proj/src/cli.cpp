#include "smarttree/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "smarttree/dataset.hpp"
#include "smarttree/errors.hpp"
#include "smarttree/evaluation.hpp"
#include "smarttree/io.hpp"
#include "smarttree/log.hpp"
#include "smarttree/synth.hpp"
#include "smarttree/telemetry.hpp"
#include "smarttree/tree.hpp"
#include "smarttree/tree_io.hpp"

namespace smarttree::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string manifest_name(const std::string& command) { return command + ".manifest.json"; }

namespace {

const std::set<std::string> kCommonOptions = {"seed", "out-dir", "verbose", "threads", "config"};

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

/// JSON config files: top-level keys set common options or options of the
/// running command; an object keyed by a command name sets that command's
/// options and is ignored by the others.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(std::string command) : command_(std::move(command)) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (!opt->get_configurable() || opt->get_lnames().empty()) continue;
      const auto& name = opt->get_lnames().front();
      if (opt->count() > 0) {
        j[name] = opt->results().size() == 1 ? json(opt->results().front()) : json(opt->results());
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        if (key != command_) continue;
        for (const auto& [k, v] : value.items()) items.push_back(item({command_}, k, v));
      } else {
        const auto name = dashed(key);
        if (kCommonOptions.count(name)) {
          items.push_back(item({}, key, value));
        } else {
          items.push_back(item({command_}, key, value));
        }
      }
    }
    return items;
  }

 private:
  static std::string text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static CLI::ConfigItem item(std::vector<std::string> parents, const std::string& key, const json& v) {
    CLI::ConfigItem it;
    it.parents = std::move(parents);
    it.name = dashed(key);
    if (v.is_array()) {
      for (const auto& e : v) it.inputs.push_back(text(e));
    } else {
      it.inputs.push_back(text(v));
    }
    return it;
  }

  std::string command_;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string absolute_path(const std::string& p) {
  if (p.empty()) return p;
  return fs::weakly_canonical(fs::absolute(p)).string();
}

CLI::Validator to_absolute() {
  return CLI::Validator(
      [](std::string& s) {
        s = absolute_path(s);
        return std::string();
      },
      "PATH");
}

struct Common {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  bool verbose = false;
  int threads = 1;
};

/// Everything one command run reads and writes, for the manifest.
struct RunContext {
  std::string command;
  fs::path out_dir;
  std::uint64_t seed = 0;
  int threads = 1;
  std::vector<fs::path> inputs;
  std::vector<std::string> outputs;
  std::string current_input;

  void input(const fs::path& p) {
    if (std::find(inputs.begin(), inputs.end(), p) == inputs.end()) inputs.push_back(p);
  }
  fs::path output(const std::string& rel) {
    outputs.push_back(rel);
    return out_dir / rel;
  }
  void write(const std::string& rel, std::string_view content) { io::write_atomic(output(rel), content); }
  void write(const std::string& rel, const std::function<void(std::ostream&)>& writer) {
    io::write_atomic(output(rel), writer);
  }
};

Day parse_day(const std::string& text, const char* flag) {
  auto d = Day::parse(text);
  if (!d) throw InvalidWindow(std::string(flag) + " '" + text + "' is not a YYYY-MM-DD date");
  return *d;
}

std::vector<DriveDaySnapshot> read_cache(const fs::path& path, RunContext& ctx) {
  ctx.input(path);
  ctx.current_input = path.string();
  auto in = io::open_input(path);
  ParseOptions options;
  options.max_bad_row_fraction = 0.0;
  SnapshotReader reader(*in, options);
  std::vector<DriveDaySnapshot> out;
  while (auto s = reader.next()) out.push_back(std::move(*s));
  ctx.current_input.clear();
  return out;
}

DatasetSidecar read_sidecar(const fs::path& path, RunContext& ctx) {
  ctx.input(path);
  return DatasetSidecar::from_json(io::read_file(path));
}

template <typename Sample>
std::vector<Sample> read_samples(const fs::path& sidecar_path, const DatasetSidecar& sidecar, bool test,
                                 RunContext& ctx) {
  const fs::path file = sidecar_path.parent_path() / (test ? sidecar.test_file : sidecar.train_file);
  ctx.input(file);
  auto in = io::open_input(file);
  if constexpr (std::is_same_v<Sample, SurvivalSample>) {
    return read_survival_csv(*in, sidecar.catalog);
  } else {
    return read_class_csv(*in, sidecar.catalog);
  }
}

Tree read_tree(const fs::path& path, RunContext& ctx) {
  ctx.input(path);
  return read_tree_file(path);
}

void write_km_files(const Tree& tree, RunContext& ctx) {
  for (std::size_t v = 0; v < tree.nodes.size(); ++v) {
    const auto& node = tree.nodes[v];
    if (!node.is_leaf()) continue;
    const auto& leaf = std::get<SurvivalLeaf>(node.payload);
    ctx.write("km/leaf_" + std::to_string(v) + ".csv", [&](std::ostream& os) { write_km_csv(os, leaf.km); });
  }
}

// ingest

struct IngestArgs {
  std::vector<std::string> inputs;
  std::string model;
  std::string output = "snapshots.csv";
  double max_bad_fraction = 0.01;
};

struct DriveTally {
  Day first, last;
  std::size_t rows = 0;
  bool failed = false;
};

void cmd_ingest(const IngestArgs& a, RunContext& ctx) {
  std::set<SmartKey> keys;
  for (const auto& p : a.inputs) {
    ctx.input(p);
    ctx.current_input = p;
    auto in = io::open_input(p);
    for (const auto& c : read_schema(*in).smart) keys.insert(c.key);
  }
  ctx.current_input.clear();
  const std::vector<SmartKey> key_list(keys.begin(), keys.end());
  const SchemaMap out_schema = SchemaMap::for_keys(key_list);

  json files = json::array();
  std::map<std::string, DriveTally> drives;
  std::size_t kept = 0, failure_rows = 0, rejected = 0;
  ctx.write(a.output, [&](std::ostream& os) {
    os << format_header(out_schema) << '\n';
    for (const auto& p : a.inputs) {
      ctx.current_input = p;
      auto in = io::open_input(p);
      ParseOptions options;
      options.max_bad_row_fraction = a.max_bad_fraction;
      SnapshotReader reader(*in, options);
      std::size_t file_kept = 0;
      while (auto s = reader.next()) {
        if (!a.model.empty() && s->model != a.model) continue;
        os << format_row(*s, out_schema) << '\n';
        ++file_kept;
        failure_rows += s->failed;
        auto& t = drives.try_emplace(s->serial, DriveTally{s->date, s->date, 0, false}).first->second;
        t.first = std::min(t.first, s->date);
        t.last = std::max(t.last, s->date);
        ++t.rows;
        t.failed = t.failed || s->failed;
      }
      json errors = json::array();
      for (const auto& e : reader.errors()) {
        if (errors.size() >= 20) break;
        errors.push_back({{"line", e.line()}, {"cause", e.cause()}});
      }
      json unrecognized = json::array();
      for (const auto& c : reader.schema().unrecognized) unrecognized.push_back(c.name);
      files.push_back({{"path", p},
                       {"rows_read", reader.rows_read()},
                       {"rows_rejected", reader.rows_rejected()},
                       {"rows_kept", file_kept},
                       {"first_errors", errors},
                       {"unrecognized_columns", unrecognized}});
      kept += file_kept;
      rejected += reader.rows_rejected();
    }
    ctx.current_input.clear();
  });

  std::size_t failed_drives = 0, gapped = 0, gap_days = 0;
  for (const auto& [serial, t] : drives) {
    failed_drives += t.failed;
    const auto span = static_cast<std::size_t>((t.last - t.first) + 1);
    if (span > t.rows) {
      ++gapped;
      gap_days += span - t.rows;
    }
  }
  json smart_columns = json::array();
  for (const auto& k : key_list) smart_columns.push_back(k.column_name());
  json report = {{"model_filter", a.model.empty() ? json(nullptr) : json(a.model)},
                 {"files", files},
                 {"rows_kept", kept},
                 {"rows_rejected", rejected},
                 {"failure_rows", failure_rows},
                 {"drives", drives.size()},
                 {"failed_drives", failed_drives},
                 {"drives_with_gaps", gapped},
                 {"gap_days", gap_days},
                 {"smart_columns", smart_columns}};
  ctx.write("ingest_report.json", report.dump(2) + "\n");
  std::cerr << "ingest: kept " << kept << " rows (" << failure_rows << " failure rows, " << drives.size()
            << " drives, " << failed_drives << " failed) from " << a.inputs.size() << " file(s); " << rejected
            << " rows rejected\n";
}

// dataset

struct DatasetArgs {
  std::string cache;
  std::string mode = "survival";
  std::string window_start;
  std::string window_end;
  std::string observe_until;
  int horizon = 30;
  bool failing_only = false;
  double test_fraction = 0.3;
};

void cmd_dataset(const DatasetArgs& a, RunContext& ctx) {
  const auto snapshots = read_cache(a.cache, ctx);
  std::optional<Day> until;
  if (!a.observe_until.empty()) until = parse_day(a.observe_until, "--observe-until");

  std::vector<std::string> serials;
  std::optional<Day> first, last;
  for (const auto& s : snapshots) {
    if (until && s.date > *until) continue;
    serials.push_back(s.serial);
    if (!first || s.date < *first) first = s.date;
    if (!last || s.date > *last) last = s.date;
  }
  if (!first) throw EmptyDataset("no snapshots in '" + a.cache + "' within the observation limit");
  const Day start = a.window_start.empty() ? *first : parse_day(a.window_start, "--window-start");
  const Day end = a.window_end.empty() ? *last : parse_day(a.window_end, "--window-end");

  const FeatureCatalog catalog = default_catalog(observed_smart_ids(snapshots));
  const auto test_serials = partition_serials(serials, a.test_fraction, derive_seed(ctx.seed, "split"));

  DatasetSidecar sidecar;
  sidecar.catalog = catalog;
  sidecar.window_start = start;
  sidecar.window_end = end;
  sidecar.observe_until = until;
  sidecar.failing_only = a.failing_only;
  sidecar.test_fraction = a.test_fraction;
  sidecar.seed = ctx.seed;
  sidecar.source_cache = a.cache;
  sidecar.source_digest = io::sha256_file(a.cache);
  sidecar.train_file = "train.csv";
  sidecar.test_file = "test.csv";

  auto count_serials = [](const auto& samples) {
    std::set<std::string> s;
    for (const auto& x : samples) s.insert(x.serial);
    return s.size();
  };
  auto finish = [&](const auto& split, auto writer) {
    sidecar.train_samples = split.train.size();
    sidecar.test_samples = split.test.size();
    sidecar.train_serials = count_serials(split.train);
    sidecar.test_serials = count_serials(split.test);
    ctx.write(sidecar.train_file, [&](std::ostream& os) { writer(os, split.train, catalog); });
    ctx.write(sidecar.test_file, [&](std::ostream& os) { writer(os, split.test, catalog); });
  };

  if (a.mode == "survival") {
    sidecar.mode = DatasetMode::survival;
    const auto samples = build_survival_dataset(snapshots, start, end, catalog, a.failing_only, until);
    finish(apply_partition<SurvivalSample>(samples, test_serials),
           [](std::ostream& os, std::span<const SurvivalSample> s, const FeatureCatalog& c) {
             write_survival_csv(os, s, c);
           });
  } else if (a.mode == "classify") {
    sidecar.mode = DatasetMode::classify;
    sidecar.horizon_days = a.horizon;
    const auto samples = build_classification_dataset(snapshots, start, end, a.horizon, catalog, until);
    finish(apply_partition<ClassSample>(samples, test_serials),
           [](std::ostream& os, std::span<const ClassSample> s, const FeatureCatalog& c) {
             write_class_csv(os, s, c);
           });
  } else {
    throw InvalidConfig("--mode must be survival or classify, got '" + a.mode + "'");
  }
  ctx.write("dataset.json", sidecar.to_json());
  std::cerr << "dataset: " << to_string(sidecar.mode) << ", " << sidecar.train_samples << " train / "
            << sidecar.test_samples << " test samples over " << sidecar.window_days() << " days\n";
}

// train

struct TrainArgs {
  std::string dataset;
  std::string mode;
  int max_depth = 5;
  int min_samples_leaf = 100;
  std::string cp = "auto";
  std::string class_loss = "misclassification";
  int local_search_rounds = 10;
  std::size_t max_thresholds = 0;
  double validation_fraction = 0.25;
};

template <typename Sample>
Tree train_on(const std::vector<Sample>& samples, const FeatureCatalog& catalog, TrainConfig config,
              const TrainArgs& a, RunContext& ctx) {
  if (a.cp == "auto") {
    if (samples.empty()) throw EmptyDataset("training set is empty");
    const auto parts = split_by_serial<Sample>(samples, a.validation_fraction, derive_seed(ctx.seed, "cp"));
    const auto fit = TrainingData::from_samples(parts.train, catalog);
    const auto validation = TrainingData::from_samples(parts.test, catalog);
    const auto sel = select_cp(fit, validation, config, kDefaultCpGrid);
    config.cp = sel.cp;
    json grid = json::array();
    for (std::size_t i = 0; i < sel.grid.size(); ++i) {
      grid.push_back({{"cp", sel.grid[i]}, {"validation_loss", sel.validation_loss[i]}});
    }
    json out = {{"selected_cp", sel.cp},
                {"validation_fraction", a.validation_fraction},
                {"fit_samples", fit.size()},
                {"validation_samples", validation.size()},
                {"grid", grid}};
    ctx.write("cp_selection.json", out.dump(2) + "\n");
    log::info("selected cp " + io::format_double(sel.cp));
  } else {
    auto cp = io::parse_double(a.cp);
    if (!cp || *cp < 0) throw InvalidConfig("--cp must be a non-negative number or 'auto', got '" + a.cp + "'");
    config.cp = *cp;
  }
  return train_tree(TrainingData::from_samples(samples, catalog), config);
}

void write_importance(const Tree& tree, RunContext& ctx) {
  const auto imp = variable_importance(tree);
  std::ostringstream by_feature;
  by_feature << "feature,smart_id,kind,importance\n";
  for (std::size_t i = 0; i < tree.catalog.size(); ++i) {
    const auto& key = tree.catalog[i];
    by_feature << key.column_name() << ',' << key.id << ',' << to_string(key.kind) << ','
               << io::format_double(imp.by_feature[i]) << '\n';
  }
  ctx.write("importance.csv", by_feature.str());

  std::vector<std::pair<int, double>> ranked(imp.by_smart_id.begin(), imp.by_smart_id.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
  std::ostringstream by_id;
  by_id << "smart_id,importance\n";
  for (const auto& [id, v] : ranked) by_id << id << ',' << io::format_double(v) << '\n';
  ctx.write("importance_by_id.csv", by_id.str());
}

void cmd_train(const TrainArgs& a, RunContext& ctx) {
  const fs::path sidecar_path = a.dataset;
  const auto sidecar = read_sidecar(sidecar_path, ctx);
  if (!a.mode.empty() && a.mode != to_string(sidecar.mode)) {
    throw InvalidConfig("--mode " + a.mode + " does not match the dataset's mode " +
                        std::string(to_string(sidecar.mode)));
  }
  TrainConfig config;
  config.max_depth = a.max_depth;
  config.min_samples_leaf = a.min_samples_leaf;
  config.local_search_rounds = a.local_search_rounds;
  config.max_thresholds = a.max_thresholds;
  config.seed = ctx.seed;
  config.threads = ctx.threads;
  config.class_loss = *parse_class_loss(a.class_loss);
  config.validate();

  Tree tree;
  if (sidecar.mode == DatasetMode::survival) {
    tree = train_on(read_samples<SurvivalSample>(sidecar_path, sidecar, false, ctx), sidecar.catalog, config, a, ctx);
  } else {
    tree = train_on(read_samples<ClassSample>(sidecar_path, sidecar, false, ctx), sidecar.catalog, config, a, ctx);
  }
  tree.window_days = sidecar.window_days();
  ctx.write("tree.json", tree_json_string(tree));
  write_importance(tree, ctx);
  std::cerr << "train: " << to_string(tree.kind) << " tree with " << tree.split_count() << " splits, depth "
            << tree.depth() << ", cp " << io::format_double(tree.config.cp) << "\n";
}

// evaluate

struct EvaluateArgs {
  std::string class_tree;
  std::string class_dataset;
  std::string survival_tree;
  std::string survival_dataset;
  std::vector<int> horizons = {30, 60, 90};
  double threshold = 0.05;
};

void check_pair(const Tree& tree, const DatasetSidecar& sidecar, TreeKind kind, const char* what) {
  if (tree.kind != kind) {
    throw InvalidConfig(std::string(what) + " tree is a " + std::string(to_string(tree.kind)) + " tree");
  }
  const bool mode_ok = (kind == TreeKind::survival) == (sidecar.mode == DatasetMode::survival);
  if (!mode_ok) throw InvalidConfig(std::string(what) + " dataset has mode " + std::string(to_string(sidecar.mode)));
  if (!(tree.catalog == sidecar.catalog)) {
    throw DimensionMismatch(std::string(what) + " tree and dataset use different feature catalogs");
  }
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

void cmd_evaluate(const EvaluateArgs& a, RunContext& ctx) {
  if (a.class_tree.empty() != a.class_dataset.empty()) {
    throw InvalidConfig("--class-tree and --class-dataset go together");
  }
  if (a.survival_tree.empty() != a.survival_dataset.empty()) {
    throw InvalidConfig("--survival-tree and --survival-dataset go together");
  }
  if (a.class_tree.empty() && a.survival_tree.empty()) {
    throw InvalidConfig("nothing to evaluate: give --class-tree/--class-dataset and/or --survival-tree/--survival-dataset");
  }
  std::optional<Tree> class_tree, survival_tree;
  std::vector<ClassSample> class_samples;
  std::vector<SurvivalSample> survival_samples;
  int class_horizon = 30;
  if (!a.class_tree.empty()) {
    class_tree = read_tree(a.class_tree, ctx);
    const auto sidecar = read_sidecar(a.class_dataset, ctx);
    check_pair(*class_tree, sidecar, TreeKind::classification, "classification");
    class_samples = read_samples<ClassSample>(a.class_dataset, sidecar, true, ctx);
    class_horizon = sidecar.horizon_days;
  }
  if (!a.survival_tree.empty()) {
    survival_tree = read_tree(a.survival_tree, ctx);
    const auto sidecar = read_sidecar(a.survival_dataset, ctx);
    check_pair(*survival_tree, sidecar, TreeKind::survival, "survival");
    survival_samples = read_samples<SurvivalSample>(a.survival_dataset, sidecar, true, ctx);
  }
  const auto report = evaluate_table(class_tree ? &*class_tree : nullptr, class_samples,
                                     survival_tree ? &*survival_tree : nullptr, survival_samples, a.horizons,
                                     a.threshold, class_horizon);
  ctx.write("table2.csv", table2_csv(report));
  ctx.write("report.csv", report_csv(report));
  ctx.write("report.json", report_json(report).dump(2) + "\n");
  for (const auto& row : report.rows) {
    ctx.write("roc/" + lower(row.model) + "_" + std::to_string(row.horizon_days) + ".csv",
              [&](std::ostream& os) { write_roc_csv(os, row.roc); });
  }
  if (survival_tree) write_km_files(*survival_tree, ctx);
  for (const auto& row : report.rows) {
    std::cerr << "evaluate: " << row.column() << " AUC " << io::format_double(row.auc) << " (n=" << row.n
              << ", positives=" << row.positives << ")\n";
  }
}

// export

struct ExportArgs {
  std::string tree;
  std::string format = "dot";
};

void cmd_export(const ExportArgs& a, RunContext& ctx) {
  if (a.format != "dot" && a.format != "km-csv") {
    throw UnknownFormat("unknown export format '" + a.format + "'");
  }
  const Tree tree = read_tree(a.tree, ctx);
  if (a.format == "dot") {
    ctx.write("tree.dot", tree_to_dot(tree));
  } else {
    if (tree.kind != TreeKind::survival) throw InvalidConfig("km-csv export needs a survival tree");
    write_km_files(tree, ctx);
  }
}

// synth

struct SynthArgs {
  std::string spec;
  bool reference = false;
  std::string output = "fleet.csv";
  std::optional<std::size_t> n_drives;
  std::optional<int> days;
};

void cmd_synth(const SynthArgs& a, bool seed_given, RunContext& ctx) {
  if (a.reference == !a.spec.empty()) throw InvalidSpec("give exactly one of --spec or --reference");
  FleetSpec spec;
  if (a.reference) {
    spec = reference_fleet_spec(ctx.seed);
  } else {
    ctx.input(a.spec);
    json j;
    try {
      j = json::parse(io::read_file(a.spec));
    } catch (const json::exception& e) {
      throw InvalidSpec("'" + a.spec + "' is not valid JSON: " + e.what());
    }
    spec = FleetSpec::from_json(j);
    if (seed_given) spec.seed = ctx.seed;
  }
  if (a.n_drives) spec.n_drives = *a.n_drives;
  if (a.days) spec.days = *a.days;
  spec.validate();
  ctx.seed = spec.seed;
  PlantedTruth truth;
  ctx.write(a.output, [&](std::ostream& os) { truth = write_fleet_csv(spec, os); });
  ctx.write("truth.json", truth.to_json().dump(2) + "\n");
  ctx.write("spec.json", spec.to_json().dump(2) + "\n");
  std::cerr << "synth: " << truth.drives << " drives, " << truth.drive_days << " drive-days, " << truth.failures
            << " failures\n";
}

// manifest

json file_entry(const fs::path& path, const std::string& name) {
  return {{"path", name}, {"sha256", io::sha256_file(path)}, {"bytes", fs::file_size(path)}};
}

bool truthy(const std::vector<std::string>& results) {
  if (results.empty()) return true;
  const auto& v = results.back();
  return !(v == "false" || v == "0" || v == "off" || v == "no" || v == "-1");
}

bool is_flag(const CLI::Option& opt) { return opt.nonpositional() && opt.get_expected_max() == 0; }

std::string option_key(const CLI::Option& opt) {
  if (opt.nonpositional()) return opt.get_lnames().empty() ? opt.get_snames().front() : opt.get_lnames().front();
  return opt.get_name();
}

/// Every option of the command with its resolved value (given or default).
json resolved_params(const CLI::App& sub) {
  json p = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const auto key = option_key(*opt);
    if (key == "help") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      if (is_flag(*opt)) {
        p[key] = truthy(r);
      } else if (opt->get_expected_max() > 1 || !opt->nonpositional()) {
        p[key] = r;
      } else {
        p[key] = r.back();
      }
    } else if (is_flag(*opt)) {
      p[key] = false;
    } else {
      p[key] = opt->get_default_str().empty() ? json(nullptr) : json(opt->get_default_str());
    }
  }
  return p;
}

/// Command line that reruns the command with the same effective settings,
/// without needing the config file. --out-dir is appended at replay time.
std::vector<std::string> replay_argv(const CLI::App& app, const CLI::App& sub) {
  std::vector<std::string> argv{sub.get_name()};
  std::vector<std::string> positional;
  for (const CLI::Option* opt : sub.get_options()) {
    const auto key = option_key(*opt);
    if (key == "help" || opt->count() == 0) continue;
    if (!opt->nonpositional()) {
      positional.insert(positional.end(), opt->results().begin(), opt->results().end());
    } else if (is_flag(*opt)) {
      if (truthy(opt->results())) argv.push_back("--" + key);
    } else {
      for (const auto& r : opt->results()) {
        argv.push_back("--" + key);
        argv.push_back(r);
      }
    }
  }
  for (const char* name : {"--seed", "--threads"}) {
    const CLI::Option* opt = app.get_option(name);
    if (opt->count() > 0) {
      argv.push_back(name);
      argv.push_back(opt->results().back());
    }
  }
  argv.insert(argv.end(), positional.begin(), positional.end());
  return argv;
}

void write_manifest(const RunContext& ctx, const CLI::App& app, const CLI::App& sub, const std::string& started) {
  json inputs = json::array();
  for (const auto& p : ctx.inputs) inputs.push_back(file_entry(p, p.string()));
  json outputs = json::array();
  for (const auto& rel : ctx.outputs) outputs.push_back(file_entry(ctx.out_dir / rel, rel));
  json m = {{"schema", kManifestSchema},
            {"version", kManifestVersion},
            {"tool", "smarttree"},
            {"tool_version", kToolVersion},
            {"command", ctx.command},
            {"seed", ctx.seed},
            {"threads", ctx.threads},
            {"out_dir", ctx.out_dir.string()},
            {"params", resolved_params(sub)},
            {"replay_argv", replay_argv(app, sub)},
            {"inputs", inputs},
            {"outputs", outputs},
            {"started_at", started},
            {"finished_at", utc_now()}};
  io::write_atomic(ctx.out_dir / manifest_name(ctx.command), m.dump(2) + "\n");
}

// replay

struct ReplayArgs {
  std::string manifest;
  bool check = false;
};

int cmd_replay(const ReplayArgs& a, const std::optional<std::string>& out_dir_override) {
  json m;
  try {
    m = json::parse(io::read_file(a.manifest));
  } catch (const json::exception& e) {
    throw FormatError("'" + a.manifest + "' is not valid JSON: " + e.what());
  }
  if (m.value("schema", "") != kManifestSchema) throw FormatError("'" + a.manifest + "' is not a run manifest");
  if (m.value("tool_version", "") != kToolVersion) {
    log::warn("manifest was written by version " + m.value("tool_version", "?") + ", replaying with " +
              kToolVersion);
  }
  for (const auto& in : m.at("inputs")) {
    const auto path = in.at("path").get<std::string>();
    if (io::sha256_file(path) != in.at("sha256").get<std::string>()) {
      throw IoError("input '" + path + "' changed since the recorded run");
    }
  }
  const std::string out_dir = out_dir_override ? *out_dir_override : m.at("out_dir").get<std::string>();
  auto argv = m.at("replay_argv").get<std::vector<std::string>>();
  argv.insert(argv.begin() + 1, {"--out-dir", out_dir});
  log::info("replaying " + m.at("command").get<std::string>() + " into " + out_dir);
  if (const int code = run(argv); code != 0) return code;
  if (!a.check) return 0;

  std::size_t same = 0, total = 0;
  for (const auto& out : m.at("outputs")) {
    ++total;
    const auto rel = out.at("path").get<std::string>();
    const fs::path path = fs::path(out_dir) / rel;
    if (fs::exists(path) && io::sha256_file(path) == out.at("sha256").get<std::string>()) {
      ++same;
    } else {
      std::cerr << "replay: output differs: " << rel << "\n";
    }
  }
  std::cerr << "replay: " << same << " of " << total << " outputs reproduced bit-for-bit\n";
  return same == total ? 0 : 1;
}

void print_error(const std::exception& e, const RunContext& ctx) {
  std::cerr << "error: ";
  if (!ctx.current_input.empty()) std::cerr << ctx.current_input << ": ";
  std::cerr << e.what() << "\n";
  const char* hint = nullptr;
  if (dynamic_cast<const InvalidWindow*>(&e)) {
    hint = "--window-start and --window-end take YYYY-MM-DD dates with start <= end";
  } else if (dynamic_cast<const InvalidHorizon*>(&e)) {
    hint = "horizons are whole days, at least 1";
  } else if (dynamic_cast<const HorizonExceedsWindow*>(&e)) {
    hint = "--horizons must not exceed the survival dataset's window length in days";
  } else if (dynamic_cast<const UnknownFormat*>(&e)) {
    hint = "--format takes dot or km-csv";
  } else if (dynamic_cast<const DegenerateLabels*>(&e)) {
    hint = "the test set needs both failing and healthy samples for every evaluated column";
  } else if (dynamic_cast<const BadRowThresholdExceeded*>(&e)) {
    hint = "raise --max-bad-fraction to accept more malformed rows";
  }
  if (hint) std::cerr << "hint: " << hint << "\n";
}

std::string selected_command(const std::vector<std::string>& args) {
  static const std::set<std::string> commands = {"ingest", "dataset", "train", "evaluate",
                                                 "export", "synth",   "replay"};
  for (const auto& a : args) {
    if (commands.count(a)) return a;
  }
  return {};
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Survival and classification trees over daily drive telemetry.", "smarttree"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();

  Common common;
  app.add_option("--seed", common.seed, "Master seed; each random step derives its own stream from it");
  app.add_option("--out-dir", common.out_dir, "Directory for output files")->transform(to_absolute());
  app.add_flag("--verbose", common.verbose, "Progress messages on stderr");
  app.add_option("--threads", common.threads, "Worker threads; outputs do not depend on it")
      ->check(CLI::PositiveNumber);
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");
  app.config_formatter(std::make_shared<JsonConfig>(selected_command(args)));

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate daily telemetry CSVs and write a snapshot cache");
  ingest_cmd->add_option("inputs", ingest.inputs, "Input CSV files (.csv or .csv.gz)")
      ->required()
      ->transform(to_absolute());
  ingest_cmd->add_option("--model", ingest.model, "Keep only this drive model");
  ingest_cmd->add_option("--output", ingest.output, "Cache file name under --out-dir");
  ingest_cmd->add_option("--max-bad-fraction", ingest.max_bad_fraction, "Abort above this fraction of bad rows")
      ->check(CLI::Range(0.0, 1.0));

  DatasetArgs dataset;
  auto* dataset_cmd = app.add_subcommand("dataset", "Build train/test samples from a snapshot cache");
  dataset_cmd->add_option("--cache", dataset.cache, "Snapshot cache from ingest")->required()->transform(to_absolute());
  dataset_cmd->add_option("--mode", dataset.mode, "survival or classify")
      ->check(CLI::IsMember({"survival", "classify"}));
  dataset_cmd->add_option("--window-start", dataset.window_start, "First snapshot date (default: earliest)");
  dataset_cmd->add_option("--window-end", dataset.window_end, "Last snapshot date (default: latest)");
  dataset_cmd->add_option("--observe-until", dataset.observe_until, "Ignore telemetry after this date");
  dataset_cmd->add_option("--horizon", dataset.horizon, "Classification horizon in days");
  dataset_cmd->add_flag("--failing-only", dataset.failing_only, "Survival: keep only drives that fail");
  dataset_cmd->add_option("--test-fraction", dataset.test_fraction, "Share of drives held out for testing");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Fit a classification or survival tree");
  train_cmd->add_option("--dataset", train.dataset, "Dataset sidecar (dataset.json)")
      ->required()
      ->transform(to_absolute());
  train_cmd->add_option("--mode", train.mode, "Optional check against the dataset mode")
      ->check(CLI::IsMember({"survival", "classify"}));
  train_cmd->add_option("--max-depth", train.max_depth, "Maximum tree depth");
  train_cmd->add_option("--min-samples-leaf", train.min_samples_leaf, "Minimum samples per leaf");
  train_cmd->add_option("--cp", train.cp, "Complexity penalty per split, or 'auto'");
  train_cmd->add_option("--local-search-rounds", train.local_search_rounds, "Passes of local search (0 = greedy)");
  train_cmd->add_option("--max-thresholds", train.max_thresholds, "Candidate thresholds per feature (0 = all)");
  train_cmd->add_option("--class-loss", train.class_loss, "Classification objective: misclassification or gini")
      ->check(CLI::IsMember({"misclassification", "gini"}));
  train_cmd->add_option("--validation-fraction", train.validation_fraction, "Held-out share of drives for --cp auto");

  EvaluateArgs evaluate;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score test sets and write the evaluation table");
  evaluate_cmd->add_option("--class-tree", evaluate.class_tree, "Classification tree JSON")->transform(to_absolute());
  evaluate_cmd->add_option("--class-dataset", evaluate.class_dataset, "Classification dataset sidecar")
      ->transform(to_absolute());
  evaluate_cmd->add_option("--survival-tree", evaluate.survival_tree, "Survival tree JSON")->transform(to_absolute());
  evaluate_cmd->add_option("--survival-dataset", evaluate.survival_dataset, "Survival dataset sidecar")
      ->transform(to_absolute());
  evaluate_cmd->add_option("--horizons", evaluate.horizons, "Survival horizons in days")->delimiter(',');
  evaluate_cmd->add_option("--threshold", evaluate.threshold, "Operating threshold (positive iff score > threshold)");

  ExportArgs exp;
  auto* export_cmd = app.add_subcommand("export", "Render a tree as DOT or per-leaf KM curves");
  export_cmd->add_option("--tree", exp.tree, "Tree JSON")->required()->transform(to_absolute());
  export_cmd->add_option("--format", exp.format, "dot or km-csv");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic fleet with planted hazard rules");
  synth_cmd->add_option("--spec", synth.spec, "Fleet spec JSON")->transform(to_absolute());
  synth_cmd->add_flag("--reference", synth.reference, "Use the built-in reference fleet");
  synth_cmd->add_option("--output", synth.output, "Fleet CSV file name under --out-dir");
  synth_cmd->add_option("--n-drives", synth.n_drives, "Override the spec's fleet size");
  synth_cmd->add_option("--days", synth.days, "Override the spec's number of days");

  ReplayArgs replay;
  auto* replay_cmd = app.add_subcommand("replay", "Rerun the command recorded in a manifest");
  replay_cmd->add_option("manifest", replay.manifest, "Manifest JSON")->required()->transform(to_absolute());
  replay_cmd->add_flag("--check", replay.check, "Compare outputs with the recorded digests");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  log::set_verbose(common.verbose);

  const CLI::App* sub = app.get_subcommands().front();
  RunContext ctx;
  ctx.command = sub->get_name();
  ctx.out_dir = absolute_path(common.out_dir);
  ctx.seed = common.seed;
  ctx.threads = common.threads;
  const std::string started = utc_now();
  try {
    if (sub == replay_cmd) {
      const CLI::Option* out_opt = app.get_option("--out-dir");
      return cmd_replay(replay, out_opt->count() > 0 ? std::optional<std::string>(ctx.out_dir.string())
                                                     : std::nullopt);
    }
    fs::create_directories(ctx.out_dir);
    if (sub == ingest_cmd) {
      cmd_ingest(ingest, ctx);
    } else if (sub == dataset_cmd) {
      cmd_dataset(dataset, ctx);
    } else if (sub == train_cmd) {
      cmd_train(train, ctx);
    } else if (sub == evaluate_cmd) {
      cmd_evaluate(evaluate, ctx);
    } else if (sub == export_cmd) {
      cmd_export(exp, ctx);
    } else if (sub == synth_cmd) {
      cmd_synth(synth, app.get_option("--seed")->count() > 0, ctx);
    }
    write_manifest(ctx, app, *sub, started);
  } catch (const std::exception& e) {
    print_error(e, ctx);
    return 1;
  }
  return 0;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace smarttree::cli
