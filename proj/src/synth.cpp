#include "smarttree/synth.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "smarttree/random.hpp"

namespace smarttree {

using nlohmann::json;

bool Condition::holds(double x) const {
  switch (op) {
    case Op::lt: return x < value;
    case Op::le: return x <= value;
    case Op::gt: return x > value;
    case Op::ge: return x >= value;
    case Op::eq: return x == value;
  }
  return false;
}

bool HazardRule::matches(const SmartValues& values) const {
  return std::all_of(when.begin(), when.end(), [&](const Condition& c) {
    const auto x = values.get(c.key);
    return x && c.holds(*x);
  });
}

namespace {

constexpr std::pair<const char*, FeatureGenerator::Process> kProcesses[] = {
    {"constant", FeatureGenerator::Process::constant},
    {"drift", FeatureGenerator::Process::drift},
    {"jump", FeatureGenerator::Process::jump}};

constexpr std::pair<const char*, Condition::Op> kOps[] = {
    {"<", Condition::Op::lt}, {"<=", Condition::Op::le}, {">", Condition::Op::gt},
    {">=", Condition::Op::ge}, {"==", Condition::Op::eq}};

template <typename E, std::size_t N>
const char* name_of(const std::pair<const char*, E> (&table)[N], E value) {
  for (const auto& [name, v] : table)
    if (v == value) return name;
  return "?";
}

template <typename E, std::size_t N>
E parse_enum(const std::pair<const char*, E> (&table)[N], const std::string& text, const char* what) {
  for (const auto& [name, v] : table)
    if (text == name) return v;
  throw InvalidSpec(std::string("unknown ") + what + " '" + text + "'");
}

SmartKey key_of(const json& j) {
  const auto name = j.get<std::string>();
  const auto key = SmartKey::parse_column(name);
  if (!key) throw InvalidSpec("'" + name + "' is not a SMART column name");
  return *key;
}

json rule_to_json(const HazardRule& r) {
  json when = json::array();
  for (const auto& c : r.when) {
    when.push_back({{"column", c.key.column_name()}, {"op", name_of(kOps, c.op)}, {"value", c.value}});
  }
  return {{"when", std::move(when)}, {"hazard", r.hazard}};
}

double clamp_to_kind(SmartKind kind, double x) {
  return kind == SmartKind::normalized ? std::clamp(x, 1.0, 253.0) : std::max(x, 0.0);
}

std::string serial_for(const FleetSpec& spec, std::size_t index) {
  std::size_t width = 6;
  for (std::size_t n = spec.n_drives; n >= 1000000; n /= 10) ++width;
  auto digits = std::to_string(index);
  return spec.serial_prefix + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

struct Exposure {
  std::vector<std::uint64_t> days, failures;
  std::uint64_t failed_drives = 0;
  explicit Exposure(std::size_t slots) : days(slots, 0), failures(slots, 0) {}
  void merge(const Exposure& o) {
    for (std::size_t i = 0; i < days.size(); ++i) {
      days[i] += o.days[i];
      failures[i] += o.failures[i];
    }
    failed_drives += o.failed_drives;
  }
};

template <typename Emit>
void simulate_drive(const FleetSpec& spec, std::size_t index, Exposure& exposure, Emit&& emit) {
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index)));
  std::vector<double> state;
  for (const auto& g : spec.features) state.push_back(clamp_to_kind(g.key.kind, g.initial));
  const std::string serial = serial_for(spec, index);
  for (int day = 0; day < spec.days; ++day) {
    DriveDaySnapshot s;
    s.date = spec.start_date + day;
    s.serial = serial;
    s.model = spec.model;
    s.capacity_bytes = spec.capacity_bytes;
    for (std::size_t i = 0; i < spec.features.size(); ++i) {
      const auto& g = spec.features[i];
      double value = state[i];
      if (g.process == FeatureGenerator::Process::drift) {
        value = clamp_to_kind(g.key.kind, g.initial + g.rate * day + g.noise_sd * standard_normal(rng));
      }
      s.smart.set(g.key, std::round(value));
    }

    std::size_t slot = spec.rules.size();
    for (std::size_t r = 0; r < spec.rules.size(); ++r) {
      if (spec.rules[r].matches(s.smart)) {
        slot = r;
        break;
      }
    }
    const double hazard = slot < spec.rules.size() ? spec.rules[slot].hazard : spec.baseline_hazard;
    s.failed = bernoulli(rng, hazard);
    ++exposure.days[slot];
    if (s.failed) {
      ++exposure.failures[slot];
      ++exposure.failed_drives;
    }
    const bool stop = s.failed;
    emit(std::move(s));
    if (stop) break;

    for (std::size_t i = 0; i < spec.features.size(); ++i) {
      const auto& g = spec.features[i];
      switch (g.process) {
        case FeatureGenerator::Process::constant:
        case FeatureGenerator::Process::drift:
          break;
        case FeatureGenerator::Process::jump:
          if (bernoulli(rng, g.jump_probability)) state[i] += g.jump_delta;
          break;
      }
      state[i] = clamp_to_kind(g.key.kind, state[i]);
    }
  }
}

PlantedTruth make_truth(const FleetSpec& spec, const Exposure& e) {
  PlantedTruth t;
  t.rules = spec.rules;
  t.baseline_hazard = spec.baseline_hazard;
  t.rule_drive_days = e.days;
  t.rule_failures = e.failures;
  t.drives = spec.n_drives;
  t.failures = e.failed_drives;
  for (auto d : e.days) t.drive_days += d;
  return t;
}

}  // namespace

void FleetSpec::validate() const {
  if (n_drives < 1) throw InvalidSpec("n_drives must be at least 1");
  if (days < 1) throw InvalidSpec("days must be at least 1");
  if (serial_prefix.find_first_of(",\"\n\r") != std::string::npos) throw InvalidSpec("serial_prefix has CSV metacharacters");
  if (model.empty() || model.find_first_of("\n\r") != std::string::npos) throw InvalidSpec("model must be a non-empty line");
  auto probability = [](double p, const std::string& what) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidSpec(what + " must lie in [0, 1]");
  };
  probability(baseline_hazard, "baseline_hazard");
  std::vector<SmartKey> seen;
  for (const auto& g : features) {
    const auto name = g.key.column_name();
    if (std::find(seen.begin(), seen.end(), g.key) != seen.end()) throw InvalidSpec("feature " + name + " listed twice");
    seen.push_back(g.key);
    if (!std::isfinite(g.initial) || !std::isfinite(g.rate) || !std::isfinite(g.jump_delta)) {
      throw InvalidSpec("feature " + name + " has a non-finite parameter");
    }
    if (!(g.noise_sd >= 0.0) || !std::isfinite(g.noise_sd)) throw InvalidSpec("feature " + name + ": noise_sd must be >= 0");
    probability(g.jump_probability, "feature " + name + " jump_probability");
  }
  for (const auto& r : rules) {
    probability(r.hazard, "rule hazard");
    if (r.when.empty()) throw InvalidSpec("rule without conditions");
    for (const auto& c : r.when) {
      if (std::find(seen.begin(), seen.end(), c.key) == seen.end()) {
        throw InvalidSpec("rule references " + c.key.column_name() + ", which is not generated");
      }
      if (!std::isfinite(c.value)) throw InvalidSpec("rule threshold must be finite");
    }
  }
}

std::vector<SmartKey> FleetSpec::keys() const {
  std::vector<SmartKey> out;
  for (const auto& g : features) out.push_back(g.key);
  return out;
}

double FleetSpec::hazard_for(const SmartValues& values) const {
  for (const auto& r : rules)
    if (r.matches(values)) return r.hazard;
  return baseline_hazard;
}

json FleetSpec::to_json() const {
  json feats = json::array();
  for (const auto& g : features) {
    json f{{"column", g.key.column_name()}, {"process", name_of(kProcesses, g.process)}, {"initial", g.initial}};
    if (g.process == FeatureGenerator::Process::drift) {
      f["rate"] = g.rate;
      f["noise_sd"] = g.noise_sd;
    } else if (g.process == FeatureGenerator::Process::jump) {
      f["jump_probability"] = g.jump_probability;
      f["jump_delta"] = g.jump_delta;
    }
    feats.push_back(std::move(f));
  }
  json rs = json::array();
  for (const auto& r : rules) rs.push_back(rule_to_json(r));
  return {{"n_drives", n_drives},
          {"days", days},
          {"start_date", start_date.to_string()},
          {"model", model},
          {"capacity_bytes", capacity_bytes ? json(*capacity_bytes) : json(nullptr)},
          {"serial_prefix", serial_prefix},
          {"baseline_hazard", baseline_hazard},
          {"seed", seed},
          {"features", std::move(feats)},
          {"rules", std::move(rs)}};
}

FleetSpec FleetSpec::from_json(const json& j) {
  try {
    FleetSpec s;
    s.n_drives = j.at("n_drives").get<std::size_t>();
    s.days = j.at("days").get<int>();
    const auto start = Day::parse(j.at("start_date").get<std::string>());
    if (!start) throw InvalidSpec("start_date is not YYYY-MM-DD");
    s.start_date = *start;
    s.model = j.value("model", s.model);
    if (j.contains("capacity_bytes")) {
      s.capacity_bytes = j["capacity_bytes"].is_null() ? std::nullopt
                                                        : std::optional(j["capacity_bytes"].get<std::uint64_t>());
    }
    s.serial_prefix = j.value("serial_prefix", s.serial_prefix);
    s.baseline_hazard = j.at("baseline_hazard").get<double>();
    s.seed = j.value("seed", std::uint64_t{0});
    for (const auto& f : j.at("features")) {
      FeatureGenerator g;
      g.key = key_of(f.at("column"));
      g.process = parse_enum(kProcesses, f.at("process").get<std::string>(), "process");
      g.initial = f.value("initial", 0.0);
      g.rate = f.value("rate", 0.0);
      g.noise_sd = f.value("noise_sd", 0.0);
      g.jump_probability = f.value("jump_probability", 0.0);
      g.jump_delta = f.value("jump_delta", 0.0);
      s.features.push_back(g);
    }
    for (const auto& r : j.value("rules", json::array())) {
      HazardRule rule;
      rule.hazard = r.at("hazard").get<double>();
      for (const auto& c : r.at("when")) {
        rule.when.push_back(Condition{key_of(c.at("column")), parse_enum(kOps, c.at("op").get<std::string>(), "operator"),
                                      c.at("value").get<double>()});
      }
      s.rules.push_back(std::move(rule));
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw InvalidSpec(std::string("malformed fleet spec: ") + e.what());
  }
}

std::vector<SmartKey> PlantedTruth::features() const {
  std::vector<SmartKey> out;
  for (const auto& r : rules)
    for (const auto& c : r.when)
      if (std::find(out.begin(), out.end(), c.key) == out.end()) out.push_back(c.key);
  return out;
}

json PlantedTruth::to_json() const {
  json rs = json::array();
  for (std::size_t i = 0; i < rules.size(); ++i) {
    auto r = rule_to_json(rules[i]);
    r["drive_days"] = rule_drive_days[i];
    r["failures"] = rule_failures[i];
    rs.push_back(std::move(r));
  }
  json feats = json::array();
  for (const auto& k : features()) feats.push_back(k.column_name());
  return {{"schema", "smarttree.truth"},
          {"planted_features", std::move(feats)},
          {"rules", std::move(rs)},
          {"baseline", {{"hazard", baseline_hazard}, {"drive_days", rule_drive_days.back()}, {"failures", rule_failures.back()}}},
          {"drives", drives},
          {"failed_drives", failures},
          {"drive_days", drive_days}};
}

Fleet generate_fleet(const FleetSpec& spec, int threads) {
  spec.validate();
  const std::size_t slots = spec.rules.size() + 1;
  const auto workers = static_cast<std::size_t>(std::clamp<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), 1, spec.n_drives));
  std::vector<std::vector<DriveDaySnapshot>> parts(workers);
  std::vector<Exposure> exposures(workers, Exposure(slots));
  auto run = [&](std::size_t w) {
    const std::size_t lo = spec.n_drives * w / workers, hi = spec.n_drives * (w + 1) / workers;
    for (std::size_t i = lo; i < hi; ++i) {
      simulate_drive(spec, i, exposures[w], [&](DriveDaySnapshot&& s) { parts[w].push_back(std::move(s)); });
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  Fleet fleet;
  Exposure total(slots);
  for (std::size_t w = 0; w < workers; ++w) {
    total.merge(exposures[w]);
    fleet.snapshots.insert(fleet.snapshots.end(), std::make_move_iterator(parts[w].begin()),
                           std::make_move_iterator(parts[w].end()));
  }
  fleet.truth = make_truth(spec, total);
  return fleet;
}

PlantedTruth write_fleet_csv(const FleetSpec& spec, std::ostream& out) {
  spec.validate();
  const auto keys = spec.keys();
  const auto schema = SchemaMap::for_keys(keys);
  out << format_header(schema) << '\n';
  Exposure exposure(spec.rules.size() + 1);
  for (std::size_t i = 0; i < spec.n_drives; ++i) {
    simulate_drive(spec, i, exposure, [&](DriveDaySnapshot&& s) { out << format_row(s, schema) << '\n'; });
  }
  return make_truth(spec, exposure);
}

FleetSpec reference_fleet_spec(std::uint64_t seed) {
  FleetSpec s;
  s.seed = seed;
  s.baseline_hazard = kReferenceBaselineHazard;
  const SmartKey r5{5, SmartKind::raw}, n187{187, SmartKind::normalized}, n3{3, SmartKind::normalized};
  FeatureGenerator g5{r5, FeatureGenerator::Process::jump, 0.0, 0.0, 0.0, 0.002, 8.0};
  FeatureGenerator g187{n187, FeatureGenerator::Process::jump, 100.0, 0.0, 0.0, 0.002, -1.0};
  FeatureGenerator g3{n3, FeatureGenerator::Process::drift, 95.0, 0.0, 1.0, 0.0, 0.0};
  s.features = {g5, g187, g3};
  s.rules = {HazardRule{{Condition{r5, Condition::Op::ge, 1.0}, Condition{n187, Condition::Op::lt, 100.0}},
                        kReferenceRuleMultiplier * kReferenceBaselineHazard}};
  return s;
}

Fleet reference_rule_fleet(std::uint64_t seed) { return generate_fleet(reference_fleet_spec(seed)); }

}  // namespace smarttree
