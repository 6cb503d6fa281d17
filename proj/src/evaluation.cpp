#include "smarttree/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "smarttree/io.hpp"

namespace smarttree {

void ScoredSet::add(double score, bool label, std::string serial, Day date) {
  scores.push_back(score);
  labels.push_back(label);
  serials.push_back(std::move(serial));
  dates.push_back(date);
}

std::int64_t ScoredSet::positives() const { return std::count(labels.begin(), labels.end(), true); }

ScoredSet class_scores(const Tree& tree, std::span<const ClassSample> samples) {
  if (tree.kind != TreeKind::classification) throw InvalidConfig("class_scores needs a classification tree");
  ScoredSet out;
  for (const auto& s : samples) {
    out.add(std::get<ClassLeaf>(predict(tree, s.features)).probability, s.label, s.serial, s.snapshot_date);
  }
  return out;
}

std::optional<bool> label_at_horizon(const SurvivalSample& sample, int horizon_days) {
  if (sample.event) return sample.duration_days <= horizon_days;
  if (sample.duration_days >= horizon_days) return false;
  return std::nullopt;
}

ScoredSet survival_scores_at_horizon(const Tree& tree, std::span<const SurvivalSample> samples, int horizon_days) {
  if (tree.kind != TreeKind::survival) throw InvalidConfig("survival scores need a survival tree");
  if (horizon_days < 1) throw InvalidHorizon("horizon must be at least 1 day");
  if (horizon_days > tree.window_days) {
    throw HorizonExceedsWindow("horizon " + std::to_string(horizon_days) + " exceeds the " +
                               std::to_string(tree.window_days) + "-day training window");
  }
  ScoredSet out;
  for (const auto& s : samples) {
    const auto label = label_at_horizon(s, horizon_days);
    if (!label) continue;
    const auto& leaf = std::get<SurvivalLeaf>(predict(tree, s.features));
    out.add(1.0 - survival_at(leaf.km, horizon_days), *label, s.serial, s.snapshot_date);
  }
  return out;
}

std::vector<RocPoint> roc_curve(const ScoredSet& scored) {
  const std::int64_t pos = scored.positives();
  const std::int64_t neg = scored.negatives();
  if (pos == 0 || neg == 0) throw DegenerateLabels("ROC needs both failing and healthy samples");
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scored.scores[a] > scored.scores[b]; });

  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  std::vector<RocPoint> roc;
  roc.push_back({0.0, 0.0, scored.scores[order.front()], 0, 0});
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scored.scores[order[i]];
    for (; i < order.size() && scored.scores[order[i]] == s; ++i) (scored.labels[order[i]] ? tp : fp) += 1;
    const double next = i < order.size() ? scored.scores[order[i]] : std::nextafter(s, -INFINITY);
    roc.push_back({static_cast<double>(fp) / q, static_cast<double>(tp) / p, next, tp, fp});
  }
  return roc;
}

double auc(const ScoredSet& scored) {
  const auto roc = roc_curve(scored);
  std::int64_t twice_area = 0;  // sum of dFP * (TP_i + TP_{i-1}), all integers
  for (std::size_t i = 1; i < roc.size(); ++i) twice_area += (roc[i].fp - roc[i - 1].fp) * (roc[i].tp + roc[i - 1].tp);
  const double pq = static_cast<double>(scored.positives()) * static_cast<double>(scored.negatives());
  return static_cast<double>(twice_area) / (2.0 * pq);
}

double Confusion::accuracy() const {
  const auto n = tp + fp + tn + fn;
  return n == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(n);
}
double Confusion::sensitivity() const {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}
double Confusion::false_alarm_rate() const {
  return fp + tn == 0 ? 0.0 : static_cast<double>(fp) / static_cast<double>(fp + tn);
}

Confusion confusion_at(const ScoredSet& scored, double threshold) {
  Confusion c;
  c.threshold = threshold;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    const bool predicted = scored.scores[i] > threshold;
    if (scored.labels[i]) {
      (predicted ? c.tp : c.fn) += 1;
    } else {
      (predicted ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

double select_threshold(std::span<const RocPoint> roc) {
  if (roc.empty()) throw DegenerateLabels("empty ROC curve");
  const std::int64_t pos = roc.back().tp;
  const std::int64_t neg = roc.back().fp;
  // J * P * N = TP * N - FP * P, compared exactly.
  std::size_t best = 0;
  __int128 best_j = static_cast<__int128>(roc[0].tp) * neg - static_cast<__int128>(roc[0].fp) * pos;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    const __int128 j = static_cast<__int128>(roc[i].tp) * neg - static_cast<__int128>(roc[i].fp) * pos;
    if (j > best_j || (j == best_j && roc[i].fp < roc[best].fp)) {
      best = i;
      best_j = j;
    }
  }
  return roc[best].threshold;
}

namespace {

EvalRow make_row(std::string model, int horizon, const ScoredSet& scored, double threshold) {
  EvalRow row;
  row.model = std::move(model);
  row.horizon_days = horizon;
  row.n = scored.size();
  row.positives = scored.positives();
  row.roc = roc_curve(scored);
  row.auc = auc(scored);
  row.at_threshold = confusion_at(scored, threshold);
  row.at_youden = confusion_at(scored, select_threshold(row.roc));
  return row;
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

nlohmann::json confusion_json(const Confusion& c) {
  return {{"threshold", c.threshold}, {"tp", c.tp},
          {"fp", c.fp},               {"tn", c.tn},
          {"fn", c.fn},               {"accuracy", c.accuracy()},
          {"sensitivity", c.sensitivity()}, {"false_alarm_rate", c.false_alarm_rate()}};
}

}  // namespace

EvalReport evaluate_table(const Tree* class_tree, std::span<const ClassSample> class_samples,
                          const Tree* survival_tree, std::span<const SurvivalSample> survival_samples,
                          std::span<const int> horizons, double threshold, int class_horizon) {
  EvalReport report;
  report.threshold = threshold;
  if (class_tree) report.rows.push_back(make_row("OCT", class_horizon, class_scores(*class_tree, class_samples), threshold));
  if (survival_tree) {
    for (int h : horizons) {
      report.rows.push_back(make_row("OST", h, survival_scores_at_horizon(*survival_tree, survival_samples, h), threshold));
    }
  }
  return report;
}

std::string table2_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "Metric";
  for (const auto& r : report.rows) out << ',' << r.column();
  out << '\n';
  auto line = [&](const char* name, auto&& get) {
    out << name;
    for (const auto& r : report.rows) out << ',' << fixed3(get(r));
    out << '\n';
  };
  line("AUC", [](const EvalRow& r) { return r.auc; });
  line("Accuracy", [](const EvalRow& r) { return r.at_threshold.accuracy(); });
  line("Sensitivity", [](const EvalRow& r) { return r.at_threshold.sensitivity(); });
  line("False Alarm Rate", [](const EvalRow& r) { return r.at_threshold.false_alarm_rate(); });
  return out.str();
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "# " << kLabelNote << '\n';
  out << "model,horizon_days,n,positives,auc,threshold,tp,fp,tn,fn,accuracy,sensitivity,false_alarm_rate,"
         "youden_threshold,youden_sensitivity,youden_false_alarm_rate\n";
  for (const auto& r : report.rows) {
    const auto& c = r.at_threshold;
    out << r.model << ',' << r.horizon_days << ',' << r.n << ',' << r.positives << ',' << io::format_double(r.auc)
        << ',' << io::format_double(c.threshold) << ',' << c.tp << ',' << c.fp << ',' << c.tn << ',' << c.fn << ','
        << io::format_double(c.accuracy()) << ',' << io::format_double(c.sensitivity()) << ','
        << io::format_double(c.false_alarm_rate()) << ',' << io::format_double(r.at_youden.threshold) << ','
        << io::format_double(r.at_youden.sensitivity()) << ',' << io::format_double(r.at_youden.false_alarm_rate())
        << '\n';
  }
  return out.str();
}

nlohmann::json report_json(const EvalReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"model", r.model},
                    {"horizon_days", r.horizon_days},
                    {"n", r.n},
                    {"positives", r.positives},
                    {"auc", r.auc},
                    {"at_threshold", confusion_json(r.at_threshold)},
                    {"at_youden", confusion_json(r.at_youden)}});
  }
  return {{"threshold", report.threshold}, {"label_note", kLabelNote}, {"rows", std::move(rows)}};
}

void write_roc_csv(std::ostream& out, std::span<const RocPoint> roc) {
  out << "threshold,far,sensitivity\n";
  for (const auto& p : roc) {
    out << io::format_double(p.threshold) << ',' << io::format_double(p.false_alarm_rate) << ','
        << io::format_double(p.sensitivity) << '\n';
  }
}

}  // namespace smarttree
