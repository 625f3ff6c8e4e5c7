#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "caml/corpus.hpp"
#include "caml/error.hpp"
#include "caml/numerics.hpp"

namespace caml {

// Scores and 0/1 truth for D documents x |L| labels.
struct PredictionMatrix {
  Matrix scores;
  Matrix truth;
  double threshold = 0.5;

  std::size_t docs() const { return scores.rows(); }
  std::size_t labels() const { return scores.cols(); }

  void validate() const {
    if (!scores.same_shape(truth)) throw DataError("PredictionMatrix: scores/truth shape mismatch");
    if (!all_finite(scores.values())) throw NumericalError("PredictionMatrix: non-finite score");
  }
  bool predicted(std::size_t d, std::size_t l) const { return scores(d, l) >= threshold; }
  bool positive(std::size_t d, std::size_t l) const { return truth(d, l) > 0.5; }
};

struct Counts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

inline double harmonic_mean(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline Prf prf_from_counts(const Counts& c) {
  Prf out;
  out.precision = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
  out.recall = safe_ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  out.f1 = harmonic_mean(out.precision, out.recall);
  return out;
}

inline Counts label_counts(const PredictionMatrix& pm, std::size_t l) {
  Counts c;
  for (std::size_t d = 0; d < pm.docs(); ++d) {
    const bool p = pm.predicted(d, l), t = pm.positive(d, l);
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// Pooled counts over the given label columns (all labels when empty).
inline Prf micro_prf(const PredictionMatrix& pm, const std::vector<std::size_t>& columns = {}) {
  pm.validate();
  Counts total;
  auto add = [&](std::size_t l) {
    const Counts c = label_counts(pm, l);
    total.tp += c.tp;
    total.fp += c.fp;
    total.fn += c.fn;
    total.tn += c.tn;
  };
  if (columns.empty()) {
    for (std::size_t l = 0; l < pm.labels(); ++l) add(l);
  } else {
    for (auto l : columns) add(l);
  }
  return prf_from_counts(total);
}

struct MacroPrf {
  Prf prf;                  // F1 = harmonic mean of macro-P and macro-R
  double mean_label_f1 = 0.0;  // mean of per-label F1, reported alongside
};

// Unweighted means over all labels; labels with zero denominators
// contribute 0.
inline MacroPrf macro_prf(const PredictionMatrix& pm) {
  pm.validate();
  MacroPrf out;
  const std::size_t nl = pm.labels();
  if (nl == 0) return out;
  double p = 0.0, r = 0.0, f = 0.0;
  for (std::size_t l = 0; l < nl; ++l) {
    const Prf x = prf_from_counts(label_counts(pm, l));
    p += x.precision;
    r += x.recall;
    f += x.f1;
  }
  out.prf.precision = p / static_cast<double>(nl);
  out.prf.recall = r / static_cast<double>(nl);
  out.prf.f1 = harmonic_mean(out.prf.precision, out.prf.recall);
  out.mean_label_f1 = f / static_cast<double>(nl);
  return out;
}

// Mann-Whitney AUC of (score, is_positive) pairs; tied positive/negative
// pairs count 1/2. Absent when either class is empty.
inline std::optional<double> rank_auc(std::vector<std::pair<double, bool>> items) {
  std::int64_t pos = 0, neg = 0;
  for (const auto& it : items) (it.second ? pos : neg) += 1;
  if (pos == 0 || neg == 0) return std::nullopt;
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // Twice the rank sum of positives, so tie-averaged ranks stay integral.
  std::int64_t twice_rank_sum = 0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j < items.size() && items[j].first == items[i].first) ++j;
    const auto first = static_cast<std::int64_t>(i + 1), last = static_cast<std::int64_t>(j);
    std::int64_t pos_in_group = 0;
    for (std::size_t t = i; t < j; ++t) pos_in_group += items[t].second ? 1 : 0;
    twice_rank_sum += pos_in_group * (first + last);
    i = j;
  }
  const std::int64_t twice_u = twice_rank_sum - pos * (pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

inline std::optional<double> label_auc(const PredictionMatrix& pm, std::size_t l) {
  std::vector<std::pair<double, bool>> items;
  items.reserve(pm.docs());
  for (std::size_t d = 0; d < pm.docs(); ++d) items.emplace_back(pm.scores(d, l), pm.positive(d, l));
  return rank_auc(std::move(items));
}

struct AucResult {
  std::optional<double> macro;  // mean over labels with both classes present
  std::optional<double> micro;  // all (doc, label) pairs pooled
};

inline AucResult auc(const PredictionMatrix& pm) {
  pm.validate();
  AucResult out;
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t l = 0; l < pm.labels(); ++l) {
    if (auto a = label_auc(pm, l)) {
      total += *a;
      ++counted;
    }
  }
  if (counted > 0) out.macro = total / static_cast<double>(counted);
  std::vector<std::pair<double, bool>> all;
  all.reserve(pm.scores.size());
  for (std::size_t d = 0; d < pm.docs(); ++d)
    for (std::size_t l = 0; l < pm.labels(); ++l) all.emplace_back(pm.scores(d, l), pm.positive(d, l));
  out.micro = rank_auc(std::move(all));
  return out;
}

// Label indices of a score row ordered by descending score, ties by
// ascending index.
inline std::vector<std::size_t> rank_labels(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

inline double precision_at_n(const PredictionMatrix& pm, std::size_t n) {
  pm.validate();
  if (n == 0 || n > pm.labels()) {
    throw UsageError("precision@n: n=" + std::to_string(n) + " must be in [1, " +
                     std::to_string(pm.labels()) + "]");
  }
  if (pm.docs() == 0) return 0.0;
  std::int64_t hits = 0;
  for (std::size_t d = 0; d < pm.docs(); ++d) {
    const auto order = rank_labels(pm.scores.row(d));
    for (std::size_t i = 0; i < n; ++i) hits += pm.positive(d, order[i]) ? 1 : 0;
  }
  return static_cast<double>(hits) / (static_cast<double>(n) * static_cast<double>(pm.docs()));
}

// ---------------------------------------------------------------------------
// Reports

struct LabelRow {
  std::string label;
  std::string kind;
  std::int64_t support = 0;
  Counts counts;
  Prf prf;
  std::optional<double> auc;
};

struct EvalReport {
  std::size_t docs = 0;
  std::size_t labels = 0;
  double threshold = 0.5;
  Prf micro;
  MacroPrf macro;
  AucResult auc;
  std::map<std::size_t, double> precision_at;
  std::optional<double> micro_f1_diagnosis;
  std::optional<double> micro_f1_procedure;
  std::vector<LabelRow> per_label;
};

inline std::vector<std::size_t> default_precision_ns() { return {5, 8, 15}; }

// `space` supplies label names and kinds; it may be null, in which case
// labels are named by index and no kind breakdown is produced. Values of n
// above |L| are skipped.
inline EvalReport evaluate(const PredictionMatrix& pm, const LabelSpace* space = nullptr,
                           const std::vector<std::size_t>& ns = default_precision_ns()) {
  pm.validate();
  if (space && space->size() != pm.labels()) throw DataError("evaluate: label space size mismatch");
  EvalReport r;
  r.docs = pm.docs();
  r.labels = pm.labels();
  r.threshold = pm.threshold;
  r.micro = micro_prf(pm);
  r.macro = macro_prf(pm);
  r.auc = auc(pm);
  for (auto n : ns)
    if (n >= 1 && n <= pm.labels()) r.precision_at[n] = precision_at_n(pm, n);
  if (space) {
    std::vector<std::size_t> diag, proc;
    for (std::size_t l = 0; l < space->size(); ++l)
      (space->kind(l) == LabelKind::Procedure ? proc : diag).push_back(l);
    if (!diag.empty()) r.micro_f1_diagnosis = micro_prf(pm, diag).f1;
    if (!proc.empty()) r.micro_f1_procedure = micro_prf(pm, proc).f1;
  }
  for (std::size_t l = 0; l < pm.labels(); ++l) {
    LabelRow row;
    row.label = space ? space->labels[l] : std::to_string(l);
    row.kind = space ? std::string(to_string(space->kind(l))) : "";
    row.counts = label_counts(pm, l);
    row.support = row.counts.tp + row.counts.fn;
    row.prf = prf_from_counts(row.counts);
    row.auc = label_auc(pm, l);
    r.per_label.push_back(std::move(row));
  }
  return r;
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const EvalReport& r) {
  using nlohmann::json;
  json j;
  j["docs"] = r.docs;
  j["labels"] = r.labels;
  j["threshold"] = r.threshold;
  j["micro"] = {{"precision", r.micro.precision}, {"recall", r.micro.recall}, {"f1", r.micro.f1}};
  j["macro"] = {{"precision", r.macro.prf.precision},
                {"recall", r.macro.prf.recall},
                {"f1", r.macro.prf.f1},
                {"mean_label_f1", r.macro.mean_label_f1}};
  j["auc"] = {{"macro", optional_json(r.auc.macro)}, {"micro", optional_json(r.auc.micro)}};
  json pat = json::object();
  for (const auto& [n, v] : r.precision_at) pat[std::to_string(n)] = v;
  j["precision_at"] = pat;
  j["micro_f1_by_kind"] = {{"diagnosis", optional_json(r.micro_f1_diagnosis)},
                           {"procedure", optional_json(r.micro_f1_procedure)}};
  json rows = json::array();
  for (const auto& row : r.per_label) {
    rows.push_back({{"label", row.label},
                    {"kind", row.kind},
                    {"support", row.support},
                    {"tp", row.counts.tp},
                    {"fp", row.counts.fp},
                    {"fn", row.counts.fn},
                    {"precision", row.prf.precision},
                    {"recall", row.prf.recall},
                    {"f1", row.prf.f1},
                    {"auc", optional_json(row.auc)}});
  }
  j["per_label"] = rows;
  return j;
}

inline std::optional<double> optional_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.docs = j.at("docs").get<std::size_t>();
    r.labels = j.at("labels").get<std::size_t>();
    r.threshold = j.at("threshold").get<double>();
    r.micro = {j.at("micro").at("precision"), j.at("micro").at("recall"), j.at("micro").at("f1")};
    const auto& m = j.at("macro");
    r.macro.prf = {m.at("precision"), m.at("recall"), m.at("f1")};
    r.macro.mean_label_f1 = m.at("mean_label_f1");
    r.auc.macro = optional_from_json(j.at("auc").at("macro"));
    r.auc.micro = optional_from_json(j.at("auc").at("micro"));
    for (const auto& [k, v] : j.at("precision_at").items()) r.precision_at[std::stoul(k)] = v.get<double>();
    r.micro_f1_diagnosis = optional_from_json(j.at("micro_f1_by_kind").at("diagnosis"));
    r.micro_f1_procedure = optional_from_json(j.at("micro_f1_by_kind").at("procedure"));
    for (const auto& row : j.at("per_label")) {
      LabelRow lr;
      lr.label = row.at("label");
      lr.kind = row.at("kind");
      lr.support = row.at("support");
      lr.counts.tp = row.at("tp");
      lr.counts.fp = row.at("fp");
      lr.counts.fn = row.at("fn");
      lr.prf = {row.at("precision"), row.at("recall"), row.at("f1")};
      lr.auc = optional_from_json(row.at("auc"));
      r.per_label.push_back(std::move(lr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("evaluation report: ") + e.what());
  }
  return r;
}

inline std::string format_table(const EvalReport& r) {
  std::ostringstream os;
  auto num = [](const std::optional<double>& v) {
    if (!v) return std::string("   -  ");
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << *v;
    return s.str();
  };
  os << "docs=" << r.docs << " labels=" << r.labels << " threshold=" << r.threshold << "\n";
  os << "            Macro   Micro\n";
  os << "AUC        " << num(r.auc.macro) << "  " << num(r.auc.micro) << "\n";
  os << "Precision  " << num(r.macro.prf.precision) << "  " << num(r.micro.precision) << "\n";
  os << "Recall     " << num(r.macro.prf.recall) << "  " << num(r.micro.recall) << "\n";
  os << "F1         " << num(r.macro.prf.f1) << "  " << num(r.micro.f1) << "\n";
  os << "F1 (mean of per-label) " << num(r.macro.mean_label_f1) << "\n";
  os << "Micro-F1 diag " << num(r.micro_f1_diagnosis) << "  proc " << num(r.micro_f1_procedure) << "\n";
  for (const auto& [n, v] : r.precision_at) os << "P@" << n << "  " << num(v) << "\n";
  return os.str();
}

}  // namespace caml
