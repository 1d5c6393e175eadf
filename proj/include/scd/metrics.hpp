#pragma once

// Validity, proximity, diversity and plausibility scores, plus report assembly.

#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scd/classifier.hpp"
#include "scd/embedding.hpp"
#include "scd/plausibility.hpp"
#include "scd/tabular.hpp"

namespace scd {

inline void require_rows(const std::vector<EncodedRow>& rows, const char* what) {
  if (rows.empty()) throw Error(std::string(what) + ": empty counterfactual list");
}

/// Fraction of rows the classifier assigns to `target`.
inline double validity_score(const std::vector<EncodedRow>& rows, const ClassifierNet& f, std::size_t target,
                             const EmbeddingDictionary& dict) {
  require_rows(rows, "validity_score");
  const auto pred = predict_classes(rows, f, dict);
  std::size_t hits = 0;
  for (std::size_t p : pred) hits += p == target;
  return double(hits) / double(rows.size());
}

struct ProximityScore {
  double match_fraction = 0.0;     // 1 - mean mismatch; the reported proximity
  double raw_mean_distance = 0.0;  // mean mismatch to the input
};

inline ProximityScore proximity_score(const std::vector<EncodedRow>& rows, const EncodedRow& x) {
  require_rows(rows, "proximity_score");
  double acc = 0.0;
  for (const EncodedRow& r : rows) acc += mismatch_distance(r, x);
  const double mean = acc / double(rows.size());
  return {1.0 - mean, mean};
}

/// Mean pairwise mismatch; 0 for fewer than two rows.
inline double diversity_score(const std::vector<EncodedRow>& rows) {
  const std::size_t n = rows.size();
  if (n < 2) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) acc += mismatch_distance(rows[i], rows[j]);
  return 2.0 * acc / (double(n) * double(n - 1));
}

/// Mean negative log-likelihood under an autoregressive model; lower is better.
inline double plausibility_score(const std::vector<EncodedRow>& rows, const ARPlausibilityModel& model) {
  require_rows(rows, "plausibility_score");
  const auto nll = model.nll(rows);
  double acc = 0.0;
  for (double v : nll) acc += v;
  return acc / double(rows.size());
}

struct MetricSummary {
  std::size_t count = 0;
  double validity = 0.0;
  double proximity = 0.0;
  double raw_mean_distance = 0.0;
  double diversity = 0.0;
  std::optional<double> plausibility_recurrent;
  std::optional<double> plausibility_transformer;
};

struct RowRecord {
  Row row;
  EncodedRow encoded;
  std::size_t predicted = 0;
  bool valid = false;
  std::optional<double> nll_recurrent;
  std::optional<double> nll_transformer;
  double mismatch = 0.0;
};

struct CounterfactualReport {
  std::string method;
  MetricSummary all;
  std::optional<MetricSummary> valid_only;  // empty when no row is valid
  std::vector<RowRecord> rows;
};

struct PlausibilityOracles {
  const ARPlausibilityModel* recurrent = nullptr;
  const ARPlausibilityModel* transformer = nullptr;
};

namespace detail {

inline MetricSummary summarize(const std::vector<const RowRecord*>& recs, std::size_t target) {
  MetricSummary s;
  s.count = recs.size();
  std::vector<EncodedRow> rows;
  double valid = 0.0, mismatch = 0.0, rec = 0.0, tra = 0.0;
  for (const RowRecord* r : recs) {
    rows.push_back(r->encoded);
    valid += r->predicted == target;
    mismatch += r->mismatch;
    if (r->nll_recurrent) rec += *r->nll_recurrent;
    if (r->nll_transformer) tra += *r->nll_transformer;
  }
  const double n = double(recs.size());
  s.validity = valid / n;
  s.raw_mean_distance = mismatch / n;
  s.proximity = 1.0 - s.raw_mean_distance;
  s.diversity = diversity_score(rows);
  if (recs.front()->nll_recurrent) s.plausibility_recurrent = rec / n;
  if (recs.front()->nll_transformer) s.plausibility_transformer = tra / n;
  return s;
}

}  // namespace detail

inline CounterfactualReport evaluate(const std::string& method, const std::vector<EncodedRow>& rows,
                                     const EncodedRow& x, std::size_t target, const ClassifierNet& f,
                                     const EmbeddingDictionary& dict, const TableSchema& schema,
                                     const PlausibilityOracles& oracles = {}) {
  require_rows(rows, "evaluate");
  for (const EncodedRow& r : rows) check_encoded(r, schema);
  check_encoded(x, schema);
  CounterfactualReport report;
  report.method = method;
  const auto pred = predict_classes(rows, f, dict);
  std::vector<double> rec, tra;
  if (oracles.recurrent) rec = oracles.recurrent->nll(rows);
  if (oracles.transformer) tra = oracles.transformer->nll(rows);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    RowRecord r;
    r.row = decode_row(rows[i], schema);
    r.encoded = rows[i];
    r.predicted = pred[i];
    r.valid = pred[i] == target;
    if (!rec.empty()) r.nll_recurrent = rec[i];
    if (!tra.empty()) r.nll_transformer = tra[i];
    r.mismatch = mismatch_distance(rows[i], x);
    report.rows.push_back(std::move(r));
  }
  std::vector<const RowRecord*> all, valid;
  for (const RowRecord& r : report.rows) {
    all.push_back(&r);
    if (r.valid) valid.push_back(&r);
  }
  report.all = detail::summarize(all, target);
  if (!valid.empty()) report.valid_only = detail::summarize(valid, target);
  return report;
}

inline nlohmann::json to_json(const MetricSummary& s) {
  nlohmann::json j = {{"count", s.count},
                      {"validity", s.validity},
                      {"proximity", s.proximity},
                      {"raw_mean_distance", s.raw_mean_distance},
                      {"diversity", s.diversity}};
  j["plausibility_recurrent"] = s.plausibility_recurrent ? nlohmann::json(*s.plausibility_recurrent) : nlohmann::json();
  j["plausibility_transformer"] =
      s.plausibility_transformer ? nlohmann::json(*s.plausibility_transformer) : nlohmann::json();
  return j;
}

inline nlohmann::json to_json(const CounterfactualReport& r) {
  nlohmann::json j = to_json(r.all);
  j["method"] = r.method;
  j["valid_only"] = r.valid_only ? to_json(*r.valid_only) : nlohmann::json{{"empty", true}};
  nlohmann::json rows = nlohmann::json::array();
  for (const RowRecord& rec : r.rows) {
    nlohmann::json x = {{"values", row_text(rec.row)},
                        {"predicted", rec.predicted},
                        {"valid", rec.valid},
                        {"mismatch", rec.mismatch}};
    x["nll_recurrent"] = rec.nll_recurrent ? nlohmann::json(*rec.nll_recurrent) : nlohmann::json();
    x["nll_transformer"] = rec.nll_transformer ? nlohmann::json(*rec.nll_transformer) : nlohmann::json();
    rows.push_back(std::move(x));
  }
  j["rows"] = std::move(rows);
  return j;
}

inline void write_table_header(std::ostream& out) {
  out << std::left << std::setw(24) << "method" << std::right << std::setw(10) << "validity" << std::setw(11)
      << "proximity" << std::setw(11) << "diversity" << std::setw(12) << "nll(rnn)" << std::setw(12) << "nll(tfm)"
      << '\n';
}

inline void write_table_row(std::ostream& out, const std::string& label, const MetricSummary& s) {
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << *v;
    return os.str();
  };
  out << std::left << std::setw(24) << label << std::right << std::fixed << std::setprecision(3) << std::setw(10)
      << s.validity << std::setw(11) << s.proximity << std::setw(11) << s.diversity << std::setw(12)
      << opt(s.plausibility_recurrent) << std::setw(12) << opt(s.plausibility_transformer) << '\n';
  out.unsetf(std::ios::floatfield);
}

}  // namespace scd
