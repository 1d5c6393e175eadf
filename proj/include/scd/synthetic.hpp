#pragma once

// Synthetic benchmark table with planted structure:
//   age      numeric, 18..70
//   A        categorical a0..a7, skewed towards low levels
//   B        categorical b0..b3, always b{A/2}
//   C        categorical c0..c5
//   hours    numeric, 20..60, longer for higher A
//   E        categorical e0..e2, tied to age
//   label    "yes" when index(A) + 2*[hours >= 45] + [C in {c0, c1}] >= 6
// B is a deterministic function of A, so a uniformly random row breaks the
// rule with probability 1 - 1/|B| = 0.75.

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "scd/nn.hpp"
#include "scd/tabular.hpp"

namespace scd {

struct SyntheticSpec {
  std::size_t rows = 2000;
  std::uint64_t seed = 7;
};

inline const std::string synthetic_label = "label";
inline const std::set<std::string> synthetic_numeric = {"age", "hours"};

inline std::size_t synthetic_level(const std::string& value) { return std::stoul(value.substr(1)); }

/// The planted rule: B's level is half of A's level.
inline bool satisfies_rule(const std::string& a, const std::string& b) {
  return synthetic_level(b) == synthetic_level(a) / 2;
}

inline CsvTable make_synthetic(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::discrete_distribution<int> a_dist({14, 13, 12, 11, 10, 9, 8, 7});
  std::discrete_distribution<int> c_dist({10, 9, 8, 8, 7, 6});
  CsvTable t;
  t.header = {"age", "A", "B", "C", "hours", "E", synthetic_label};
  for (std::size_t i = 0; i < spec.rows; ++i) {
    const int age = 18 + int(std::floor(unit(rng) * 53.0));
    const int a = a_dist(rng);
    const int b = a / 2;
    const int c = c_dist(rng);
    const double hours_mean = 30.0 + 2.5 * a;
    const int hours = std::clamp(int(std::lround(hours_mean + 8.0 * (unit(rng) + unit(rng) - 1.0) * 1.5)), 20, 60);
    int e;
    const double u = unit(rng);
    if (age < 35) e = u < 0.8 ? 0 : (u < 0.9 ? 1 : 2);
    else if (age < 55) e = u < 0.1 ? 0 : (u < 0.85 ? 1 : 2);
    else e = u < 0.1 ? 0 : (u < 0.25 ? 1 : 2);
    const int score = a + (hours >= 45 ? 2 : 0) + (c <= 1 ? 1 : 0);
    t.records.push_back({std::to_string(age), "a" + std::to_string(a), "b" + std::to_string(b), "c" + std::to_string(c),
                         std::to_string(hours), "e" + std::to_string(e), score >= 6 ? "yes" : "no"});
  }
  return t;
}

/// Fraction of encoded rows whose A and B columns break the planted rule.
inline double rule_violation_rate(const std::vector<EncodedRow>& rows, const TableSchema& schema) {
  const auto a = schema.index_of("A"), b = schema.index_of("B");
  if (!a || !b) throw Error("rule_violation_rate: schema lacks columns A and B");
  if (rows.empty()) return 0.0;
  std::size_t bad = 0;
  for (const EncodedRow& r : rows)
    bad += !satisfies_rule(schema.vocabulary.value(*a, r[*a]), schema.vocabulary.value(*b, r[*b]));
  return double(bad) / double(rows.size());
}

}  // namespace scd
