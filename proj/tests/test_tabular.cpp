#include <gtest/gtest.h>

#include <sstream>

#include "helpers.hpp"

using namespace scd;

namespace {

std::vector<std::vector<std::string>> column_records(const std::vector<std::string>& values) {
  std::vector<std::vector<std::string>> out;
  for (const auto& v : values) out.push_back({v});
  return out;
}

// Independent oracle: split the sorted values into equal-count groups and take medians.
std::vector<double> group_medians(std::vector<double> v, std::size_t groups) {
  std::sort(v.begin(), v.end());
  std::vector<double> out;
  const std::size_t per = v.size() / groups;
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<double> part(v.begin() + std::ptrdiff_t(g * per), v.begin() + std::ptrdiff_t((g + 1) * per));
    const std::size_t n = part.size();
    out.push_back(n % 2 ? part[n / 2] : 0.5 * (part[n / 2 - 1] + part[n / 2]));
  }
  return out;
}

}  // namespace

TEST(Binning, EqualFrequencyHalvesWithMedians) {
  const std::vector<double> values = {5, 3, 8, 1, 7, 2, 6, 4};
  const ColumnSchema col = bin_numeric_column("x", values, 2, BinningMode::equal_frequency);
  ASSERT_EQ(col.bin_count(), 2u);
  EXPECT_EQ(col.bin_representatives, group_medians(values, 2));
  for (double v : {1.0, 2.0, 3.0, 4.0}) EXPECT_EQ(detail::bin_of(col.bin_edges, v), 0u) << v;
  for (double v : {5.0, 6.0, 7.0, 8.0}) EXPECT_EQ(detail::bin_of(col.bin_edges, v), 1u) << v;
}

TEST(Binning, SingleBinCoversObservedRange) {
  const ColumnSchema col = bin_numeric_column("x", {3, 9, 4, 1}, 1, BinningMode::equal_frequency);
  ASSERT_EQ(col.bin_count(), 1u);
  EXPECT_EQ(col.bin_edges.front(), 1.0);
  EXPECT_EQ(col.bin_edges.back(), 9.0);
  for (double v : {1.0, 4.0, 9.0}) EXPECT_EQ(detail::bin_of(col.bin_edges, v), 0u);
}

TEST(Binning, TiedValuesMergeBins) {
  const ColumnSchema col = bin_numeric_column("x", {1, 1, 1, 1, 1, 1, 2, 3}, 4, BinningMode::equal_frequency);
  EXPECT_LT(col.bin_count(), 4u);
  EXPECT_TRUE(std::is_sorted(col.bin_edges.begin(), col.bin_edges.end()));
}

TEST(Binning, EqualWidthEdges) {
  const ColumnSchema col = bin_numeric_column("x", {0, 1, 2, 10}, 2, BinningMode::equal_width);
  EXPECT_EQ(col.bin_edges, (std::vector<double>{0, 5, 10}));
}

TEST(Vocabulary, FirstSeenEnumeration) {
  const TableSchema s = infer_schema(column_records({"a", "b", "a"}), {"c"}, {}, 5);
  EXPECT_EQ(s.vocabulary.cardinality(0), 2u);
  EXPECT_EQ(*s.vocabulary.find(0, "a"), 0u);
  EXPECT_EQ(*s.vocabulary.find(0, "b"), 1u);
}

TEST(Schema, RejectsUnparseableNumeric) {
  try {
    infer_schema(column_records({"1", "x"}), {"n"}, {"n"}, 2);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.column(), "n");
  }
}

TEST(Encode, TrainingRowMatchesStoredIds) {
  const CsvTable t = make_synthetic({200, 3});
  const Dataset d = build_dataset(t, synthetic_label, synthetic_numeric, 5);
  for (std::size_t r = 0; r < t.records.size(); ++r) {
    std::vector<std::string> fields = t.records[r];
    fields.pop_back();
    EXPECT_EQ(encode_row(parse_row(fields, d.schema), d.schema), d.rows[r]);
  }
}

TEST(Encode, ClampsBelowAndAbove) {
  const TableSchema s = infer_schema(column_records({"1", "2", "3", "4", "5", "6", "7", "8"}), {"n"}, {"n"}, 2);
  EXPECT_EQ(encode_row({-100.0}, s)[0], 0u);
  EXPECT_EQ(encode_row({100.0}, s)[0], 1u);
}

TEST(Encode, InteriorEdgeGoesToHigherBin) {
  const TableSchema s = infer_schema(column_records({"1", "2", "3", "4", "5", "6", "7", "8"}), {"n"}, {"n"}, 2);
  const double edge = s.columns[0].bin_edges[1];
  EXPECT_EQ(encode_row({edge}, s)[0], 1u);
  EXPECT_EQ(encode_row({std::nextafter(edge, 0.0)}, s)[0], 0u);
}

TEST(Encode, UnknownCategoryNamesColumn) {
  const Dataset d = fixtures::synthetic_dataset();
  Row r = decode_row(d.rows[0], d.schema);
  r[1] = std::string("zz");
  try {
    encode_row(r, d.schema);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.column(), "A");
  }
}

TEST(Decode, CategoricalRowRoundTrips) {
  const TableSchema s = infer_schema({{"x", "p"}, {"y", "q"}, {"z", "p"}}, {"a", "b"}, {}, 5);
  for (const Row& r : {Row{"x", "p"}, Row{"y", "q"}, Row{"z", "q"}}) EXPECT_EQ(decode_row(encode_row(r, s), s), r);
}

TEST(Decode, NumericIdGivesRepresentative) {
  const Dataset d = fixtures::synthetic_dataset();
  const std::size_t age = *d.schema.index_of("age");
  for (std::size_t b = 0; b < d.schema.columns[age].bin_count(); ++b) {
    EncodedRow e = d.rows[0];
    e[age] = b;
    EXPECT_EQ(std::get<double>(decode_row(e, d.schema)[age]), d.schema.columns[age].bin_representatives[b]);
  }
}

// Property: encode(decode(e)) == e for every valid encoded row.
TEST(Decode, EncodeDecodeExactInverseOnAllValidRows) {
  const Dataset d = fixtures::synthetic_dataset();
  const auto cards = d.schema.cardinalities();
  EncodedRow e(cards.size(), 0);
  std::size_t checked = 0;
  while (true) {
    ASSERT_EQ(encode_row(decode_row(e, d.schema), d.schema), e);
    ++checked;
    std::size_t c = 0;
    while (c < e.size() && ++e[c] == cards[c]) e[c++] = 0;
    if (c == e.size()) break;
  }
  std::size_t total = 1;
  for (auto k : cards) total *= k;
  EXPECT_EQ(checked, total);
}

TEST(Mismatch, Values) {
  EXPECT_EQ(mismatch_distance({1, 2, 3, 4}, {1, 2, 3, 4}), 0.0);
  EXPECT_EQ(mismatch_distance({1, 2, 3, 4}, {1, 0, 3, 0}), 0.5);
  EXPECT_EQ(mismatch_distance({1, 2, 3, 4}, {0, 0, 0, 0}), 1.0);
  EXPECT_THROW(mismatch_distance({1}, {1, 2}), Error);
}

TEST(Csv, WriteReadRoundTrip) {
  CsvTable t;
  t.header = {"a", "b"};
  t.records = {{"x, y", "1"}, {"quote \"q\"", "2"}};
  std::stringstream ss;
  write_csv(ss, t);
  const auto rows = parse_csv(ss);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1], t.records[0]);
  EXPECT_EQ(rows[2], t.records[1]);
}

TEST(Dataset, SortedClassIdsAndLabelExcluded) {
  const Dataset d = fixtures::synthetic_dataset();
  EXPECT_EQ(d.class_names, (std::vector<std::string>{"no", "yes"}));
  EXPECT_EQ(d.schema.size(), 6u);
  EXPECT_FALSE(d.schema.index_of(synthetic_label));
}

TEST(Synthetic, PlantedStructureHolds) {
  const CsvTable t = make_synthetic({500, 9});
  for (const auto& r : t.records) {
    EXPECT_TRUE(satisfies_rule(r[1], r[2]));
    const int score = int(synthetic_level(r[1])) + (std::stoi(r[4]) >= 45 ? 2 : 0) + (synthetic_level(r[3]) <= 1 ? 1 : 0);
    EXPECT_EQ(r[6], score >= 6 ? "yes" : "no");
  }
  const Dataset d = build_dataset(t, synthetic_label, synthetic_numeric, 5);
  EXPECT_EQ(rule_violation_rate(d.rows, d.schema), 0.0);
}

TEST(Synthetic, UniformRowsBreakRuleAtClosedFormRate) {
  const Dataset d = fixtures::synthetic_dataset();
  const auto cards = d.schema.cardinalities();
  std::vector<EncodedRow> all;
  const std::size_t a = *d.schema.index_of("A"), b = *d.schema.index_of("B");
  for (std::size_t i = 0; i < cards[a]; ++i)
    for (std::size_t j = 0; j < cards[b]; ++j) {
      EncodedRow e = d.rows[0];
      e[a] = i;
      e[b] = j;
      all.push_back(e);
    }
  EXPECT_DOUBLE_EQ(rule_violation_rate(all, d.schema), 1.0 - 1.0 / double(cards[b]));
}
