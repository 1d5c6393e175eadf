#pragma once

// Table schema inference, per-column vocabularies, numeric binning, and the
// text <-> integer-id row codec shared by every model.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "scd/error.hpp"

namespace scd {

enum class ColumnKind { categorical, numeric };

enum class BinningMode { equal_frequency, equal_width };

inline std::string to_string(ColumnKind k) { return k == ColumnKind::numeric ? "numeric" : "categorical"; }

inline std::string to_string(BinningMode m) {
  return m == BinningMode::equal_width ? "equal_width" : "equal_frequency";
}

inline BinningMode parse_binning_mode(const std::string& s) {
  if (s == "equal_frequency" || s == "quantile") return BinningMode::equal_frequency;
  if (s == "equal_width") return BinningMode::equal_width;
  throw Error("unknown binning mode '" + s + "'");
}

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::categorical;
  std::vector<double> bin_edges;              // numeric only, bin_count + 1 ascending boundaries
  std::vector<double> bin_representatives;    // numeric only, one per bin

  std::size_t bin_count() const { return bin_representatives.size(); }
  bool operator==(const ColumnSchema&) const = default;
};

/// Per-column bijection between value text and dense ids [0, |X_c|).
class Vocabulary {
 public:
  std::size_t add_column() {
    values_.emplace_back();
    index_.emplace_back();
    return values_.size() - 1;
  }

  /// Returns the id of `text` in column `c`, inserting it if new.
  std::size_t intern(std::size_t c, const std::string& text) {
    auto [it, inserted] = index_.at(c).emplace(text, values_.at(c).size());
    if (inserted) values_[c].push_back(text);
    return it->second;
  }

  std::optional<std::size_t> find(std::size_t c, const std::string& text) const {
    const auto& idx = index_.at(c);
    auto it = idx.find(text);
    if (it == idx.end()) return std::nullopt;
    return it->second;
  }

  const std::string& value(std::size_t c, std::size_t id) const {
    const auto& vals = values_.at(c);
    if (id >= vals.size())
      throw Error("id " + std::to_string(id) + " out of range for column " + std::to_string(c) + " (cardinality " +
                  std::to_string(vals.size()) + ")");
    return vals[id];
  }

  const std::vector<std::string>& values(std::size_t c) const { return values_.at(c); }
  std::size_t cardinality(std::size_t c) const { return values_.at(c).size(); }
  std::size_t columns() const { return values_.size(); }

  bool operator==(const Vocabulary& other) const { return values_ == other.values_; }

 private:
  std::vector<std::vector<std::string>> values_;
  std::vector<std::unordered_map<std::string, std::size_t>> index_;
};

using Value = std::variant<std::string, double>;
using Row = std::vector<Value>;
using EncodedRow = std::vector<std::size_t>;

/// Column schemas plus their vocabulary: everything needed to encode and decode rows.
struct TableSchema {
  std::vector<ColumnSchema> columns;
  Vocabulary vocabulary;

  std::size_t size() const { return columns.size(); }

  std::vector<std::size_t> cardinalities() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < columns.size(); ++c) out.push_back(vocabulary.cardinality(c));
    return out;
  }

  std::optional<std::size_t> index_of(const std::string& name) const {
    for (std::size_t c = 0; c < columns.size(); ++c)
      if (columns[c].name == name) return c;
    return std::nullopt;
  }

  bool operator==(const TableSchema&) const = default;
};

struct Dataset {
  TableSchema schema;
  std::vector<EncodedRow> rows;
  std::vector<std::size_t> labels;
  std::string label_name;
  std::vector<std::string> class_names;

  std::size_t class_count() const { return class_names.size(); }
  std::size_t size() const { return rows.size(); }
};

// ---------------------------------------------------------------------------
// Text helpers

inline std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error("cannot format number");
  return std::string(buf, end);
}

inline std::optional<double> parse_number(const std::string& text) {
  std::size_t b = text.find_first_not_of(" \t");
  std::size_t e = text.find_last_not_of(" \t");
  if (b == std::string::npos) return std::nullopt;
  const char* first = text.data() + b;
  const char* last = text.data() + e + 1;
  if (*first == '+') ++first;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return v;
}

inline std::string value_text(const Value& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  return format_number(std::get<double>(v));
}

/// Comma-separated records; double-quoted fields may hold commas, newlines and "" escapes.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, any = false;
  char ch;
  auto end_record = [&] {
    record.push_back(std::move(field));
    field.clear();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
    any = false;
  };
  while (in.get(ch)) {
    any = true;
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      record.push_back(std::move(field));
      field.clear();
    } else if (ch == '\n') {
      end_record();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  if (quoted) throw Error("csv: unterminated quoted field");
  if (any) end_record();
  return records;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> records;
};

inline void write_csv(std::ostream& out, const CsvTable& t) {
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << csv_escape(fields[i]);
    out << '\n';
  };
  line(t.header);
  for (const auto& r : t.records) line(r);
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open csv file '" + path + "'");
  auto records = parse_csv(in);
  if (records.empty()) throw Error("csv file '" + path + "' is empty");
  CsvTable t;
  t.header = std::move(records.front());
  t.records.assign(std::make_move_iterator(records.begin() + 1), std::make_move_iterator(records.end()));
  for (std::size_t i = 0; i < t.records.size(); ++i)
    if (t.records[i].size() != t.header.size())
      throw Error("csv record " + std::to_string(i + 1) + " has " + std::to_string(t.records[i].size()) +
                  " fields, expected " + std::to_string(t.header.size()));
  return t;
}

// ---------------------------------------------------------------------------
// Binning

namespace detail {

inline double median_of_sorted(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  const std::size_t n = end - begin;
  const std::size_t mid = begin + n / 2;
  return n % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

inline std::size_t bin_of(const std::vector<double>& edges, double v) {
  const std::size_t bins = edges.size() - 1;
  if (v < edges.front()) return 0;
  const auto it = std::upper_bound(edges.begin(), edges.end(), v);
  const std::size_t idx = static_cast<std::size_t>(it - edges.begin());
  return std::min(idx == 0 ? 0 : idx - 1, bins - 1);
}

}  // namespace detail

/// Bin edges and per-bin median representatives for one numeric column.
/// Equal-frequency bins whose boundaries collide on tied values are merged,
/// so the result may have fewer than `bin_count` bins.
inline ColumnSchema bin_numeric_column(std::string name, std::vector<double> values, std::size_t bin_count,
                                       BinningMode mode) {
  if (values.empty()) throw Error("cannot bin empty column '" + name + "'");
  if (bin_count < 1) throw Error("bin_count must be at least 1");
  std::sort(values.begin(), values.end());
  const double lo = values.front(), hi = values.back();
  ColumnSchema col{std::move(name), ColumnKind::numeric, {}, {}};
  if (lo == hi) {
    col.bin_edges = {lo - 0.5, lo + 0.5};
    col.bin_representatives = {lo};
    return col;
  }
  const std::size_t n = values.size();
  std::vector<double> edges{lo};
  for (std::size_t i = 1; i < bin_count; ++i) {
    const double e = mode == BinningMode::equal_width ? lo + (hi - lo) * double(i) / double(bin_count)
                                                      : values[i * n / bin_count];
    if (e > edges.back() && e < hi) edges.push_back(e);
  }
  edges.push_back(hi);
  col.bin_edges = edges;
  const std::size_t bins = edges.size() - 1;
  std::size_t begin = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    std::size_t end = begin;
    while (end < n && detail::bin_of(edges, values[end]) == b) ++end;
    col.bin_representatives.push_back(end > begin ? detail::median_of_sorted(values, begin, end)
                                                  : 0.5 * (edges[b] + edges[b + 1]));
    begin = end;
  }
  return col;
}

inline std::string bin_label(const ColumnSchema& col, std::size_t b) {
  return format_number(col.bin_representatives.at(b));
}

/// Infers column kinds, numeric bins and categorical vocabularies from raw
/// text records. Categorical ids follow first-seen order.
inline TableSchema infer_schema(const std::vector<std::vector<std::string>>& records,
                                const std::vector<std::string>& header, const std::set<std::string>& numeric_columns,
                                std::size_t bin_count, BinningMode mode = BinningMode::equal_frequency) {
  if (records.empty()) throw Error("cannot infer schema from an empty table");
  if (bin_count < 1) throw Error("bin_count must be at least 1");
  for (const auto& name : numeric_columns)
    if (std::find(header.begin(), header.end(), name) == header.end())
      throw Error("numeric column '" + name + "' not in header");
  TableSchema schema;
  for (std::size_t c = 0; c < header.size(); ++c) {
    schema.vocabulary.add_column();
    if (numeric_columns.contains(header[c])) {
      std::vector<double> values;
      values.reserve(records.size());
      for (std::size_t r = 0; r < records.size(); ++r) {
        if (records[r].size() != header.size())
          throw Error("record " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                      " fields, expected " + std::to_string(header.size()));
        auto v = parse_number(records[r][c]);
        if (!v)
          throw ValidationError(header[c], "row " + std::to_string(r) + ", column '" + header[c] +
                                               "': cannot parse '" + records[r][c] + "' as a number");
        values.push_back(*v);
      }
      schema.columns.push_back(bin_numeric_column(header[c], std::move(values), bin_count, mode));
      for (std::size_t b = 0; b < schema.columns.back().bin_count(); ++b)
        schema.vocabulary.intern(c, bin_label(schema.columns.back(), b));
    } else {
      schema.columns.push_back(ColumnSchema{header[c], ColumnKind::categorical, {}, {}});
      for (std::size_t r = 0; r < records.size(); ++r) {
        if (records[r].size() != header.size())
          throw Error("record " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                      " fields, expected " + std::to_string(header.size()));
        schema.vocabulary.intern(c, records[r][c]);
      }
    }
  }
  return schema;
}

// ---------------------------------------------------------------------------
// Row codec

/// Parses text fields into a Row, converting numeric columns to reals.
inline Row parse_row(const std::vector<std::string>& fields, const TableSchema& schema) {
  if (fields.size() != schema.size())
    throw ValidationError("", "row has " + std::to_string(fields.size()) + " values, expected " +
                                  std::to_string(schema.size()));
  Row row;
  for (std::size_t c = 0; c < fields.size(); ++c) {
    if (schema.columns[c].kind == ColumnKind::numeric) {
      auto v = parse_number(fields[c]);
      if (!v)
        throw ValidationError(schema.columns[c].name,
                              "column '" + schema.columns[c].name + "': '" + fields[c] + "' is not a number");
      row.emplace_back(*v);
    } else {
      row.emplace_back(fields[c]);
    }
  }
  return row;
}

inline EncodedRow encode_row(const Row& row, const TableSchema& schema) {
  if (row.size() != schema.size())
    throw ValidationError("", "row has " + std::to_string(row.size()) + " values, expected " +
                                  std::to_string(schema.size()));
  EncodedRow ids(row.size());
  for (std::size_t c = 0; c < row.size(); ++c) {
    const ColumnSchema& col = schema.columns[c];
    if (col.kind == ColumnKind::numeric) {
      double v;
      if (const double* d = std::get_if<double>(&row[c])) {
        v = *d;
      } else {
        auto parsed = parse_number(std::get<std::string>(row[c]));
        if (!parsed)
          throw ValidationError(col.name, "column '" + col.name + "': '" + std::get<std::string>(row[c]) +
                                              "' is not a number");
        v = *parsed;
      }
      ids[c] = detail::bin_of(col.bin_edges, v);
    } else {
      const std::string text = value_text(row[c]);
      auto id = schema.vocabulary.find(c, text);
      if (!id) throw ValidationError(col.name, "column '" + col.name + "': unknown value '" + text + "'");
      ids[c] = *id;
    }
  }
  return ids;
}

inline Row decode_row(const EncodedRow& ids, const TableSchema& schema) {
  if (ids.size() != schema.size())
    throw Error("encoded row has " + std::to_string(ids.size()) + " ids, expected " + std::to_string(schema.size()));
  Row row;
  for (std::size_t c = 0; c < ids.size(); ++c) {
    const ColumnSchema& col = schema.columns[c];
    if (ids[c] >= schema.vocabulary.cardinality(c))
      throw Error("column '" + col.name + "': id " + std::to_string(ids[c]) + " out of range");
    if (col.kind == ColumnKind::numeric)
      row.emplace_back(col.bin_representatives[ids[c]]);
    else
      row.emplace_back(schema.vocabulary.value(c, ids[c]));
  }
  return row;
}

inline std::vector<std::string> row_text(const Row& row) {
  std::vector<std::string> out;
  for (const Value& v : row) out.push_back(value_text(v));
  return out;
}

inline void check_encoded(const EncodedRow& ids, const TableSchema& schema) {
  if (ids.size() != schema.size()) throw Error("encoded row width mismatch");
  for (std::size_t c = 0; c < ids.size(); ++c)
    if (ids[c] >= schema.vocabulary.cardinality(c))
      throw Error("column '" + schema.columns[c].name + "': id " + std::to_string(ids[c]) + " out of range");
}

/// Fraction of columns whose ids differ.
inline double mismatch_distance(const EncodedRow& a, const EncodedRow& b) {
  if (a.size() != b.size())
    throw Error("mismatch_distance: row lengths differ (" + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()) + ")");
  if (a.empty()) return 0.0;
  std::size_t diff = 0;
  for (std::size_t c = 0; c < a.size(); ++c) diff += a[c] != b[c];
  return double(diff) / double(a.size());
}

// ---------------------------------------------------------------------------
// Datasets

/// Splits the label column off a raw table and infers the feature schema.
/// Class ids follow sorted label text.
inline Dataset build_dataset(const CsvTable& table, const std::string& label_column,
                             const std::set<std::string>& numeric_columns, std::size_t bin_count,
                             BinningMode mode = BinningMode::equal_frequency) {
  const auto it = std::find(table.header.begin(), table.header.end(), label_column);
  if (it == table.header.end()) throw Error("label column '" + label_column + "' not in header");
  const std::size_t label_idx = static_cast<std::size_t>(it - table.header.begin());
  std::vector<std::string> header;
  for (std::size_t c = 0; c < table.header.size(); ++c)
    if (c != label_idx) header.push_back(table.header[c]);
  std::vector<std::vector<std::string>> features;
  std::set<std::string> classes;
  for (const auto& rec : table.records) {
    std::vector<std::string> f;
    for (std::size_t c = 0; c < rec.size(); ++c)
      if (c != label_idx) f.push_back(rec[c]);
    features.push_back(std::move(f));
    classes.insert(rec[label_idx]);
  }
  Dataset ds;
  ds.schema = infer_schema(features, header, numeric_columns, bin_count, mode);
  ds.label_name = label_column;
  ds.class_names.assign(classes.begin(), classes.end());
  if (ds.class_count() < 2) throw Error("label column '" + label_column + "' has fewer than 2 classes");
  for (std::size_t r = 0; r < features.size(); ++r) {
    ds.rows.push_back(encode_row(parse_row(features[r], ds.schema), ds.schema));
    const auto& lab = table.records[r][label_idx];
    ds.labels.push_back(static_cast<std::size_t>(
        std::lower_bound(ds.class_names.begin(), ds.class_names.end(), lab) - ds.class_names.begin()));
  }
  return ds;
}

}  // namespace scd
