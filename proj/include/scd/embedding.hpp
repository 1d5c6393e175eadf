#pragma once

// Per-column embedding dictionaries: row lookup, distance-based column
// probabilities, and the reverse lookup that snaps continuous embeddings back
// onto dictionary entries.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "scd/autodiff.hpp"
#include "scd/nn.hpp"
#include "scd/tabular.hpp"
#include "scd/tensor.hpp"

namespace scd {

enum class SamplingStrategy { max, average, full_sampling, top3 };

inline std::string to_string(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::max: return "max";
    case SamplingStrategy::average: return "average";
    case SamplingStrategy::full_sampling: return "full_sampling";
    case SamplingStrategy::top3: return "top3";
  }
  return "?";
}

inline SamplingStrategy parse_strategy(const std::string& s) {
  if (s == "max" || s == "Max") return SamplingStrategy::max;
  if (s == "average" || s == "Average") return SamplingStrategy::average;
  if (s == "full_sampling" || s == "FullSampling" || s == "sample") return SamplingStrategy::full_sampling;
  if (s == "top3" || s == "Top3" || s == "top-3") return SamplingStrategy::top3;
  throw Error("unknown sampling strategy '" + s + "'");
}

inline constexpr SamplingStrategy all_strategies[] = {SamplingStrategy::max, SamplingStrategy::average,
                                                      SamplingStrategy::full_sampling, SamplingStrategy::top3};

/// One |X_c| x d table per column, all of width d.
struct EmbeddingDictionary {
  std::vector<Tensor> tables;
  std::size_t width = 0;

  std::size_t columns() const { return tables.size(); }
  std::size_t cardinality(std::size_t c) const { return tables.at(c).rows(); }
  std::size_t row_width() const { return columns() * width; }

  static EmbeddingDictionary random(const std::vector<std::size_t>& cardinalities, std::size_t width, Rng& rng,
                                    double stddev = 1.0) {
    EmbeddingDictionary d;
    d.width = width;
    for (std::size_t card : cardinalities) d.tables.push_back(random_normal({card, width}, stddev, rng));
    return d;
  }

  void to_parameters(Parameters& params, const std::string& prefix = "embedding.") const {
    for (std::size_t c = 0; c < tables.size(); ++c) params[prefix + std::to_string(c)] = tables[c];
  }

  static EmbeddingDictionary from_parameters(const Parameters& params, std::size_t columns,
                                             const std::string& prefix = "embedding.") {
    EmbeddingDictionary d;
    for (std::size_t c = 0; c < columns; ++c) {
      auto it = params.find(prefix + std::to_string(c));
      if (it == params.end()) throw Error("missing embedding table for column " + std::to_string(c));
      d.tables.push_back(it->second);
    }
    d.width = d.tables.empty() ? 0 : d.tables.front().cols();
    for (const Tensor& t : d.tables)
      if (t.cols() != d.width) throw Error("embedding tables have inconsistent widths");
    return d;
  }

  bool operator==(const EmbeddingDictionary& o) const {
    if (width != o.width || tables.size() != o.tables.size()) return false;
    for (std::size_t c = 0; c < tables.size(); ++c)
      if (tables[c].shape != o.tables[c].shape || tables[c].data != o.tables[c].data) return false;
    return true;
  }
};

/// Concatenated per-column embeddings of one encoded row, shape {C, d}.
inline Tensor embed_row(const EncodedRow& ids, const EmbeddingDictionary& dict) {
  if (ids.size() != dict.columns())
    throw Error("embed_row: row has " + std::to_string(ids.size()) + " ids, dictionary has " +
                std::to_string(dict.columns()) + " columns");
  Tensor out({dict.columns(), dict.width});
  for (std::size_t c = 0; c < ids.size(); ++c) {
    if (ids[c] >= dict.cardinality(c))
      throw Error("embed_row: id " + std::to_string(ids[c]) + " out of range for column " + std::to_string(c));
    std::copy_n(dict.tables[c].row(ids[c]).data(), dict.width, out.data.data() + c * dict.width);
  }
  return out;
}

/// Batched embeddings, shape {B, C, d}.
inline Tensor embed_rows(const std::vector<EncodedRow>& rows, const EmbeddingDictionary& dict) {
  Tensor out({rows.size(), dict.columns(), dict.width});
  for (std::size_t b = 0; b < rows.size(); ++b) {
    Tensor z = embed_row(rows[b], dict);
    std::copy(z.data.begin(), z.data.end(), out.data.begin() + std::ptrdiff_t(b * z.size()));
  }
  return out;
}

/// Differentiable lookup of a batch of rows through dictionary tables bound as graph leaves.
inline ad::Var embed_rows(const std::vector<EncodedRow>& rows, const std::vector<ad::Var>& tables) {
  std::vector<ad::Var> parts;
  for (std::size_t c = 0; c < tables.size(); ++c) {
    std::vector<std::size_t> idx;
    idx.reserve(rows.size());
    for (const EncodedRow& r : rows) idx.push_back(r.at(c));
    parts.push_back(ad::gather_rows(tables[c], std::move(idx)));
  }
  return ad::concat_cols(parts);
}

/// Softmax over -||slice - entry_k||^2 / temperature for every entry k of column c.
inline std::vector<double> column_probabilities(std::span<const double> slice, std::size_t c,
                                                const EmbeddingDictionary& dict, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw Error("column_probabilities: temperature must be positive");
  if (slice.size() != dict.width) throw Error("column_probabilities: slice width mismatch");
  const Tensor& table = dict.tables.at(c);
  std::vector<double> logits(table.rows());
  for (std::size_t k = 0; k < table.rows(); ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < dict.width; ++j) {
      const double diff = slice[j] - table(k, j);
      acc += diff * diff;
    }
    logits[k] = -acc / temperature;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) z += (l = std::exp(l - mx));
  for (double& l : logits) l /= z;
  return logits;
}

struct ReverseLookupResult {
  std::vector<EncodedRow> rows;
  Tensor snapped;  // {B, C, d}
};

/// Maps each column slice of Z (B x C x d) to a dictionary id and a snapped
/// embedding. Average snaps to the probability-weighted mixture but still
/// reports the most probable id.
inline ReverseLookupResult reverse_lookup(const Tensor& z, const EmbeddingDictionary& dict, SamplingStrategy strategy,
                                          double temperature, Rng& rng) {
  const std::size_t width = dict.row_width();
  if (z.size() % std::max<std::size_t>(width, 1) != 0 || (z.size() > 0 && z.cols() != width))
    throw Error("reverse_lookup: embedding width " + std::to_string(z.cols()) + " != " + std::to_string(width));
  const std::size_t batch = z.size() == 0 ? 0 : z.rows();
  ReverseLookupResult out;
  out.snapped = Tensor({batch, dict.columns(), dict.width});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t b = 0; b < batch; ++b) {
    EncodedRow ids(dict.columns());
    for (std::size_t c = 0; c < dict.columns(); ++c) {
      const std::span<const double> slice(z.data.data() + b * width + c * dict.width, dict.width);
      const std::vector<double> p = column_probabilities(slice, c, dict, temperature);
      const std::size_t argmax = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      std::size_t chosen = argmax;
      switch (strategy) {
        case SamplingStrategy::max:
        case SamplingStrategy::average:
          break;
        case SamplingStrategy::full_sampling: {
          const double u = unit(rng);
          double acc = 0.0;
          chosen = p.size() - 1;
          for (std::size_t k = 0; k < p.size(); ++k) {
            acc += p[k];
            if (u < acc) {
              chosen = k;
              break;
            }
          }
          break;
        }
        case SamplingStrategy::top3: {
          std::vector<std::size_t> order(p.size());
          std::iota(order.begin(), order.end(), std::size_t{0});
          std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b2) { return p[a] > p[b2]; });
          const std::size_t k = std::min<std::size_t>(3, order.size());
          chosen = order[std::min(k - 1, static_cast<std::size_t>(unit(rng) * double(k)))];
          break;
        }
      }
      ids[c] = chosen;
      double* dst = out.snapped.data.data() + b * width + c * dict.width;
      const Tensor& table = dict.tables[c];
      if (strategy == SamplingStrategy::average) {
        for (std::size_t k = 0; k < p.size(); ++k)
          for (std::size_t j = 0; j < dict.width; ++j) dst[j] += p[k] * table(k, j);
      } else {
        std::copy_n(table.row(chosen).data(), dict.width, dst);
      }
    }
    out.rows.push_back(std::move(ids));
  }
  return out;
}

}  // namespace scd
