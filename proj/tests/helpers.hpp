#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "scd/experiment.hpp"
#include "scd/synthetic.hpp"

namespace scd::fixtures {

/// Central finite differences of a scalar function, one coordinate at a time.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  Tensor g = x;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + h;
    const double up = f(probe);
    probe.data[i] = orig - h;
    const double down = f(probe);
    probe.data[i] = orig;
    g.data[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
inline double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a.data[i]), std::abs(b.data[i]), floor});
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
  }
  return worst;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return random_normal(std::move(shape), scale, rng);
}

inline Dataset synthetic_dataset(std::size_t rows = 300, std::uint64_t seed = 7) {
  return build_dataset(make_synthetic({rows, seed}), synthetic_label, synthetic_numeric, 5);
}

/// Dataset whose rows are all `row`, with a label column alternating so two classes exist.
inline Dataset repeated_row_dataset(const std::vector<std::string>& row, std::size_t copies) {
  CsvTable t;
  for (std::size_t c = 0; c < row.size(); ++c) t.header.push_back("c" + std::to_string(c));
  t.header.push_back("y");
  for (std::size_t i = 0; i < copies; ++i) {
    auto rec = row;
    rec.push_back(i % 2 ? "p" : "q");
    t.records.push_back(std::move(rec));
  }
  return build_dataset(t, "y", {}, 1);
}

/// Two categorical columns: a in {x, y}, b in {p, q, r}.
inline TableSchema two_column_schema() { return infer_schema({{"x", "p"}, {"y", "q"}, {"x", "r"}}, {"a", "b"}, {}, 5); }

/// Width-1 embeddings with a = x at -3 and a = y at +3; b does not reach the classifier.
inline EmbeddingDictionary hand_dictionary() {
  EmbeddingDictionary d;
  d.width = 1;
  d.tables = {Tensor({2, 1}, {-3.0, 3.0}), Tensor({3, 1}, {0.1, 0.2, 0.3})};
  return d;
}

/// Predicts class 1 exactly when column a is y: logit_1 = gelu(z_a + 10) - 11, logit_0 = 0.
/// The shift keeps gelu in its near-linear range so gradients point the right way.
inline ClassifierNet column_a_classifier() {
  Rng rng(1);
  ClassifierNet f = ClassifierNet::create(2, 1, 2, rng);
  f.params.at("hidden.w").data = {1.0, 0.0};
  f.params.at("hidden.b").data = {10.0};
  f.params.at("logits.w").data = {0.0, 1.0};
  f.params.at("logits.b").data = {0.0, -11.0};
  return f;
}

/// Zero output heads: every column is predicted uniformly.
inline ARPlausibilityModel uniform_model(ARVariant v, const std::vector<std::size_t>& cards) {
  Rng rng(2);
  ARPlausibilityModel m = ARPlausibilityModel::create(v, cards, {8, 1, 2}, rng);
  for (auto& [name, t] : m.params)
    if (name.rfind("head.", 0) == 0) std::fill(t.data.begin(), t.data.end(), 0.0);
  return m;
}

/// Small config: seconds to train, enough to exercise every code path.
inline RunConfig quick_config() {
  RunConfig cfg;
  cfg.data.synthetic_rows = 300;
  cfg.diffusion.train.epochs = 4;
  cfg.classifier.train.epochs = 5;
  cfg.plausibility.train.epochs = 1;
  cfg.plausibility.arch.hidden = 16;
  cfg.vae.train.epochs = 2;
  cfg.guidance.tau = 10;
  cfg.evaluation.queries = 3;
  return cfg;
}

/// Trained once per test binary.
inline const ModelBundle& quick_bundle() {
  static const ModelBundle m = train_bundle(load_dataset(quick_config().data), quick_config());
  return m;
}

}  // namespace scd::fixtures
