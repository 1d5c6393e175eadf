#pragma once

// Autoregressive plausibility oracles p(x) = prod_n p(x_n | x_<n) over encoded
// rows, read left to right. Two independent families: a GRU and a causally
// masked transformer. Neither shares parameters with the diffusion model.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "scd/autodiff.hpp"
#include "scd/nn.hpp"
#include "scd/tabular.hpp"

namespace scd {

enum class ARVariant { recurrent, causal_transformer };

inline std::string to_string(ARVariant v) { return v == ARVariant::recurrent ? "recurrent" : "transformer"; }

inline ARVariant parse_ar_variant(const std::string& s) {
  if (s == "recurrent" || s == "rnn" || s == "gru") return ARVariant::recurrent;
  if (s == "transformer" || s == "causal_transformer") return ARVariant::causal_transformer;
  throw Error("unknown plausibility model variant '" + s + "'");
}

struct ARConfig {
  std::size_t hidden = 64;
  std::size_t layers = 2;  // transformer only
  std::size_t heads = 4;   // transformer only
};

struct ARPlausibilityModel {
  ARVariant variant = ARVariant::recurrent;
  std::vector<std::size_t> cardinalities;
  ARConfig config;
  Parameters params;

  std::size_t positions() const { return cardinalities.size(); }

  static ARPlausibilityModel create(ARVariant variant, std::vector<std::size_t> cards, const ARConfig& cfg, Rng& rng) {
    if (cards.empty()) throw Error("plausibility model needs at least one column");
    ARPlausibilityModel m{variant, std::move(cards), cfg, {}};
    const std::size_t h = cfg.hidden;
    m.params["bos"] = random_normal({1, h}, 1.0, rng);
    for (std::size_t n = 0; n + 1 < m.positions(); ++n)
      m.params["input." + std::to_string(n)] = random_normal({m.cardinalities[n], h}, 1.0, rng);
    for (std::size_t n = 0; n < m.positions(); ++n) init_dense(m.params, "head." + std::to_string(n), h, m.cardinalities[n], rng);
    if (variant == ARVariant::recurrent) {
      for (const char* gate : {"z", "r", "h"}) {
        init_dense(m.params, std::string("gru.x") + gate, h, h, rng);
        m.params[std::string("gru.h") + gate + ".w"] = random_normal({h, h}, 1.0 / std::sqrt(double(h)), rng);
      }
    } else {
      if (cfg.heads == 0 || h % cfg.heads != 0) throw Error("transformer hidden width must be divisible by heads");
      m.params["position"] = random_normal({m.positions(), h}, 0.1, rng);
      for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        for (const char* proj : {"q", "k", "v"}) init_dense(m.params, p + proj, h, h, rng);
        init_dense(m.params, p + "o", h, h, rng);
        init_dense(m.params, p + "ff1", h, 2 * h, rng);
        init_dense(m.params, p + "ff2", 2 * h, h, rng);
        for (const char* proj : {"o", "ff2"})
          for (double& v : m.params[p + proj + ".w"].data) v *= 0.5;
      }
    }
    return m;
  }

  /// Per-position logits for a batch of rows; entry n is B x |X_n| and
  /// depends only on the ids at positions < n.
  std::vector<ad::Var> logits(const Binding& b, const std::vector<EncodedRow>& rows) const {
    const std::size_t batch = rows.size();
    for (const EncodedRow& r : rows) {
      if (r.size() != positions())
        throw Error("plausibility model: row has " + std::to_string(r.size()) + " ids, expected " +
                    std::to_string(positions()));
      for (std::size_t n = 0; n < r.size(); ++n)
        if (r[n] >= cardinalities[n]) throw Error("plausibility model: id out of range at position " + std::to_string(n));
    }
    std::vector<ad::Var> inputs;
    for (std::size_t n = 0; n < positions(); ++n) {
      if (n == 0) {
        inputs.push_back(ad::gather_rows(b["bos"], std::vector<std::size_t>(batch, 0)));
      } else {
        std::vector<std::size_t> idx;
        for (const EncodedRow& r : rows) idx.push_back(r[n - 1]);
        inputs.push_back(ad::gather_rows(b["input." + std::to_string(n - 1)], std::move(idx)));
      }
    }
    std::vector<ad::Var> states;
    if (variant == ARVariant::recurrent) {
      ad::Var h = ad::constant(Tensor::matrix(batch, config.hidden));
      for (std::size_t n = 0; n < positions(); ++n) {
        const ad::Var& x = inputs[n];
        const ad::Var z = ad::sigmoid(ad::add(dense(b, "gru.xz", x), ad::matmul(h, b["gru.hz.w"])));
        const ad::Var r = ad::sigmoid(ad::add(dense(b, "gru.xr", x), ad::matmul(h, b["gru.hr.w"])));
        const ad::Var cand = ad::tanh(ad::add(dense(b, "gru.xh", x), ad::matmul(ad::mul(r, h), b["gru.hh.w"])));
        h = ad::add(h, ad::mul(z, ad::sub(cand, h)));
        states.push_back(h);
      }
    } else {
      std::vector<ad::Var> tokens;
      for (std::size_t n = 0; n < positions(); ++n)
        tokens.push_back(ad::add(inputs[n], ad::gather_rows(b["position"], std::vector<std::size_t>(batch, n))));
      ad::Var x = ad::concat_rows(tokens);
      for (std::size_t l = 0; l < config.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        const ad::Var att =
            ad::causal_attention(dense(b, p + "q", x), dense(b, p + "k", x), dense(b, p + "v", x), positions(), config.heads);
        x = ad::add(x, dense(b, p + "o", att));
        x = ad::add(x, dense(b, p + "ff2", ad::gelu(dense(b, p + "ff1", x))));
      }
      for (std::size_t n = 0; n < positions(); ++n) states.push_back(ad::slice_rows(x, n * batch, batch));
    }
    std::vector<ad::Var> out;
    for (std::size_t n = 0; n < positions(); ++n) out.push_back(dense(b, "head." + std::to_string(n), states[n]));
    return out;
  }

  /// Mean over rows of the summed per-position cross-entropy (teacher forcing).
  ad::Var loss(const Binding& b, const std::vector<EncodedRow>& rows) const {
    const auto per_position = logits(b, rows);
    ad::Var total;
    for (std::size_t n = 0; n < positions(); ++n) {
      std::vector<std::size_t> targets;
      for (const EncodedRow& r : rows) targets.push_back(r[n]);
      ad::Var term = ad::cross_entropy(per_position[n], std::move(targets));
      total = total.valid() ? ad::add(total, term) : term;
    }
    return total;
  }

  /// -sum_n log p(id_n | id_<n) for each row.
  std::vector<double> nll(const std::vector<EncodedRow>& rows) const {
    std::vector<double> out(rows.size(), 0.0);
    if (rows.empty()) return out;
    const Binding b = bind_parameters(params, false);
    const auto per_position = logits(b, rows);
    for (std::size_t n = 0; n < positions(); ++n) {
      const Tensor& lg = per_position[n].value();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = lg.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double z = 0.0;
        for (double v : r) z += std::exp(v - mx);
        out[i] += mx + std::log(z) - r[rows[i][n]];
      }
    }
    return out;
  }
};

inline double ar_nll(const EncodedRow& row, const ARPlausibilityModel& model) { return model.nll({row}).front(); }

inline ARPlausibilityModel train_plausibility(const Dataset& data, ARVariant variant, const ARConfig& arch,
                                              const TrainConfig& cfg, TrainingLog* log = nullptr,
                                              const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (data.rows.empty()) throw Error("train_plausibility: empty dataset");
  Rng rng(cfg.seed);
  ARPlausibilityModel model = ARPlausibilityModel::create(variant, data.schema.cardinalities(), arch, rng);
  Optimizer opt(cfg.optimizer);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& batch : minibatches(data.size(), cfg.batch, rng)) {
      std::vector<EncodedRow> rows;
      for (std::size_t i : batch) rows.push_back(data.rows[i]);
      const Binding b = bind_parameters(model.params, true);
      const ad::Var loss = model.loss(b, rows);
      opt.step(model.params, gradients(loss, b));
      total += loss.value().data[0] * double(rows.size());
      count += rows.size();
    }
    const double mean_loss = total / double(count);
    if (log) log->epoch_loss.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return model;
}

}  // namespace scd
