#pragma once

// Gradient-search baselines over relaxed one-hot rows: Wachter (validity and
// proximity), DiCE (adds diversity) and DiCE-VAE (adds a negative-ELBO term).
// Relaxed rows reach the classifier as probability-weighted mixtures of the
// frozen dictionary embeddings.

#include <cmath>
#include <string>
#include <vector>

#include "scd/autodiff.hpp"
#include "scd/classifier.hpp"
#include "scd/embedding.hpp"
#include "scd/guidance.hpp"
#include "scd/nn.hpp"
#include "scd/tabular.hpp"
#include "scd/vae.hpp"

namespace scd {

enum class BaselineMethod { wachter, dice, dice_vae };

inline std::string to_string(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::wachter: return "wachter";
    case BaselineMethod::dice: return "dice";
    case BaselineMethod::dice_vae: return "dice_vae";
  }
  return "?";
}

inline BaselineMethod parse_baseline_method(const std::string& s) {
  if (s == "wachter") return BaselineMethod::wachter;
  if (s == "dice") return BaselineMethod::dice;
  if (s == "dice_vae" || s == "dice-vae") return BaselineMethod::dice_vae;
  throw Error("unknown baseline method '" + s + "'");
}

struct BaselineConfig {
  BaselineMethod method = BaselineMethod::dice;
  std::size_t steps = 100;
  double learning_rate = 2.5;
  LossWeights lambda{1.0, 0.1, 0.0325, 0.0};
  std::size_t count = 4;
  /// Softmax temperature applied to the per-column scores.
  double temperature = 0.5;
  double jitter = 0.01;
  std::uint64_t seed = 0;

  /// Per-method weights: Wachter has no diversity term, only DiCE-VAE has plausibility.
  static BaselineConfig defaults(BaselineMethod m) {
    BaselineConfig c;
    c.method = m;
    if (m == BaselineMethod::wachter) c.lambda.diversity = 0.0;
    if (m == BaselineMethod::dice_vae) c.lambda.plausibility = 0.01;
    return c;
  }

  LossWeights effective_weights() const {
    LossWeights w = lambda;
    if (method == BaselineMethod::wachter) w.diversity = 0.0;
    if (method != BaselineMethod::dice_vae) w.plausibility = 0.0;
    return w;
  }
};

/// Per-column score matrices, each B x |X_c|.
struct RelaxedOneHot {
  std::vector<Tensor> scores;

  std::size_t count() const { return scores.empty() ? 0 : scores.front().rows(); }

  /// One-hot of x, repeated B times, plus N(0, jitter^2) noise.
  static RelaxedOneHot from_row(const EncodedRow& x, const EmbeddingDictionary& dict, std::size_t count, double jitter,
                                Rng& rng) {
    RelaxedOneHot s;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t c = 0; c < x.size(); ++c) {
      Tensor t = Tensor::matrix(count, dict.cardinality(c));
      for (std::size_t b = 0; b < count; ++b) {
        t(b, x[c]) = 1.0;
        for (std::size_t k = 0; k < t.cols(); ++k) t(b, k) += jitter * normal(rng);
      }
      s.scores.push_back(std::move(t));
    }
    return s;
  }

  std::vector<EncodedRow> argmax() const {
    std::vector<EncodedRow> out(count(), EncodedRow(scores.size()));
    for (std::size_t c = 0; c < scores.size(); ++c)
      for (std::size_t b = 0; b < count(); ++b) {
        const auto r = scores[c].row(b);
        out[b][c] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
      }
    return out;
  }
};

/// Concatenated one-hot of x, 1 x sum|X_c|.
inline Tensor one_hot_row(const EncodedRow& x, const EmbeddingDictionary& dict) {
  std::size_t total = 0;
  for (std::size_t c = 0; c < dict.columns(); ++c) total += dict.cardinality(c);
  Tensor out = Tensor::matrix(1, total);
  std::size_t offset = 0;
  for (std::size_t c = 0; c < dict.columns(); ++c) {
    out.data[offset + x.at(c)] = 1.0;
    offset += dict.cardinality(c);
  }
  return out;
}

struct BaselineLoss {
  ad::Var total;
  GuidingLossBreakdown breakdown;
};

/// Loss over score leaves: validity CE of f on embedding mixtures, summed
/// squared distance of the column probabilities to x's one-hot, negated mean
/// pairwise distance of the probabilities, and negative ELBO of the mixtures.
inline BaselineLoss baseline_loss(const std::vector<ad::Var>& scores, const ClassifierNet& f, std::size_t target,
                                  const Tensor& x_onehot, const EmbeddingDictionary& dict, const BaselineConfig& cfg,
                                  const TabularVAE* vae, Rng& rng) {
  if (scores.size() != dict.columns()) throw Error("baseline_loss: one score matrix per column required");
  const LossWeights w = cfg.effective_weights();
  if (w.plausibility > 0.0 && !vae) throw Error("dice_vae baseline requires a trained VAE");
  const std::size_t batch = scores.front().rows();
  std::vector<ad::Var> probs, mixtures;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (scores[c].cols() != dict.cardinality(c))
      throw Error("baseline_loss: column " + std::to_string(c) + " score width does not match the vocabulary");
    const ad::Var p = ad::softmax_rows(ad::scale(scores[c], 1.0 / cfg.temperature));
    probs.push_back(p);
    mixtures.push_back(ad::matmul(p, ad::constant(dict.tables[c])));
  }
  const ad::Var z = ad::concat_cols(mixtures);
  const ad::Var p_all = ad::concat_cols(probs);

  BaselineLoss out;
  std::vector<ad::Var> terms;
  auto add = [&](double weight, const ad::Var& term, double& slot) {
    slot = term.value().data[0];
    terms.push_back(ad::scale(term, weight));
  };
  if (w.validity > 0.0) add(w.validity, validity_loss(z, f, target), out.breakdown.validity);
  if (w.proximity > 0.0) {
    Tensor stacked = Tensor::matrix(batch, x_onehot.cols());
    for (std::size_t b = 0; b < batch; ++b)
      std::copy(x_onehot.data.begin(), x_onehot.data.end(), stacked.data.begin() + std::ptrdiff_t(b * x_onehot.cols()));
    add(w.proximity, ad::squared_distance(p_all, ad::constant(std::move(stacked))), out.breakdown.proximity);
  }
  if (w.diversity > 0.0) add(w.diversity, diversity_loss(p_all), out.breakdown.diversity);
  if (w.plausibility > 0.0) {
    const Binding frozen = bind_parameters(vae->params, false);
    double v = 0.0;
    add(w.plausibility, ad::scale(vae->terms(frozen, z, gaussian_like({batch, vae->latent}, rng)).elbo, -1.0), v);
    out.breakdown.plausibility = v;
  }
  if (terms.empty()) {
    out.total = ad::scale(ad::sum(p_all), 0.0);
  } else {
    out.total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) out.total = ad::add(out.total, terms[i]);
  }
  out.breakdown.total = out.total.value().data[0];
  return out;
}

inline CounterfactualSet baseline_generate(const ClassifierNet& f, const EncodedRow& x, std::size_t target,
                                           const BaselineConfig& cfg, const EmbeddingDictionary& dict,
                                           const TableSchema& schema, const TabularVAE* vae = nullptr) {
  if (cfg.method == BaselineMethod::dice_vae && !vae) throw Error("dice_vae baseline requires a trained VAE");
  if (cfg.count < 1) throw Error("baseline: counterfactual count must be at least 1");
  if (!(cfg.temperature > 0.0)) throw Error("baseline: temperature must be positive");
  if (f.input_width != dict.row_width()) throw Error("baseline: classifier width does not match the dictionary");
  check_encoded(x, schema);
  if (target >= f.classes) throw Error("desired class " + std::to_string(target) + " out of range");
  Rng rng(cfg.seed);
  RelaxedOneHot state = RelaxedOneHot::from_row(x, dict, cfg.count, cfg.jitter, rng);
  const Tensor x_onehot = one_hot_row(x, dict);
  CounterfactualSet out;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<ad::Var> leaves;
    for (const Tensor& s : state.scores) leaves.push_back(ad::leaf(s));
    BaselineLoss loss = baseline_loss(leaves, f, target, x_onehot, dict, cfg, vae, rng);
    loss.breakdown.step = step + 1;
    out.loss_trace.push_back(loss.breakdown);
    if (cfg.learning_rate == 0.0) continue;
    const std::vector<Tensor> grads = ad::grad(loss.total, leaves);
    for (std::size_t c = 0; c < state.scores.size(); ++c)
      for (std::size_t i = 0; i < state.scores[c].size(); ++i)
        state.scores[c].data[i] -= cfg.learning_rate * grads[c].data[i];
  }
  out.encoded = state.argmax();
  for (const EncodedRow& e : out.encoded) out.rows.push_back(decode_row(e, schema));
  out.final_embeddings = embed_rows(out.encoded, dict);
  return out;
}

}  // namespace scd
