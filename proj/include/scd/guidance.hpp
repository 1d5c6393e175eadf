#pragma once

// Guided counterfactual generation: denoise from a noised copy of the input
// embedding while descending the validity/proximity/diversity guiding loss.

#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scd/autodiff.hpp"
#include "scd/classifier.hpp"
#include "scd/diffusion.hpp"
#include "scd/embedding.hpp"
#include "scd/nn.hpp"
#include "scd/tabular.hpp"
#include "scd/vae.hpp"

namespace scd {

struct LossWeights {
  double validity = 1.0;
  double proximity = 0.01;
  double diversity = 0.001;
  double plausibility = 0.0;
};

struct GuidanceConfig {
  std::size_t tau = 50;
  double eta = 1.5;
  std::size_t count = 4;  // B
  LossWeights lambda;
  SamplingStrategy strategy = SamplingStrategy::max;
  /// Softmax temperature of the reverse lookup; <= 0 uses the model's rounding temperature.
  double temperature = 0.0;
  bool add_initial_noise = true;
  std::uint64_t seed = 0;

  void validate(std::size_t steps) const {
    if (tau < 1 || tau > steps)
      throw Error("guidance: tau " + std::to_string(tau) + " outside [1, " + std::to_string(steps) + "]");
    if (!(eta >= 0.0)) throw Error("guidance: eta must be non-negative");
    if (count < 1) throw Error("guidance: counterfactual count must be at least 1");
    for (double l : {lambda.validity, lambda.proximity, lambda.diversity, lambda.plausibility})
      if (!(l >= 0.0)) throw Error("guidance: loss weights must be non-negative");
  }
};

struct GuidingLossBreakdown {
  std::size_t step = 0;
  double validity = 0.0;
  double proximity = 0.0;
  double diversity = 0.0;
  std::optional<double> plausibility;
  double total = 0.0;
};

inline nlohmann::json to_json(const GuidingLossBreakdown& b) {
  nlohmann::json j = {{"step", b.step},           {"validity", b.validity}, {"proximity", b.proximity},
                      {"diversity", b.diversity}, {"total", b.total}};
  if (b.plausibility) j["plausibility"] = *b.plausibility;
  return j;
}

struct CounterfactualSet {
  std::vector<Row> rows;
  std::vector<EncodedRow> encoded;
  Tensor final_embeddings;  // {B, C, d}
  std::vector<GuidingLossBreakdown> loss_trace;
};

/// Writes one JSON record per guided step.
inline void write_loss_trace(std::ostream& out, const std::vector<GuidingLossBreakdown>& trace) {
  for (const auto& b : trace) out << to_json(b).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Loss terms over Z' flattened to B x (C*d)

/// Cross-entropy of f towards `target`, summed over the B rows so the push on
/// each counterfactual does not shrink as B grows.
inline ad::Var validity_loss(const ad::Var& zp, const ClassifierNet& f, std::size_t target) {
  if (target >= f.classes)
    throw Error("desired class " + std::to_string(target) + " out of range for " + std::to_string(f.classes) +
                " classes");
  const Binding frozen = bind_parameters(f.params, false);
  const ad::Var mean = ad::cross_entropy(f.forward(frozen, zp), std::vector<std::size_t>(zp.rows(), target));
  return ad::scale(mean, double(zp.rows()));
}

inline ad::Var proximity_loss(const ad::Var& z, const ad::Var& zp) {
  if (z.size() != zp.size())
    throw Error("proximity_loss: shape " + shape_string(z.shape()) + " vs " + shape_string(zp.shape()));
  return ad::squared_distance(zp, z);
}

/// -(2/(B(B-1))) sum_{i<j} ||z'_i - z'_j||^2, zero for B = 1.
inline ad::Var diversity_loss(const ad::Var& zp) { return ad::scale(ad::mean_pairwise_squared_distance(zp), -1.0); }

struct GuidingLoss {
  ad::Var total;
  GuidingLossBreakdown breakdown;
};

/// Weighted sum of the active terms; terms with zero weight are not evaluated.
inline GuidingLoss guiding_loss(const ad::Var& zp, const Tensor& z, const ClassifierNet& f, std::size_t target,
                                const LossWeights& w, const TabularVAE* vae = nullptr, Rng* rng = nullptr) {
  GuidingLoss out;
  std::vector<ad::Var> terms;
  auto add = [&](double weight, const ad::Var& term, double& slot) {
    slot = term.value().data[0];
    terms.push_back(ad::scale(term, weight));
  };
  if (w.validity > 0.0) add(w.validity, validity_loss(zp, f, target), out.breakdown.validity);
  if (w.proximity > 0.0) add(w.proximity, proximity_loss(ad::constant(z.reshaped(zp.shape())), zp), out.breakdown.proximity);
  if (w.diversity > 0.0) add(w.diversity, diversity_loss(zp), out.breakdown.diversity);
  if (w.plausibility > 0.0) {
    if (!vae || !rng) throw Error("plausibility weight set but no VAE supplied");
    const Binding frozen = bind_parameters(vae->params, false);
    const ad::Var neg_elbo =
        ad::scale(vae->terms(frozen, zp, gaussian_like({zp.rows(), vae->latent}, *rng)).elbo, -1.0);
    double v = 0.0;
    add(w.plausibility, neg_elbo, v);
    out.breakdown.plausibility = v;
  }
  if (terms.empty()) {
    out.total = ad::scale(ad::sum(zp), 0.0);
  } else {
    out.total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) out.total = ad::add(out.total, terms[i]);
  }
  out.breakdown.total = out.total.value().data[0];
  return out;
}

inline void check_compatible(const DiffusionModel& model, const ClassifierNet& f) {
  if (f.input_width != model.dict.row_width())
    throw Error("classifier input width " + std::to_string(f.input_width) + " does not match the diffusion embedding width " +
                std::to_string(model.dict.row_width()));
}

/// Guided generation starting from an already encoded input row.
inline CounterfactualSet generate_counterfactuals(const DiffusionModel& model, const ClassifierNet& f,
                                                  const EncodedRow& x, std::size_t target, const GuidanceConfig& cfg,
                                                  const TabularVAE* vae = nullptr) {
  cfg.validate(model.schedule.steps);
  check_compatible(model, f);
  check_encoded(x, model.schema);
  if (target >= f.classes) throw Error("desired class " + std::to_string(target) + " out of range");
  Rng rng(cfg.seed);
  const std::size_t batch = cfg.count, width = model.dict.row_width();
  const Tensor z_row = embed_row(x, model.dict);
  Tensor z({batch, width});
  for (std::size_t b = 0; b < batch; ++b) std::copy(z_row.data.begin(), z_row.data.end(), z.data.begin() + std::ptrdiff_t(b * width));

  Tensor zp = z;
  if (cfg.add_initial_noise) zp = forward_noise(z, cfg.tau, gaussian_like(z.shape, rng), model.schedule);

  const ClampConfig clamp{cfg.strategy, cfg.temperature > 0.0 ? cfg.temperature : model.rounding_temperature};
  CounterfactualSet out;
  for (std::size_t t = cfg.tau; t >= 1; --t) {
    zp = denoise_step(zp, t, model, rng, clamp);
    const ad::Var var = ad::leaf(zp);
    GuidingLoss loss = guiding_loss(var, z, f, target, cfg.lambda, vae, &rng);
    loss.breakdown.step = t;
    out.loss_trace.push_back(loss.breakdown);
    if (cfg.eta > 0.0) {
      const Tensor g = ad::grad(loss.total, var);
      for (std::size_t i = 0; i < zp.size(); ++i) zp.data[i] -= cfg.eta * g.data[i];
    }
  }
  auto lookup = reverse_lookup(zp, model.dict, cfg.strategy, clamp.temperature, rng);
  out.encoded = std::move(lookup.rows);
  for (const EncodedRow& e : out.encoded) out.rows.push_back(decode_row(e, model.schema));
  out.final_embeddings = zp.reshaped({batch, model.dict.columns(), model.dict.width});
  return out;
}

inline CounterfactualSet generate_counterfactuals(const DiffusionModel& model, const ClassifierNet& f, const Row& x,
                                                  std::size_t target, const GuidanceConfig& cfg,
                                                  const TabularVAE* vae = nullptr) {
  return generate_counterfactuals(model, f, encode_row(x, model.schema), target, cfg, vae);
}

}  // namespace scd
