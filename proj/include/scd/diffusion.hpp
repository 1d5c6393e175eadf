#pragma once

// Gaussian diffusion over row embeddings with an x0-predicting denoiser.

#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <vector>

#include "scd/autodiff.hpp"
#include "scd/embedding.hpp"
#include "scd/nn.hpp"
#include "scd/tabular.hpp"

namespace scd {

/// Coefficient tables indexed by step t in [0, T]. Index 0 of the per-step
/// tables (beta, alpha, gamma1, gamma2) is unused and holds 0.
struct NoiseSchedule {
  std::size_t steps = 0;
  double offset = 0.008;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> gamma1;
  std::vector<double> gamma2;

  void check_step(std::size_t t) const {
    if (t < 1 || t > steps)
      throw Error("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
  }
};

/// Cosine schedule: alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2),
/// with beta clipped to [1e-8, 0.999] and alpha_bar re-accumulated from the clipped betas.
inline NoiseSchedule cosine_schedule(std::size_t steps, double offset = 0.008) {
  if (steps < 1) throw Error("cosine_schedule: step count must be at least 1");
  auto f = [&](double t) {
    const double c = std::cos((t / double(steps) + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule s;
  s.steps = steps;
  s.offset = offset;
  s.beta.assign(steps + 1, 0.0);
  s.alpha.assign(steps + 1, 0.0);
  s.alpha_bar.assign(steps + 1, 1.0);
  s.gamma1.assign(steps + 1, 0.0);
  s.gamma2.assign(steps + 1, 0.0);
  const double f0 = f(0.0);
  for (std::size_t t = 1; t <= steps; ++t) {
    const double raw = 1.0 - (f(double(t)) / f0) / (f(double(t - 1)) / f0);
    s.beta[t] = std::clamp(raw, 1e-8, 0.999);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  for (std::size_t t = 1; t <= steps; ++t) {
    const double denom = 1.0 - s.alpha_bar[t];
    s.gamma1[t] = s.beta[t] * std::sqrt(s.alpha_bar[t - 1]) / denom;
    s.gamma2[t] = (1.0 - s.alpha_bar[t - 1]) * std::sqrt(s.alpha[t]) / denom;
  }
  return s;
}

/// sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps
inline Tensor forward_noise(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule) {
  schedule.check_step(t);
  if (eps.size() != z0.size()) throw Error("forward_noise: noise shape differs from signal shape");
  Tensor out = z0;
  const double a = std::sqrt(schedule.alpha_bar[t]);
  const double b = std::sqrt(1.0 - schedule.alpha_bar[t]);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a * z0.data[i] + b * eps.data[i];
  return out;
}

/// Sinusoidal encoding of the step index, width `width` (even).
inline std::vector<double> time_embedding(std::size_t t, std::size_t width) {
  std::vector<double> out(width, 0.0);
  const std::size_t half = width / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(std::max<std::size_t>(half, 1)));
    out[i] = std::sin(double(t) * freq);
    out[half + i] = std::cos(double(t) * freq);
  }
  return out;
}

/// g(z_t, t): MLP over the flattened noisy embedding concatenated with a
/// sinusoidal step encoding; predicts the clean embedding.
struct DenoiserNet {
  std::size_t input_width = 0;
  std::size_t time_width = 32;
  std::size_t hidden = 64;
  Parameters params;

  static DenoiserNet create(std::size_t input_width, std::size_t time_width, std::size_t hidden, Rng& rng) {
    DenoiserNet g{input_width, time_width, hidden, {}};
    init_dense(g.params, "denoiser.in", input_width + time_width, hidden, rng);
    init_dense(g.params, "denoiser.mid", hidden, hidden, rng);
    init_dense(g.params, "denoiser.out", hidden, input_width, rng, /*zero=*/true);
    return g;
  }

  ad::Var forward(const Binding& b, const ad::Var& zt, const std::vector<std::size_t>& steps) const {
    if (zt.cols() != input_width)
      throw Error("denoiser: input width " + std::to_string(zt.cols()) + " != " + std::to_string(input_width));
    if (steps.size() != zt.rows()) throw Error("denoiser: one step index per row required");
    Tensor te = Tensor::matrix(steps.size(), time_width);
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const auto e = time_embedding(steps[i], time_width);
      std::copy(e.begin(), e.end(), te.data.begin() + std::ptrdiff_t(i * time_width));
    }
    const ad::Var x = ad::concat_cols({zt, ad::constant(std::move(te))});
    const ad::Var h1 = ad::gelu(dense(b, "denoiser.in", x));
    const ad::Var h2 = ad::gelu(dense(b, "denoiser.mid", h1));
    return dense(b, "denoiser.out", h2);
  }

  Tensor predict(const Tensor& zt, std::size_t t) const {
    const Binding b = bind_parameters(params, false);
    const Tensor flat = zt.reshaped({zt.rows(), zt.cols()});
    return forward(b, ad::constant(flat), std::vector<std::size_t>(flat.rows(), t)).value().reshaped(zt.shape);
  }
};

struct DiffusionModel {
  TableSchema schema;
  NoiseSchedule schedule;
  EmbeddingDictionary dict;
  DenoiserNet denoiser;
  double rounding_temperature = 1.0;
};

/// Reverse-lookup settings applied to the predicted clean embedding.
struct ClampConfig {
  SamplingStrategy strategy = SamplingStrategy::max;
  double temperature = 1.0;
};

using Predictor = std::function<Tensor(const Tensor& zt, std::size_t t)>;

/// One ancestral step: gamma1 * x0_hat + gamma2 * z_t + sqrt(beta_t) * xi, with
/// no noise at t = 1. `noise_scale` multiplies xi (1 for sampling).
inline Tensor denoise_step(const Tensor& zt, std::size_t t, const NoiseSchedule& schedule, const Predictor& predict,
                           const EmbeddingDictionary* dict, const std::optional<ClampConfig>& clamp, Rng& rng,
                           double noise_scale = 1.0) {
  schedule.check_step(t);
  Tensor x0 = predict(zt, t);
  if (x0.size() != zt.size()) throw Error("denoise_step: predictor changed the embedding size");
  if (clamp) {
    if (!dict) throw Error("denoise_step: clamping requires an embedding dictionary");
    x0 = reverse_lookup(x0.reshaped({zt.rows(), zt.cols()}), *dict, clamp->strategy, clamp->temperature, rng)
             .snapped.reshaped(zt.shape);
  }
  Tensor out = zt;
  const double g1 = schedule.gamma1[t], g2 = schedule.gamma2[t];
  const double sigma = t > 1 ? std::sqrt(schedule.beta[t]) * noise_scale : 0.0;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = g1 * x0.data[i] + g2 * zt.data[i];
    if (sigma > 0.0) out.data[i] += sigma * normal(rng);
  }
  return out;
}

inline Tensor denoise_step(const Tensor& zt, std::size_t t, const DiffusionModel& model, Rng& rng,
                           const std::optional<ClampConfig>& clamp = std::nullopt) {
  const Predictor predict = [&model](const Tensor& z, std::size_t step) { return model.denoiser.predict(z, step); };
  return denoise_step(zt, t, model.schedule, predict, &model.dict, clamp, rng);
}

struct DiffusionConfig {
  std::size_t steps = 100;
  double schedule_offset = 0.008;
  std::size_t embedding_width = 16;
  std::size_t time_width = 32;
  std::size_t hidden = 64;
  double embedding_init_scale = 1.0;
  /// Weight of the dictionary rounding cross-entropy added to the x0 error;
  /// keeps jointly trained embeddings from collapsing onto each other.
  double rounding_weight = 1.0;
  double rounding_temperature = 1.0;
  TrainConfig train;
};

struct DiffusionLossTerms {
  ad::Var total;
  ad::Var error;     // ||x0_hat - z0||^2 / size
  ad::Var rounding;  // mean over columns of -log p(id | x0_hat)
};

/// Training objective for one batch with given steps and noise.
inline DiffusionLossTerms diffusion_loss(const DenoiserNet& denoiser, const Binding& b, std::size_t columns,
                                         const std::vector<EncodedRow>& rows, const std::vector<std::size_t>& steps,
                                         const Tensor& eps, const NoiseSchedule& schedule, double rounding_weight,
                                         double rounding_temperature) {
  std::vector<ad::Var> tables;
  for (std::size_t c = 0; c < columns; ++c) tables.push_back(b["embedding." + std::to_string(c)]);
  const ad::Var z0 = embed_rows(rows, tables);
  std::vector<double> signal, noise;
  for (std::size_t t : steps) {
    schedule.check_step(t);
    signal.push_back(std::sqrt(schedule.alpha_bar[t]));
    noise.push_back(std::sqrt(1.0 - schedule.alpha_bar[t]));
  }
  const ad::Var zt = ad::add(ad::scale_rows(z0, signal), ad::scale_rows(ad::constant(eps), noise));
  const ad::Var pred = denoiser.forward(b, zt, steps);
  DiffusionLossTerms terms;
  terms.error = ad::scale(ad::squared_distance(pred, z0), 1.0 / double(pred.size()));
  terms.total = terms.error;
  if (rounding_weight > 0.0) {
    const std::size_t d = tables.front().cols();
    ad::Var ce;
    for (std::size_t c = 0; c < columns; ++c) {
      std::vector<std::size_t> targets;
      for (const EncodedRow& r : rows) targets.push_back(r[c]);
      const ad::Var logits = ad::negative_distance_logits(ad::slice_cols(pred, c * d, d), tables[c], rounding_temperature);
      const ad::Var term = ad::cross_entropy(logits, std::move(targets));
      ce = ce.valid() ? ad::add(ce, term) : term;
    }
    terms.rounding = ad::scale(ce, 1.0 / double(columns));
    terms.total = ad::add(terms.error, ad::scale(terms.rounding, rounding_weight));
  }
  return terms;
}

/// Jointly fits the denoiser and the embedding dictionary; the returned
/// dictionary is frozen for every downstream model.
inline DiffusionModel train_diffusion(const Dataset& data, const DiffusionConfig& cfg, TrainingLog* log = nullptr,
                                      const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (data.rows.empty()) throw Error("train_diffusion: empty dataset");
  Rng rng(cfg.train.seed);
  DiffusionModel model;
  model.schema = data.schema;
  model.schedule = cosine_schedule(cfg.steps, cfg.schedule_offset);
  model.rounding_temperature = cfg.rounding_temperature;
  model.dict = EmbeddingDictionary::random(data.schema.cardinalities(), cfg.embedding_width, rng, cfg.embedding_init_scale);
  model.denoiser = DenoiserNet::create(model.dict.row_width(), cfg.time_width, cfg.hidden, rng);
  Parameters params = model.denoiser.params;
  model.dict.to_parameters(params);
  Optimizer opt(cfg.train.optimizer);
  std::uniform_int_distribution<std::size_t> step_dist(1, cfg.steps);
  const std::size_t columns = data.schema.size();
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& batch : minibatches(data.size(), cfg.train.batch, rng)) {
      std::vector<EncodedRow> rows;
      std::vector<std::size_t> steps;
      for (std::size_t i : batch) {
        rows.push_back(data.rows[i]);
        steps.push_back(step_dist(rng));
      }
      const Tensor eps = gaussian_like({rows.size(), model.dict.row_width()}, rng);
      const Binding b = bind_parameters(params, true);
      const auto terms = diffusion_loss(model.denoiser, b, columns, rows, steps, eps, model.schedule,
                                        cfg.rounding_weight, cfg.rounding_temperature);
      opt.step(params, gradients(terms.total, b));
      total += terms.total.value().data[0] * double(rows.size());
      count += rows.size();
    }
    const double mean_loss = total / double(count);
    if (log) log->epoch_loss.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  for (auto& [name, t] : model.denoiser.params) t = params.at(name);
  model.dict = EmbeddingDictionary::from_parameters(params, columns);
  return model;
}

struct SampleResult {
  std::vector<EncodedRow> encoded;
  std::vector<Row> rows;
};

/// Ancestral sampling from pure noise down to t = 0, then reverse lookup.
inline SampleResult sample_unconditional(const DiffusionModel& model, std::size_t count, Rng& rng,
                                         SamplingStrategy strategy = SamplingStrategy::max,
                                         const std::optional<ClampConfig>& clamp = std::nullopt) {
  SampleResult out;
  if (count == 0) return out;
  Tensor z = gaussian_like({count, model.dict.columns(), model.dict.width}, rng);
  for (std::size_t t = model.schedule.steps; t >= 1; --t) z = denoise_step(z, t, model, rng, clamp);
  auto lookup = reverse_lookup(z.reshaped({count, model.dict.row_width()}), model.dict, strategy,
                               model.rounding_temperature, rng);
  out.encoded = std::move(lookup.rows);
  for (const EncodedRow& e : out.encoded) out.rows.push_back(decode_row(e, model.schema));
  return out;
}

}  // namespace scd
