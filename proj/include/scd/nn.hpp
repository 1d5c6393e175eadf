#pragma once

// Parameter containers, initialisation, and the first-order optimisers used
// to fit every network in the library.

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <numeric>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "scd/autodiff.hpp"
#include "scd/tensor.hpp"

namespace scd {

using Rng = std::mt19937_64;

/// Named parameter tensors. Ordered so serialisation and iteration are stable.
using Parameters = std::map<std::string, Tensor>;

inline Tensor random_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : t.data) v = stddev * dist(rng);
  return t;
}

inline Tensor gaussian_like(const Shape& shape, Rng& rng) { return random_normal(shape, 1.0, rng); }

/// Dense layer weights with fan-in scaled init; `zero` gives all-zero weights.
inline void init_dense(Parameters& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       bool zero = false) {
  params[name + ".w"] = zero ? Tensor::matrix(in, out) : random_normal({in, out}, 1.0 / std::sqrt(double(in)), rng);
  params[name + ".b"] = Tensor({out}, 0.0);
}

inline std::size_t parameter_count(const Parameters& params) {
  std::size_t n = 0;
  for (const auto& [_, t] : params) n += t.size();
  return n;
}

/// Parameters wrapped as graph leaves for one forward/backward pass.
struct Binding {
  std::map<std::string, ad::Var> vars;

  const ad::Var& operator[](const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw Error("missing parameter '" + name + "'");
    return it->second;
  }

  std::vector<ad::Var> list() const {
    std::vector<ad::Var> out;
    out.reserve(vars.size());
    for (const auto& [_, v] : vars) out.push_back(v);
    return out;
  }
};

inline Binding bind_parameters(const Parameters& params, bool trainable) {
  Binding b;
  for (const auto& [name, t] : params) b.vars.emplace(name, ad::leaf(t, trainable));
  return b;
}

inline Parameters gradients(const ad::Var& loss, const Binding& binding) {
  const std::vector<ad::Var> vars = binding.list();
  std::vector<Tensor> grads = ad::grad(loss, vars);
  Parameters out;
  std::size_t i = 0;
  for (const auto& [name, _] : binding.vars) out.emplace(name, std::move(grads[i++]));
  return out;
}

inline ad::Var dense(const Binding& b, const std::string& name, const ad::Var& x) {
  return ad::affine(x, b[name + ".w"], b[name + ".b"]);
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_global_norm(Parameters& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, g] : grads) sq += g.squared_norm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& [_, g] : grads)
      for (double& v : g.data) v *= f;
  }
  return norm;
}

struct OptimizerConfig {
  std::string kind = "adam";  // "adam" or "sgd"
  double learning_rate = 1e-3;
  std::size_t warmup_steps = 0;
  double half_life = 0.0;  // steps; 0 disables decay
  double grad_clip = 0.0;  // global norm; 0 disables clipping
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Linear warmup followed by exponential decay with the given half-life.
inline double scheduled_learning_rate(const OptimizerConfig& cfg, std::size_t step) {
  double lr = cfg.learning_rate;
  if (cfg.warmup_steps > 0) lr *= std::min(1.0, double(step + 1) / double(cfg.warmup_steps));
  if (cfg.half_life > 0.0) lr *= std::pow(0.5, double(step) / cfg.half_life);
  return lr;
}

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.kind != "adam" && cfg_.kind != "sgd") throw Error("unknown optimizer '" + cfg_.kind + "'");
  }

  void step(Parameters& params, Parameters grads) {
    clip_global_norm(grads, cfg_.grad_clip);
    const double lr = scheduled_learning_rate(cfg_, steps_);
    ++steps_;
    for (auto& [name, g] : grads) {
      Tensor& p = params.at(name);
      if (cfg_.kind == "sgd") {
        for (std::size_t i = 0; i < p.size(); ++i) p.data[i] -= lr * g.data[i];
        continue;
      }
      auto& [m, v] = moments_[name];
      if (m.size() != p.size()) {
        m.assign(p.size(), 0.0);
        v.assign(p.size(), 0.0);
      }
      const double c1 = 1.0 - std::pow(cfg_.beta1, double(steps_));
      const double c2 = 1.0 - std::pow(cfg_.beta2, double(steps_));
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g.data[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g.data[i] * g.data[i];
        p.data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
      }
    }
  }

  std::size_t steps() const noexcept { return steps_; }

 private:
  OptimizerConfig cfg_;
  std::size_t steps_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

/// Minibatch training budget shared by every trainer.
struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch = 64;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
};

/// Mean training loss per epoch.
struct TrainingLog {
  std::vector<double> epoch_loss;

  double initial() const { return epoch_loss.empty() ? 0.0 : epoch_loss.front(); }
  double last() const { return epoch_loss.empty() ? 0.0 : epoch_loss.back(); }
};

/// Shuffled minibatch index lists covering [0, n) once.
inline std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch)
    out.emplace_back(order.begin() + std::ptrdiff_t(i), order.begin() + std::ptrdiff_t(std::min(n, i + batch)));
  return out;
}

}  // namespace scd
