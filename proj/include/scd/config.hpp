#pragma once

// Run configuration. A config file is a JSON object overlaid key-by-key on the
// defaults; keys absent from the defaults are rejected so typos fail loudly.

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "scd/baselines.hpp"
#include "scd/checkpoint.hpp"
#include "scd/diffusion.hpp"
#include "scd/guidance.hpp"
#include "scd/nn.hpp"
#include "scd/plausibility.hpp"
#include "scd/synthetic.hpp"

namespace scd {

struct DataConfig {
  std::string path;  // empty: generate the synthetic benchmark
  std::string label = "label";
  std::vector<std::string> numeric = {"age", "hours"};
  std::size_t bin_count = 5;
  std::string binning = "equal_frequency";
  std::size_t synthetic_rows = 2000;
  std::uint64_t synthetic_seed = 7;
};

struct ClassifierConfig {
  std::size_t hidden = 64;
  TrainConfig train;
};

struct PlausibilityConfig {
  ARConfig arch;
  TrainConfig train;
};

struct VAEConfig {
  std::size_t hidden = 64;
  std::size_t latent = 8;
  TrainConfig train;
};

struct BaselineDefaults {
  std::size_t steps = 100;
  double learning_rate = 2.5;
  double temperature = 0.5;
  double jitter = 0.01;
  LossWeights wachter{1.0, 0.1, 0.0, 0.0};
  LossWeights dice{1.0, 0.1, 0.0325, 0.0};
  LossWeights dice_vae{1.0, 0.1, 0.0325, 0.01};

  BaselineConfig for_method(BaselineMethod m, std::size_t count, std::uint64_t seed) const {
    BaselineConfig c;
    c.method = m;
    c.steps = steps;
    c.learning_rate = learning_rate;
    c.temperature = temperature;
    c.jitter = jitter;
    c.count = count;
    c.seed = seed;
    c.lambda = m == BaselineMethod::wachter ? wachter : m == BaselineMethod::dice ? dice : dice_vae;
    return c;
  }
};

struct EvaluationConfig {
  std::size_t queries = 40;  // input rows per experiment cell
  std::uint64_t seed = 11;
  std::vector<std::size_t> taus = {25, 50, 100};
  std::vector<std::size_t> batch_sizes = {2, 4, 8};
};

struct RunConfig {
  DataConfig data;
  DiffusionConfig diffusion;
  ClassifierConfig classifier;
  PlausibilityConfig plausibility;
  VAEConfig vae;
  GuidanceConfig guidance;
  BaselineDefaults baselines;
  EvaluationConfig evaluation;

  RunConfig() {
    diffusion.train.epochs = 150;
    diffusion.train.batch = 64;
    diffusion.train.optimizer.learning_rate = 2e-3;
    diffusion.train.optimizer.half_life = 2000;
    diffusion.train.optimizer.grad_clip = 1.0;
    diffusion.train.seed = 1;
    classifier.train.epochs = 30;
    classifier.train.optimizer.learning_rate = 3e-3;
    classifier.train.seed = 2;
    plausibility.train.epochs = 30;
    plausibility.train.optimizer.learning_rate = 3e-3;
    plausibility.train.seed = 3;
    vae.train.epochs = 40;
    vae.train.optimizer.learning_rate = 2e-3;
    vae.train.seed = 4;
  }
};

// ---------------------------------------------------------------------------
// JSON mapping

inline void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = {{"kind", c.kind},         {"learning_rate", c.learning_rate}, {"warmup_steps", c.warmup_steps},
       {"half_life", c.half_life}, {"grad_clip", c.grad_clip},     {"beta1", c.beta1},
       {"beta2", c.beta2},       {"epsilon", c.epsilon}};
}
inline void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  j.at("kind").get_to(c.kind);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("warmup_steps").get_to(c.warmup_steps);
  j.at("half_life").get_to(c.half_life);
  j.at("grad_clip").get_to(c.grad_clip);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("epsilon").get_to(c.epsilon);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs}, {"batch", c.batch}, {"optimizer", c.optimizer}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("epochs").get_to(c.epochs);
  j.at("batch").get_to(c.batch);
  j.at("optimizer").get_to(c.optimizer);
  j.at("seed").get_to(c.seed);
}

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"validity", w.validity}, {"proximity", w.proximity}, {"diversity", w.diversity},
       {"plausibility", w.plausibility}};
}
inline void from_json(const nlohmann::json& j, LossWeights& w) {
  j.at("validity").get_to(w.validity);
  j.at("proximity").get_to(w.proximity);
  j.at("diversity").get_to(w.diversity);
  j.at("plausibility").get_to(w.plausibility);
}

inline void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"path", c.path},
       {"label", c.label},
       {"numeric", c.numeric},
       {"bin_count", c.bin_count},
       {"binning", c.binning},
       {"synthetic_rows", c.synthetic_rows},
       {"synthetic_seed", c.synthetic_seed}};
}
inline void from_json(const nlohmann::json& j, DataConfig& c) {
  j.at("path").get_to(c.path);
  j.at("label").get_to(c.label);
  j.at("numeric").get_to(c.numeric);
  j.at("bin_count").get_to(c.bin_count);
  j.at("binning").get_to(c.binning);
  j.at("synthetic_rows").get_to(c.synthetic_rows);
  j.at("synthetic_seed").get_to(c.synthetic_seed);
}

inline void to_json(nlohmann::json& j, const DiffusionConfig& c) {
  j = {{"steps", c.steps},
       {"schedule_offset", c.schedule_offset},
       {"embedding_width", c.embedding_width},
       {"time_width", c.time_width},
       {"hidden", c.hidden},
       {"embedding_init_scale", c.embedding_init_scale},
       {"rounding_weight", c.rounding_weight},
       {"rounding_temperature", c.rounding_temperature},
       {"train", c.train}};
}
inline void from_json(const nlohmann::json& j, DiffusionConfig& c) {
  j.at("steps").get_to(c.steps);
  j.at("schedule_offset").get_to(c.schedule_offset);
  j.at("embedding_width").get_to(c.embedding_width);
  j.at("time_width").get_to(c.time_width);
  j.at("hidden").get_to(c.hidden);
  j.at("embedding_init_scale").get_to(c.embedding_init_scale);
  j.at("rounding_weight").get_to(c.rounding_weight);
  j.at("rounding_temperature").get_to(c.rounding_temperature);
  j.at("train").get_to(c.train);
}

inline void to_json(nlohmann::json& j, const ClassifierConfig& c) { j = {{"hidden", c.hidden}, {"train", c.train}}; }
inline void from_json(const nlohmann::json& j, ClassifierConfig& c) {
  j.at("hidden").get_to(c.hidden);
  j.at("train").get_to(c.train);
}

inline void to_json(nlohmann::json& j, const PlausibilityConfig& c) {
  j = {{"hidden", c.arch.hidden}, {"layers", c.arch.layers}, {"heads", c.arch.heads}, {"train", c.train}};
}
inline void from_json(const nlohmann::json& j, PlausibilityConfig& c) {
  j.at("hidden").get_to(c.arch.hidden);
  j.at("layers").get_to(c.arch.layers);
  j.at("heads").get_to(c.arch.heads);
  j.at("train").get_to(c.train);
}

inline void to_json(nlohmann::json& j, const VAEConfig& c) {
  j = {{"hidden", c.hidden}, {"latent", c.latent}, {"train", c.train}};
}
inline void from_json(const nlohmann::json& j, VAEConfig& c) {
  j.at("hidden").get_to(c.hidden);
  j.at("latent").get_to(c.latent);
  j.at("train").get_to(c.train);
}

inline void to_json(nlohmann::json& j, const GuidanceConfig& c) {
  j = {{"tau", c.tau},
       {"eta", c.eta},
       {"count", c.count},
       {"lambda", c.lambda},
       {"strategy", to_string(c.strategy)},
       {"temperature", c.temperature},
       {"add_initial_noise", c.add_initial_noise},
       {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, GuidanceConfig& c) {
  j.at("tau").get_to(c.tau);
  j.at("eta").get_to(c.eta);
  j.at("count").get_to(c.count);
  j.at("lambda").get_to(c.lambda);
  c.strategy = parse_strategy(j.at("strategy").get<std::string>());
  j.at("temperature").get_to(c.temperature);
  j.at("add_initial_noise").get_to(c.add_initial_noise);
  j.at("seed").get_to(c.seed);
}

inline void to_json(nlohmann::json& j, const BaselineDefaults& c) {
  j = {{"steps", c.steps},   {"learning_rate", c.learning_rate}, {"temperature", c.temperature},
       {"jitter", c.jitter}, {"wachter", c.wachter},             {"dice", c.dice},
       {"dice_vae", c.dice_vae}};
}
inline void from_json(const nlohmann::json& j, BaselineDefaults& c) {
  j.at("steps").get_to(c.steps);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("temperature").get_to(c.temperature);
  j.at("jitter").get_to(c.jitter);
  j.at("wachter").get_to(c.wachter);
  j.at("dice").get_to(c.dice);
  j.at("dice_vae").get_to(c.dice_vae);
}

inline void to_json(nlohmann::json& j, const EvaluationConfig& c) {
  j = {{"queries", c.queries}, {"seed", c.seed}, {"taus", c.taus}, {"batch_sizes", c.batch_sizes}};
}
inline void from_json(const nlohmann::json& j, EvaluationConfig& c) {
  j.at("queries").get_to(c.queries);
  j.at("seed").get_to(c.seed);
  j.at("taus").get_to(c.taus);
  j.at("batch_sizes").get_to(c.batch_sizes);
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"data", c.data},           {"diffusion", c.diffusion}, {"classifier", c.classifier},
       {"plausibility", c.plausibility}, {"vae", c.vae},       {"guidance", c.guidance},
       {"baselines", c.baselines}, {"evaluation", c.evaluation}};
}
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  j.at("data").get_to(c.data);
  j.at("diffusion").get_to(c.diffusion);
  j.at("classifier").get_to(c.classifier);
  j.at("plausibility").get_to(c.plausibility);
  j.at("vae").get_to(c.vae);
  j.at("guidance").get_to(c.guidance);
  j.at("baselines").get_to(c.baselines);
  j.at("evaluation").get_to(c.evaluation);
}

namespace detail {

inline void overlay(nlohmann::json& base, const nlohmann::json& patch, const std::string& path) {
  if (!patch.is_object()) throw Error("config" + path + ": expected an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key_path = path + "." + it.key();
    if (!base.contains(it.key())) throw Error("config: unknown key '" + key_path.substr(1) + "'");
    nlohmann::json& slot = base[it.key()];
    if (slot.is_object())
      overlay(slot, it.value(), key_path);
    else
      slot = it.value();
  }
}

}  // namespace detail

/// Defaults overlaid with `patch`.
inline RunConfig config_from_json(const nlohmann::json& patch) {
  nlohmann::json merged = RunConfig{};
  detail::overlay(merged, patch, "");
  try {
    return merged.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
}

inline RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  try {
    return config_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("config '" + path + "': " + e.what());
  }
}

/// Reads the configured CSV or generates the synthetic benchmark.
inline Dataset load_dataset(const DataConfig& c) {
  const CsvTable table = c.path.empty() ? make_synthetic({c.synthetic_rows, c.synthetic_seed}) : read_csv(c.path);
  return build_dataset(table, c.label, std::set<std::string>(c.numeric.begin(), c.numeric.end()), c.bin_count,
                       parse_binning_mode(c.binning));
}

}  // namespace scd
