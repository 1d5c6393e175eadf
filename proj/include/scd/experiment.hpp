#pragma once

// Model bundles, query selection and the experiment grids: method comparison,
// loss dropping, guided step count with and without initial noise, sampling
// strategy, and counterfactual count.

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scd/baselines.hpp"
#include "scd/checkpoint.hpp"
#include "scd/classifier.hpp"
#include "scd/config.hpp"
#include "scd/diffusion.hpp"
#include "scd/guidance.hpp"
#include "scd/metrics.hpp"
#include "scd/plausibility.hpp"
#include "scd/vae.hpp"

namespace scd {

struct ModelBundle {
  DiffusionModel diffusion;
  ClassifierNet classifier;
  ARPlausibilityModel recurrent;
  ARPlausibilityModel transformer;
  std::optional<TabularVAE> vae;

  PlausibilityOracles oracles() const { return {&recurrent, &transformer}; }
  const TabularVAE* vae_ptr() const { return vae ? &*vae : nullptr; }
};

using ProgressFn = std::function<void(const std::string& stage, std::size_t epoch, double loss)>;

/// Trains every model of the bundle in dependency order.
inline ModelBundle train_bundle(const Dataset& data, const RunConfig& cfg, const ProgressFn& progress = {}) {
  auto hook = [&](const std::string& stage) {
    return [&progress, stage](std::size_t epoch, double loss) {
      if (progress) progress(stage, epoch, loss);
    };
  };
  ModelBundle m;
  m.diffusion = train_diffusion(data, cfg.diffusion, nullptr, hook("diffusion"));
  m.classifier = train_classifier(data, m.diffusion.dict, cfg.classifier.hidden, cfg.classifier.train, nullptr,
                                  hook("classifier"));
  m.recurrent = train_plausibility(data, ARVariant::recurrent, cfg.plausibility.arch, cfg.plausibility.train, nullptr,
                                   hook("recurrent"));
  m.transformer = train_plausibility(data, ARVariant::causal_transformer, cfg.plausibility.arch, cfg.plausibility.train,
                                     nullptr, hook("transformer"));
  m.vae = train_vae(data, m.diffusion.dict, cfg.vae.hidden, cfg.vae.latent, cfg.vae.train, nullptr, hook("vae"));
  return m;
}

inline const char* const bundle_files[] = {"diffusion.ckpt", "classifier.ckpt", "recurrent.ckpt", "transformer.ckpt",
                                            "vae.ckpt"};

inline std::string bundle_path(const std::string& dir, const char* file) {
  return (std::filesystem::path(dir) / file).string();
}

inline void save_diffusion(const std::string& dir, const DiffusionModel& d) {
  std::filesystem::create_directories(dir);
  save_checkpoint(bundle_path(dir, "diffusion.ckpt"), to_checkpoint(d));
}

inline DiffusionModel load_diffusion(const std::string& dir) {
  const auto path = bundle_path(dir, "diffusion.ckpt");
  if (!std::filesystem::exists(path)) throw Error("missing diffusion checkpoint " + path + " (run train-diffusion first)");
  return diffusion_from_checkpoint(load_checkpoint(path));
}

inline void save_bundle(const std::string& dir, const ModelBundle& m) {
  save_diffusion(dir, m.diffusion);
  save_checkpoint(bundle_path(dir, "classifier.ckpt"), to_checkpoint(m.classifier, m.diffusion));
  save_checkpoint(bundle_path(dir, "recurrent.ckpt"), to_checkpoint(m.recurrent, m.diffusion.schema));
  save_checkpoint(bundle_path(dir, "transformer.ckpt"), to_checkpoint(m.transformer, m.diffusion.schema));
  if (m.vae) save_checkpoint(bundle_path(dir, "vae.ckpt"), to_checkpoint(*m.vae, m.diffusion));
}

/// Loads every checkpoint in `dir`. The VAE is optional; the rest are required.
inline ModelBundle load_bundle(const std::string& dir) {
  ModelBundle m;
  m.diffusion = load_diffusion(dir);
  auto need = [&](const char* file, const char* command) {
    const auto path = bundle_path(dir, file);
    if (!std::filesystem::exists(path))
      throw Error(std::string("missing checkpoint ") + path + " (run " + command + "; it must match schema digest " +
                  schema_digest(m.diffusion.schema) + ")");
    return load_checkpoint(path);
  };
  m.classifier = classifier_from_checkpoint(need("classifier.ckpt", "train-classifier"), m.diffusion);
  m.recurrent = plausibility_from_checkpoint(need("recurrent.ckpt", "train-plausibility"), m.diffusion.schema);
  m.transformer = plausibility_from_checkpoint(need("transformer.ckpt", "train-plausibility"), m.diffusion.schema);
  if (std::filesystem::exists(bundle_path(dir, "vae.ckpt")))
    m.vae = vae_from_checkpoint(load_checkpoint(bundle_path(dir, "vae.ckpt")), m.diffusion);
  return m;
}

/// Kind, config digest and metadata of each checkpoint file present in `dir`.
inline nlohmann::json bundle_info(const std::string& dir) {
  nlohmann::json out = nlohmann::json::array();
  for (const char* file : bundle_files) {
    const auto path = bundle_path(dir, file);
    if (!std::filesystem::exists(path)) continue;
    const Checkpoint ck = load_checkpoint(path);
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, t] : ck.params) params[name] = t.shape;
    nlohmann::json config = ck.config;
    config.erase("schema");
    out.push_back({{"file", file}, {"kind", ck.kind}, {"config", config}, {"metadata", ck.metadata}, {"parameters", params}});
  }
  return out;
}

struct Query {
  EncodedRow x;
  std::size_t target = 0;
};

/// Random dataset rows, each paired with the class after its predicted one.
inline std::vector<Query> select_queries(const Dataset& data, const ModelBundle& m, std::size_t count,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(count, order.size()));
  std::vector<EncodedRow> rows;
  for (std::size_t i : order) rows.push_back(data.rows[i]);
  const auto pred = predict_classes(rows, m.classifier, m.diffusion.dict);
  std::vector<Query> out;
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back({rows[i], (pred[i] + 1) % m.classifier.classes});
  return out;
}

enum class Method { scd, wachter, dice, dice_vae };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::scd: return "scd";
    case Method::wachter: return "wachter";
    case Method::dice: return "dice";
    case Method::dice_vae: return "dice_vae";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "scd") return Method::scd;
  return static_cast<Method>(static_cast<int>(parse_baseline_method(s)) + 1);
}

inline BaselineMethod baseline_of(Method m) {
  if (m == Method::scd) throw Error("scd is not a baseline method");
  return static_cast<BaselineMethod>(static_cast<int>(m) - 1);
}

/// Full setting of one method run; only the matching half is used.
struct MethodSetting {
  Method method = Method::scd;
  GuidanceConfig guidance;
  BaselineConfig baseline;
};

inline MethodSetting default_setting(Method m, const RunConfig& cfg) {
  MethodSetting s;
  s.method = m;
  s.guidance = cfg.guidance;
  if (m != Method::scd) s.baseline = cfg.baselines.for_method(baseline_of(m), cfg.guidance.count, cfg.guidance.seed);
  return s;
}

inline LossWeights& weights_of(MethodSetting& s) { return s.method == Method::scd ? s.guidance.lambda : s.baseline.lambda; }

inline CounterfactualSet run_method(const ModelBundle& m, const Query& q, const MethodSetting& s, std::uint64_t seed) {
  if (s.method == Method::scd) {
    GuidanceConfig g = s.guidance;
    g.seed = seed;
    return generate_counterfactuals(m.diffusion, m.classifier, q.x, q.target, g, m.vae_ptr());
  }
  BaselineConfig b = s.baseline;
  b.method = baseline_of(s.method);
  b.seed = seed;
  return baseline_generate(m.classifier, q.x, q.target, b, m.diffusion.dict, m.diffusion.schema, m.vae_ptr());
}

/// Metrics averaged over queries.
struct CellResult {
  std::string grid;
  std::string method;
  std::string variant;
  nlohmann::json params;
  MetricSummary mean;
  std::size_t queries = 0;
};

inline CellResult run_cell(const ModelBundle& m, const std::vector<Query>& queries, const MethodSetting& s,
                           std::uint64_t seed) {
  if (queries.empty()) throw Error("run_cell: no queries");
  CellResult cell;
  cell.method = to_string(s.method);
  cell.queries = queries.size();
  double rec = 0.0, tra = 0.0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const CounterfactualSet set = run_method(m, queries[i], s, seed + i);
    const CounterfactualReport r = evaluate(cell.method, set.encoded, queries[i].x, queries[i].target, m.classifier,
                                            m.diffusion.dict, m.diffusion.schema, m.oracles());
    cell.mean.count += r.all.count;
    cell.mean.validity += r.all.validity;
    cell.mean.proximity += r.all.proximity;
    cell.mean.raw_mean_distance += r.all.raw_mean_distance;
    cell.mean.diversity += r.all.diversity;
    rec += r.all.plausibility_recurrent.value_or(0.0);
    tra += r.all.plausibility_transformer.value_or(0.0);
  }
  const double n = double(queries.size());
  cell.mean.validity /= n;
  cell.mean.proximity /= n;
  cell.mean.raw_mean_distance /= n;
  cell.mean.diversity /= n;
  cell.mean.plausibility_recurrent = rec / n;
  cell.mean.plausibility_transformer = tra / n;
  return cell;
}

inline nlohmann::json to_json(const CellResult& c) {
  nlohmann::json j = to_json(c.mean);
  j["grid"] = c.grid;
  j["method"] = c.method;
  j["variant"] = c.variant;
  j["params"] = c.params;
  j["queries"] = c.queries;
  return j;
}

// ---------------------------------------------------------------------------
// Grids

enum class Grid { methods, loss_drop, steps, strategy, batch };

inline std::string to_string(Grid g) {
  switch (g) {
    case Grid::methods: return "methods";
    case Grid::loss_drop: return "loss-drop";
    case Grid::steps: return "steps";
    case Grid::strategy: return "strategy";
    case Grid::batch: return "batch";
  }
  return "?";
}

inline Grid parse_grid(const std::string& s) {
  for (Grid g : {Grid::methods, Grid::loss_drop, Grid::steps, Grid::strategy, Grid::batch})
    if (to_string(g) == s) return g;
  throw Error("unknown grid '" + s + "' (expected methods, loss-drop, steps, strategy or batch)");
}

struct GridCell {
  std::string variant;
  MethodSetting setting;
  nlohmann::json params;
};

/// Cell definitions of a grid, in output order.
inline std::vector<GridCell> grid_cells(Grid g, const RunConfig& cfg) {
  std::vector<GridCell> cells;
  switch (g) {
    case Grid::methods:
      for (Method m : {Method::scd, Method::dice, Method::wachter, Method::dice_vae})
        cells.push_back({"default", default_setting(m, cfg), nlohmann::json::object()});
      break;
    case Grid::loss_drop:
      for (Method m : {Method::scd, Method::dice}) {
        const MethodSetting base = default_setting(m, cfg);
        cells.push_back({"all", base, {{"dropped", nullptr}}});
        for (const char* term : {"validity", "proximity", "diversity"}) {
          MethodSetting s = base;
          LossWeights& w = weights_of(s);
          (std::string(term) == "validity" ? w.validity : std::string(term) == "proximity" ? w.proximity : w.diversity) =
              0.0;
          cells.push_back({std::string("-") + term, s, {{"dropped", term}}});
        }
      }
      break;
    case Grid::steps:
      for (std::size_t tau : cfg.evaluation.taus)
        for (bool noise : {true, false}) {
          MethodSetting s = default_setting(Method::scd, cfg);
          s.guidance.tau = tau;
          s.guidance.add_initial_noise = noise;
          cells.push_back({"tau=" + std::to_string(tau) + (noise ? ",noise" : ",no-noise"), s,
                           {{"tau", tau}, {"add_initial_noise", noise}}});
        }
      break;
    case Grid::strategy:
      for (SamplingStrategy st : all_strategies) {
        MethodSetting s = default_setting(Method::scd, cfg);
        s.guidance.strategy = st;
        cells.push_back({to_string(st), s, {{"strategy", to_string(st)}}});
      }
      break;
    case Grid::batch:
      for (std::size_t b : cfg.evaluation.batch_sizes) {
        MethodSetting s = default_setting(Method::scd, cfg);
        s.guidance.count = b;
        cells.push_back({"B=" + std::to_string(b), s, {{"B", b}}});
      }
      break;
  }
  return cells;
}

inline std::vector<CellResult> run_grid(Grid g, const ModelBundle& m, const std::vector<Query>& queries,
                                        const RunConfig& cfg,
                                        const std::function<void(const CellResult&)>& on_cell = {}) {
  std::vector<CellResult> out;
  for (const GridCell& gc : grid_cells(g, cfg)) {
    CellResult r = run_cell(m, queries, gc.setting, cfg.guidance.seed);
    r.grid = to_string(g);
    r.variant = gc.variant;
    r.params = gc.params;
    if (on_cell) on_cell(r);
    out.push_back(std::move(r));
  }
  return out;
}

inline const CellResult& find_cell(const std::vector<CellResult>& cells, const std::string& method,
                                   const std::string& variant) {
  for (const CellResult& c : cells)
    if (c.method == method && c.variant == variant) return c;
  throw Error("no cell " + method + "/" + variant);
}

}  // namespace scd
