#pragma once

// JSON/HTTP front end over an immutable model bundle. Handlers are plain
// functions from request JSON to response JSON; `make_server` wires them to
// routes. Each request derives its RNG from the request seed alone, so a
// returned seed replays the same answer.

#include <random>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "scd/checkpoint.hpp"
#include "scd/config.hpp"
#include "scd/experiment.hpp"
#include "scd/metrics.hpp"

namespace scd {

struct Diagnostic {
  std::string column;
  std::string message;
};

/// Client error carrying per-column diagnostics; maps to HTTP 400.
class RequestError : public Error {
 public:
  explicit RequestError(const std::string& message, std::vector<Diagnostic> diagnostics = {})
      : Error(message), diagnostics_(std::move(diagnostics)) {}
  const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::vector<Diagnostic> diagnostics_;
};

struct Service {
  const ModelBundle* models = nullptr;
  RunConfig defaults;
  nlohmann::json model_info = nlohmann::json::array();

  const TableSchema& schema() const { return models->diffusion.schema; }
  const ClassifierNet& classifier() const { return models->classifier; }
};

// ---------------------------------------------------------------------------
// Request parsing

/// Accepts {"col": value, ...} or [value, ...] in schema order. Every bad
/// column is reported, not just the first.
inline EncodedRow parse_request_row(const nlohmann::json& j, const TableSchema& schema, const std::string& field) {
  std::vector<Diagnostic> diags;
  std::vector<nlohmann::json> values(schema.size());
  std::vector<bool> present(schema.size(), false);
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto c = schema.index_of(it.key());
      if (!c) {
        diags.push_back({it.key(), "unknown column"});
        continue;
      }
      values[*c] = it.value();
      present[*c] = true;
    }
  } else if (j.is_array()) {
    if (j.size() != schema.size())
      throw RequestError("'" + field + "' has " + std::to_string(j.size()) + " values, expected " +
                         std::to_string(schema.size()));
    for (std::size_t c = 0; c < schema.size(); ++c) {
      values[c] = j[c];
      present[c] = true;
    }
  } else {
    throw RequestError("'" + field + "' must be an object keyed by column name or an array");
  }
  EncodedRow ids(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const ColumnSchema& col = schema.columns[c];
    if (!present[c]) {
      diags.push_back({col.name, "missing value"});
      continue;
    }
    const nlohmann::json& v = values[c];
    Row single(schema.size());
    std::string text;
    if (v.is_number()) {
      text = format_number(v.get<double>());
    } else if (v.is_string()) {
      text = v.get<std::string>();
    } else {
      diags.push_back({col.name, "value must be a string or a number"});
      continue;
    }
    try {
      if (col.kind == ColumnKind::numeric) {
        const auto num = parse_number(text);
        if (!num) throw ValidationError(col.name, "'" + text + "' is not a number");
        ids[c] = detail::bin_of(col.bin_edges, *num);
      } else {
        const auto id = schema.vocabulary.find(c, text);
        if (!id) throw ValidationError(col.name, "unknown value '" + text + "'");
        ids[c] = *id;
      }
    } catch (const ValidationError& e) {
      diags.push_back({col.name, e.what()});
    }
  }
  if (!diags.empty()) throw RequestError("invalid '" + field + "'", std::move(diags));
  return ids;
}

inline bool is_non_negative_integer(const nlohmann::json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

inline std::size_t parse_label(const nlohmann::json& j, const ClassifierNet& f) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    for (std::size_t k = 0; k < f.class_names.size(); ++k)
      if (f.class_names[k] == s) return k;
    throw RequestError("unknown desired_label '" + s + "'", {{f.label_name, "unknown class '" + s + "'"}});
  }
  if (is_non_negative_integer(j) && j.get<std::uint64_t>() < f.classes) return j.get<std::size_t>();
  throw RequestError("desired_label must be a class name or an index below " + std::to_string(f.classes));
}

template <class T>
T optional_field(const nlohmann::json& req, const char* key, T fallback) {
  if (!req.contains(key) || req[key].is_null()) return fallback;
  try {
    return req[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw RequestError(std::string("field '") + key + "' has the wrong type");
  }
}

inline std::uint64_t request_seed(const nlohmann::json& req) {
  if (req.contains("seed") && !req["seed"].is_null()) {
    if (!is_non_negative_integer(req["seed"])) throw RequestError("seed must be a non-negative integer");
    return req["seed"].get<std::uint64_t>();
  }
  std::random_device rd;
  return (std::uint64_t(rd()) << 32) ^ rd();
}

inline nlohmann::json row_json(const Row& row, const TableSchema& schema) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t c = 0; c < row.size(); ++c) {
    if (const double* d = std::get_if<double>(&row[c]))
      j[schema.columns[c].name] = *d;
    else
      j[schema.columns[c].name] = std::get<std::string>(row[c]);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Handlers

inline nlohmann::json handle_schema(const Service& s) {
  nlohmann::json cols = nlohmann::json::array();
  for (std::size_t c = 0; c < s.schema().size(); ++c) {
    const ColumnSchema& col = s.schema().columns[c];
    nlohmann::json j = {{"name", col.name}, {"kind", to_string(col.kind)}};
    if (col.kind == ColumnKind::numeric) {
      nlohmann::json bins = nlohmann::json::array();
      for (std::size_t b = 0; b < col.bin_count(); ++b)
        bins.push_back({{"low", col.bin_edges[b]}, {"high", col.bin_edges[b + 1]}, {"value", col.bin_representatives[b]}});
      j["bins"] = std::move(bins);
    } else {
      j["values"] = s.schema().vocabulary.values(c);
    }
    cols.push_back(std::move(j));
  }
  const GuidanceConfig& g = s.defaults.guidance;
  nlohmann::json strategies = nlohmann::json::array();
  for (SamplingStrategy st : all_strategies) strategies.push_back(to_string(st));
  return {{"columns", std::move(cols)},
          {"label", {{"name", s.classifier().label_name}, {"classes", s.classifier().class_names}}},
          {"defaults", g},
          {"limits", {{"tau", {1, s.models->diffusion.schedule.steps}}, {"B", {1, 64}}}},
          {"strategies", std::move(strategies)},
          {"methods", {"scd", "dice", "wachter", "dice_vae"}}};
}

inline nlohmann::json handle_models(const Service& s) { return {{"models", s.model_info}}; }

inline nlohmann::json handle_predict(const Service& s, const nlohmann::json& req) {
  if (!req.contains("row")) throw RequestError("missing field 'row'");
  const EncodedRow x = parse_request_row(req["row"], s.schema(), "row");
  const Tensor logits = classifier_forward(embed_rows({x}, s.models->diffusion.dict), s.classifier());
  const auto p = softmax(logits.row(0));
  nlohmann::json probs = nlohmann::json::object();
  for (std::size_t k = 0; k < p.size(); ++k) probs[s.classifier().class_names[k]] = p[k];
  const std::size_t best = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  return {{"probabilities", std::move(probs)}, {"predicted", s.classifier().class_names[best]}};
}

inline MethodSetting setting_from_request(const Service& s, const nlohmann::json& req, std::uint64_t seed) {
  const Method method = [&] {
    try {
      return parse_method(optional_field<std::string>(req, "method", "scd"));
    } catch (const RequestError&) {
      throw;
    } catch (const Error& e) {
      throw RequestError(e.what());
    }
  }();
  MethodSetting m = default_setting(method, s.defaults);
  GuidanceConfig& g = m.guidance;
  g.seed = seed;
  g.count = optional_field<std::size_t>(req, "B", g.count);
  g.tau = optional_field<std::size_t>(req, "tau", g.tau);
  g.eta = optional_field<double>(req, "eta", g.eta);
  g.add_initial_noise = optional_field<bool>(req, "add_initial_noise", g.add_initial_noise);
  try {
    g.strategy = parse_strategy(optional_field<std::string>(req, "strategy", to_string(g.strategy)));
  } catch (const RequestError&) {
    throw;
  } catch (const Error& e) {
    throw RequestError(e.what());
  }
  if (g.count < 1 || g.count > 64) throw RequestError("B must be in [1, 64]");
  try {
    g.validate(s.models->diffusion.schedule.steps);
  } catch (const Error& e) {
    throw RequestError(e.what());
  }
  m.baseline.count = g.count;
  m.baseline.seed = seed;
  LossWeights& w = weights_of(m);
  if (req.contains("lambdas")) {
    const auto& l = req["lambdas"];
    if (!l.is_object()) throw RequestError("lambdas must be an object");
    w.validity = optional_field<double>(l, "validity", w.validity);
    w.proximity = optional_field<double>(l, "proximity", w.proximity);
    w.diversity = optional_field<double>(l, "diversity", w.diversity);
    w.plausibility = optional_field<double>(l, "plausibility", w.plausibility);
    for (double v : {w.validity, w.proximity, w.diversity, w.plausibility})
      if (!(v >= 0.0)) throw RequestError("lambdas must be non-negative");
  }
  return m;
}

inline nlohmann::json handle_counterfactuals(const Service& s, const nlohmann::json& req) {
  if (!req.contains("row")) throw RequestError("missing field 'row'");
  if (!req.contains("desired_label")) throw RequestError("missing field 'desired_label'");
  const EncodedRow x = parse_request_row(req["row"], s.schema(), "row");
  const std::size_t target = parse_label(req["desired_label"], s.classifier());
  const std::uint64_t seed = request_seed(req);
  const MethodSetting m = setting_from_request(s, req, seed);
  const CounterfactualSet set = run_method(*s.models, {x, target}, m, seed);
  const CounterfactualReport report = evaluate(to_string(m.method), set.encoded, x, target, s.classifier(),
                                               s.models->diffusion.dict, s.schema(), s.models->oracles());
  nlohmann::json rows = nlohmann::json::array();
  for (const Row& r : set.rows) rows.push_back(row_json(r, s.schema()));
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& b : set.loss_trace) trace.push_back(to_json(b));
  return {{"seed", seed},
          {"method", to_string(m.method)},
          {"desired_label", s.classifier().class_names[target]},
          {"rows", std::move(rows)},
          {"report", to_json(report)},
          {"loss_trace", std::move(trace)}};
}

inline nlohmann::json handle_evaluate(const Service& s, const nlohmann::json& req) {
  for (const char* key : {"rows", "original_row", "desired_label"})
    if (!req.contains(key)) throw RequestError(std::string("missing field '") + key + "'");
  if (!req["rows"].is_array() || req["rows"].empty()) throw RequestError("'rows' must be a non-empty array");
  std::vector<EncodedRow> rows;
  for (std::size_t i = 0; i < req["rows"].size(); ++i)
    rows.push_back(parse_request_row(req["rows"][i], s.schema(), "rows[" + std::to_string(i) + "]"));
  const EncodedRow x = parse_request_row(req["original_row"], s.schema(), "original_row");
  const std::size_t target = parse_label(req["desired_label"], s.classifier());
  const std::string method = optional_field<std::string>(req, "method", "external");
  return to_json(evaluate(method, rows, x, target, s.classifier(), s.models->diffusion.dict, s.schema(),
                          s.models->oracles()));
}

// ---------------------------------------------------------------------------
// HTTP

struct HttpResult {
  int status = 200;
  nlohmann::json body;
};

/// Runs a handler, mapping client errors to 400 and anything else to 500.
template <class F>
HttpResult dispatch(F&& handler) {
  try {
    return {200, handler()};
  } catch (const RequestError& e) {
    nlohmann::json diags = nlohmann::json::array();
    for (const auto& d : e.diagnostics()) diags.push_back({{"column", d.column}, {"message", d.message}});
    return {400, {{"error", e.what()}, {"diagnostics", std::move(diags)}}};
  } catch (const ValidationError& e) {
    return {400, {{"error", e.what()}, {"diagnostics", {{{"column", e.column()}, {"message", e.what()}}}}}};
  } catch (const nlohmann::json::parse_error& e) {
    return {400, {{"error", std::string("malformed JSON: ") + e.what()}, {"diagnostics", nlohmann::json::array()}}};
  } catch (const std::exception& e) {
    return {500, {{"error", e.what()}}};
  }
}

inline void make_server(httplib::Server& server, const Service& s) {
  auto reply = [](httplib::Response& res, const HttpResult& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto post = [&server, &s, reply](const char* path, nlohmann::json (*handler)(const Service&, const nlohmann::json&)) {
    server.Post(path, [&s, reply, handler](const httplib::Request& req, httplib::Response& res) {
      reply(res, dispatch([&] { return handler(s, nlohmann::json::parse(req.body)); }));
    });
  };
  server.Get("/api/schema", [&s, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, dispatch([&] { return handle_schema(s); }));
  });
  server.Get("/api/models", [&s, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, dispatch([&] { return handle_models(s); }));
  });
  post("/api/predict", handle_predict);
  post("/api/counterfactuals", handle_counterfactuals);
  post("/api/evaluate", handle_evaluate);
}

}  // namespace scd
