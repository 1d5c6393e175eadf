// scd: train models, generate counterfactuals, run experiment grids and
// serve the HTTP API.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "scd/experiment.hpp"
#include "scd/service.hpp"

using namespace scd;

namespace {

struct Options {
  std::string config;
  std::string checkpoints = "checkpoints";
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

RunConfig run_config(const Options& o) {
  RunConfig cfg = load_config(o.config);
  if (o.seed) {
    cfg.guidance.seed = *o.seed;
    cfg.evaluation.seed = *o.seed;
  }
  return cfg;
}

/// The configured dataset, which must match the schema the diffusion model was trained on.
Dataset matching_dataset(const RunConfig& cfg, const DiffusionModel& d) {
  Dataset data = load_dataset(cfg.data);
  const auto have = schema_digest(data.schema), want = schema_digest(d.schema);
  if (have != want)
    throw Error("configured dataset has schema digest " + have + " but the checkpoints expect schema digest " + want);
  return data;
}

std::function<void(std::size_t, double)> log_to(const Options& o, const std::string& stage) {
  return [&o, stage](std::size_t epoch, double loss) {
    if (!o.quiet) std::cerr << stage << " epoch " << epoch << " loss " << loss << "\n";
  };
}

EncodedRow parse_cli_row(const std::string& text, const TableSchema& schema) {
  std::istringstream in(text + "\n");
  const auto records = parse_csv(in);
  if (records.size() != 1) throw Error("--row must be one CSV record");
  return encode_row(parse_row(records.front(), schema), schema);
}

void write_rows_csv(std::ostream& out, const std::vector<Row>& rows, const TableSchema& schema) {
  CsvTable t;
  for (const auto& c : schema.columns) t.header.push_back(c.name);
  for (const Row& r : rows) t.records.push_back(row_text(r));
  write_csv(out, t);
}

void write_cells_csv(const std::string& path, const std::vector<CellResult>& cells) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << "grid,method,variant,validity,proximity,diversity,nll_recurrent,nll_transformer\n";
  for (const CellResult& c : cells)
    out << c.grid << ',' << c.method << ',' << csv_escape(c.variant) << ',' << c.mean.validity << ','
        << c.mean.proximity << ',' << c.mean.diversity << ',' << c.mean.plausibility_recurrent.value_or(0.0) << ','
        << c.mean.plausibility_transformer.value_or(0.0) << '\n';
}

std::vector<CellResult> run_grids(const std::vector<Grid>& grids, const Options& o, const std::string& csv) {
  const RunConfig cfg = run_config(o);
  const ModelBundle m = load_bundle(o.checkpoints);
  const Dataset data = matching_dataset(cfg, m.diffusion);
  const auto queries = select_queries(data, m, cfg.evaluation.queries, cfg.evaluation.seed);
  std::vector<CellResult> all;
  for (Grid g : grids)
    for (CellResult& c : run_grid(g, m, queries, cfg, [](const CellResult& c) { std::cout << to_json(c).dump() << "\n"; }))
      all.push_back(std::move(c));
  if (!csv.empty()) write_cells_csv(csv, all);
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular diffusion counterfactuals"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  std::uint64_t seed_value = 0;
  app.add_option("--config", o.config, "JSON config overlaid on the defaults");
  app.add_option("--checkpoints", o.checkpoints, "checkpoint directory");
  auto* seed_opt = app.add_option("--seed", seed_value, "seed for every random choice of the command");
  app.add_flag("--quiet", o.quiet, "no training progress on stderr");

  auto* schema_cmd = app.add_subcommand("schema", "print the schema inferred from the configured dataset");

  std::string synth_out;
  std::size_t synth_rows = 2000;
  auto* synth_cmd = app.add_subcommand("make-synthetic", "write the synthetic benchmark table as CSV");
  synth_cmd->add_option("--out", synth_out, "output CSV (stdout when absent)");
  synth_cmd->add_option("--rows", synth_rows, "row count");

  auto* train_diff = app.add_subcommand("train-diffusion", "train the diffusion model and embedding dictionary");
  auto* train_clf = app.add_subcommand("train-classifier", "train the classifier on frozen embeddings");
  std::string ar_variant = "both";
  auto* train_ar = app.add_subcommand("train-plausibility", "train the autoregressive plausibility oracles");
  train_ar->add_option("--variant", ar_variant, "recurrent, transformer or both")
      ->check(CLI::IsMember({"recurrent", "transformer", "both"}));
  auto* train_vae_cmd = app.add_subcommand("train-vae", "train the VAE used by the DiCE-VAE baseline");

  std::string row_text_arg, target_arg, method_arg = "scd", strategy_arg, trace_path;
  std::optional<std::size_t> count_arg, tau_arg;
  std::optional<double> eta_arg;
  bool no_noise = false;
  auto* gen_cmd = app.add_subcommand("generate", "generate counterfactuals for one row");
  gen_cmd->add_option("--row", row_text_arg, "input row as one CSV record in schema order")->required();
  gen_cmd->add_option("--target", target_arg, "desired class name")->required();
  gen_cmd->add_option("--method", method_arg, "scd, dice, wachter or dice_vae");
  gen_cmd->add_option("--count,-B", count_arg, "number of counterfactuals");
  gen_cmd->add_option("--tau", tau_arg, "guided denoising steps");
  gen_cmd->add_option("--eta", eta_arg, "guide step size");
  gen_cmd->add_option("--strategy", strategy_arg, "max, average, full_sampling or top3");
  gen_cmd->add_flag("--no-noise", no_noise, "start from the clean embedding instead of z_tau");
  gen_cmd->add_option("--trace", trace_path, "write the per-step loss trace (JSON lines)");

  std::string csv_path;
  auto* eval_cmd = app.add_subcommand("evaluate", "compare all methods on sampled queries");
  eval_cmd->add_option("--csv", csv_path, "also write the cells as CSV");

  std::string grid_arg = "all";
  auto* ablate_cmd = app.add_subcommand("ablate", "run ablation grids, one JSON line per cell");
  ablate_cmd->add_option("--grid", grid_arg, "loss-drop, steps, strategy, batch or all");
  ablate_cmd->add_option("--csv", csv_path, "also write the cells as CSV");

  std::size_t sample_count = 100;
  auto* sample_cmd = app.add_subcommand("sample", "draw unconditional rows from the diffusion model");
  sample_cmd->add_option("--count", sample_count, "row count");
  sample_cmd->add_option("--strategy", strategy_arg, "max, average, full_sampling or top3");

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "serve the HTTP API over a checkpoint bundle");
  serve_cmd->add_option("--host", host, "bind address");
  serve_cmd->add_option("--port", port, "port");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) o.seed = seed_value;

  try {
    if (*schema_cmd) {
      const Dataset data = load_dataset(run_config(o).data);
      nlohmann::json j = to_json(data.schema);
      j["digest"] = schema_digest(data.schema);
      j["rows"] = data.size();
      std::cout << j.dump(2) << "\n";
    } else if (*synth_cmd) {
      const CsvTable t = make_synthetic({synth_rows, o.seed.value_or(SyntheticSpec{}.seed)});
      if (synth_out.empty()) {
        write_csv(std::cout, t);
      } else {
        std::ofstream out(synth_out);
        if (!out) throw Error("cannot write " + synth_out);
        write_csv(out, t);
      }
    } else if (*train_diff) {
      RunConfig cfg = run_config(o);
      if (o.seed) cfg.diffusion.train.seed = *o.seed;
      const Dataset data = load_dataset(cfg.data);
      const DiffusionModel d = train_diffusion(data, cfg.diffusion, nullptr, log_to(o, "diffusion"));
      save_diffusion(o.checkpoints, d);
      std::cerr << "saved " << bundle_path(o.checkpoints, "diffusion.ckpt") << " schema digest "
                << schema_digest(d.schema) << "\n";
    } else if (*train_clf) {
      RunConfig cfg = run_config(o);
      if (o.seed) cfg.classifier.train.seed = *o.seed;
      const DiffusionModel d = load_diffusion(o.checkpoints);
      const Dataset data = matching_dataset(cfg, d);
      const ClassifierNet f =
          train_classifier(data, d.dict, cfg.classifier.hidden, cfg.classifier.train, nullptr, log_to(o, "classifier"));
      save_checkpoint(bundle_path(o.checkpoints, "classifier.ckpt"), to_checkpoint(f, d));
      std::cerr << "training accuracy " << classifier_accuracy(data, f, d.dict) << "\n";
    } else if (*train_ar) {
      RunConfig cfg = run_config(o);
      if (o.seed) cfg.plausibility.train.seed = *o.seed;
      const DiffusionModel d = load_diffusion(o.checkpoints);
      const Dataset data = matching_dataset(cfg, d);
      for (ARVariant v : {ARVariant::recurrent, ARVariant::causal_transformer}) {
        if (ar_variant != "both" && parse_ar_variant(ar_variant) != v) continue;
        const std::string name = v == ARVariant::recurrent ? "recurrent" : "transformer";
        const ARPlausibilityModel m =
            train_plausibility(data, v, cfg.plausibility.arch, cfg.plausibility.train, nullptr, log_to(o, name));
        save_checkpoint(bundle_path(o.checkpoints, (name + ".ckpt").c_str()), to_checkpoint(m, d.schema));
      }
    } else if (*train_vae_cmd) {
      RunConfig cfg = run_config(o);
      if (o.seed) cfg.vae.train.seed = *o.seed;
      const DiffusionModel d = load_diffusion(o.checkpoints);
      const Dataset data = matching_dataset(cfg, d);
      const TabularVAE v =
          train_vae(data, d.dict, cfg.vae.hidden, cfg.vae.latent, cfg.vae.train, nullptr, log_to(o, "vae"));
      save_checkpoint(bundle_path(o.checkpoints, "vae.ckpt"), to_checkpoint(v, d));
    } else if (*gen_cmd) {
      const RunConfig cfg = run_config(o);
      const ModelBundle m = load_bundle(o.checkpoints);
      Service s{&m, cfg, {}};
      nlohmann::json req = {{"row", nlohmann::json::array()}, {"desired_label", target_arg}, {"method", method_arg},
                            {"seed", cfg.guidance.seed}};
      const EncodedRow x = parse_cli_row(row_text_arg, m.diffusion.schema);
      req["row"] = row_json(decode_row(x, m.diffusion.schema), m.diffusion.schema);
      if (count_arg) req["B"] = *count_arg;
      if (tau_arg) req["tau"] = *tau_arg;
      if (eta_arg) req["eta"] = *eta_arg;
      if (!strategy_arg.empty()) req["strategy"] = strategy_arg;
      if (no_noise) req["add_initial_noise"] = false;
      nlohmann::json res = handle_counterfactuals(s, req);
      if (!trace_path.empty()) {
        std::ofstream out(trace_path);
        if (!out) throw Error("cannot write " + trace_path);
        for (const auto& step : res["loss_trace"]) out << step.dump() << "\n";
      }
      res.erase("loss_trace");
      std::cout << res.dump() << "\n";
    } else if (*eval_cmd) {
      run_grids({Grid::methods}, o, csv_path);
    } else if (*ablate_cmd) {
      std::vector<Grid> grids;
      if (grid_arg == "all")
        grids = {Grid::loss_drop, Grid::steps, Grid::strategy, Grid::batch};
      else
        grids = {parse_grid(grid_arg)};
      run_grids(grids, o, csv_path);
    } else if (*sample_cmd) {
      const RunConfig cfg = run_config(o);
      const DiffusionModel d = load_diffusion(o.checkpoints);
      Rng rng(cfg.guidance.seed);
      const SampleResult s =
          sample_unconditional(d, sample_count, rng, strategy_arg.empty() ? SamplingStrategy::max : parse_strategy(strategy_arg));
      write_rows_csv(std::cout, s.rows, d.schema);
      if (d.schema.index_of("A") && d.schema.index_of("B") && cfg.data.path.empty())
        std::cerr << "A/B rule violation rate " << rule_violation_rate(s.encoded, d.schema) << "\n";
    } else if (*serve_cmd) {
      const RunConfig cfg = run_config(o);
      const ModelBundle m = load_bundle(o.checkpoints);
      const Service s{&m, cfg, bundle_info(o.checkpoints)};
      httplib::Server server;
      make_server(server, s);
      std::cerr << "listening on " << host << ":" << port << "\n";
      if (!server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
