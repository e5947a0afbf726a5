#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "tcond/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tcond;
using namespace tcond::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Travel-time prediction with learned temporal-condition embeddings"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  std::string config_path, workspace = "workspace";
  app.add_option("--seed", seed, "Seed overriding the configuration");
  app.add_option("--config", config_path, "Configuration file (default: <workspace>/config.json)");
  app.add_option("--workspace", workspace, "Workspace directory")->capture_default_str();

  auto* generate = app.add_subcommand("generate", "Write the default synthetic dataset and a matching config");
  bool strict = false;
  auto* ingest = app.add_subcommand("ingest", "Aggregate records into day x interval matrices");
  ingest->add_flag("--strict", strict, "Fail on the first malformed row");
  auto* select = app.add_subcommand("select", "Pick representative links (coverage and change points)");
  bool no_tune = false;
  auto* train_emb = app.add_subcommand("train-embeddings", "Learn the condition embeddings");
  train_emb->add_flag("--no-tune", no_tune, "Train for the configured epochs without a validation split");
  auto* mds = app.add_subcommand("project-mds", "Project the embeddings to two dimensions");
  auto* train_pred = app.add_subcommand("train-predictor", "Sample evaluation groups and fit per-link predictors");
  train_pred->add_flag("--no-tune", no_tune, "Skip the hyperparameter search");
  auto* train_base = app.add_subcommand("train-baselines", "Fit the comparison models");
  train_base->add_flag("--no-tune", no_tune, "Skip the hyperparameter search");
  std::string model = kTemporalConditions, input = "-", output = "-";
  auto* predict = app.add_subcommand("predict", "Predict travel times for `timestamp,link_ref` rows");
  predict->add_option("--model", model, "temporal_conditions, neural_dow, sunday_average or replicate_last_year")
      ->capture_default_str();
  predict->add_option("--input", input, "Query CSV (- for stdin)")->capture_default_str();
  predict->add_option("--output", output, "Prediction CSV (- for stdout)")->capture_default_str();
  auto* evaluate = app.add_subcommand("evaluate", "Score every model on the test week");
  auto* report = app.add_subcommand("report", "Render the evaluation tables");

  CLI11_PARSE(app, argc, argv);

  try {
    const Workspace ws(workspace);
    const fs::path cfg_file = config_path.empty() ? ws.root() / "config.json" : fs::path(config_path);
    json summary;
    if (generate->parsed()) {
      summary = run_generate(ws, seed.value_or(42), cfg_file);
    } else {
      auto cfg = load_config(cfg_file);
      if (seed) cfg.seed = *seed;
      if (ingest->parsed()) summary = run_ingest(ws, cfg, strict);
      else if (select->parsed()) summary = run_select(ws, cfg);
      else if (train_emb->parsed()) summary = run_train_embeddings(ws, cfg, !no_tune);
      else if (mds->parsed()) summary = run_project_mds(ws, cfg);
      else if (train_pred->parsed()) summary = run_train_predictor(ws, cfg, cfg.tuner.enabled && !no_tune);
      else if (train_base->parsed()) summary = run_train_baselines(ws, cfg, cfg.tuner.enabled && !no_tune);
      else if (evaluate->parsed()) summary = run_evaluate(ws, cfg);
      else if (report->parsed()) summary = run_report(ws, cfg);
      else if (predict->parsed()) {
        std::ifstream fin;
        std::ofstream fout;
        if (input != "-") {
          fin.open(input);
          if (!fin) throw IoError("cannot read " + input);
        }
        if (output != "-") {
          fout.open(output);
          if (!fout) throw IoError("cannot write " + output);
        }
        std::ostringstream buffer;
        summary = run_predict(ws, cfg, model, input == "-" ? static_cast<std::istream&>(std::cin) : fin,
                              output == "-" ? static_cast<std::ostream&>(buffer) : fout);
        if (output == "-") {
          std::cout << buffer.str();
          std::cerr << summary.dump() << '\n';
          return 0;
        }
      }
    }
    std::cout << summary.dump() << std::endl;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
