#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tcond/baselines.hpp"
#include "tcond/csv.hpp"
#include "tcond/data_model.hpp"
#include "tcond/embeddings.hpp"
#include "tcond/error.hpp"
#include "tcond/evaluation.hpp"
#include "tcond/ingestion.hpp"
#include "tcond/nn/serialize.hpp"
#include "tcond/predictor.hpp"
#include "tcond/selection.hpp"
#include "tcond/synthetic.hpp"

namespace tcond::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kTemporalConditions = "temporal_conditions";
inline constexpr const char* kNeuralDow = "neural_dow";
inline constexpr const char* kSundayAverage = "sunday_average";
inline constexpr const char* kReplicateLastYear = "replicate_last_year";

inline const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names{kTemporalConditions, kNeuralDow, kSundayAverage, kReplicateLastYear};
  return names;
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string hash_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a64(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())), h);
  }
  return hex64(h);
}

// Runs f(0..n-1) on up to `threads` workers (0 = hardware concurrency). The
// first exception, by index, is rethrown after all workers finish.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  std::vector<std::exception_ptr> errors(n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            f(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Configuration

struct EmbeddingsSettings {
  nn::TrainConfig train{.learning_rate = 1.0,
                        .batch_size = 32,
                        .epochs = 400,
                        .seed = 0,
                        .weight_decay = 0.0,
                        .momentum = 0.9,
                        .patience = 30};
  double validation_fraction = 0.2;
};

struct TunerSettings {
  bool enabled = true;
  std::size_t min_epochs = 8;
  std::size_t budget = 256;
  double validation_fraction = 0.2;
};

struct PipelineConfig {
  std::string records = "data/records.csv";
  std::string calendar = "data/calendar.csv";
  std::vector<std::string> official_holidays;
  std::size_t n_intervals = 24;
  std::string train_start; // first day of the embeddings-training period
  std::size_t train_days = 0;
  double beta = 0.70;
  std::size_t gamma = 1;
  std::size_t kernel_size = 5;
  std::optional<double> pelt_penalty; // per-link default when unset
  std::size_t embedding_dim = 4;
  EmbeddingsSettings embeddings;
  PredictorConfig predictor;
  TunerSettings tuner;
  std::size_t baseline_days = 21;
  std::string test_start;
  std::size_t test_days = 7;
  std::size_t group_size = 10;
  std::map<std::string, std::vector<std::string>> extra_groups;
  std::uint64_t seed = 42;
  std::size_t threads = 0;

  DateTime train_begin() const { return DateTime(require_date(train_start, "train_start"), 0); }
  DateTime train_end() const {
    if (train_days == 0) throw InvalidInput("config: train_days must be >= 1");
    return DateTime(train_begin().date() + static_cast<std::int32_t>(train_days), 0);
  }
  DateTime test_begin() const { return DateTime(require_date(test_start, "test_start"), 0); }
  DateTime test_end() const {
    if (test_days == 0) throw InvalidInput("config: test_days must be >= 1");
    return DateTime(test_begin().date() + static_cast<std::int32_t>(test_days), 0);
  }

  void validate() const {
    interval_seconds(n_intervals);
    SelectionCriteria{beta, gamma, kernel_size}.validate();
    if (embedding_dim < 1) throw InvalidInput("config: embedding_dim must be >= 1");
    embeddings.train.validate();
    if (!(embeddings.validation_fraction >= 0.0 && embeddings.validation_fraction < 1.0))
      throw InvalidInput("config: embeddings.validation_fraction must lie in [0,1)");
    predictor.validate();
    if (tuner.min_epochs < 1) throw InvalidInput("config: tuner.min_epochs must be >= 1");
    if (!(tuner.validation_fraction >= 0.0 && tuner.validation_fraction < 1.0))
      throw InvalidInput("config: tuner.validation_fraction must lie in [0,1)");
    if (baseline_days < 1) throw InvalidInput("config: baseline_days must be >= 1");
    if (group_size < 1) throw InvalidInput("config: group_size must be >= 1");
    if (pelt_penalty && !(*pelt_penalty >= 0.0)) throw InvalidInput("config: pelt_penalty must be >= 0");
  }

private:
  static Date require_date(const std::string& s, const char* key) {
    if (s.empty()) throw InvalidInput(std::string("config: ") + key + " is not set");
    return Date::parse(s);
  }
};

inline json to_json(const PipelineConfig& c) {
  const auto& e = c.embeddings.train;
  json j;
  j["records"] = c.records;
  j["calendar"] = c.calendar;
  j["official_holidays"] = c.official_holidays;
  j["n_intervals"] = c.n_intervals;
  j["train_start"] = c.train_start;
  j["train_days"] = c.train_days;
  j["beta"] = c.beta;
  j["gamma"] = c.gamma;
  j["kernel_size"] = c.kernel_size;
  j["pelt_penalty"] = c.pelt_penalty ? json(*c.pelt_penalty) : json(nullptr);
  j["embedding_dim"] = c.embedding_dim;
  j["embeddings"] = {{"learning_rate", e.learning_rate}, {"batch_size", e.batch_size},
                     {"epochs", e.epochs},               {"weight_decay", e.weight_decay},
                     {"momentum", e.momentum},           {"patience", e.patience},
                     {"validation_fraction", c.embeddings.validation_fraction}};
  json p = config_to_json(c.predictor);
  p.erase("seed");
  j["predictor"] = p;
  j["tuner"] = {{"enabled", c.tuner.enabled},
                {"min_epochs", c.tuner.min_epochs},
                {"budget", c.tuner.budget},
                {"validation_fraction", c.tuner.validation_fraction}};
  j["baseline_days"] = c.baseline_days;
  j["test_start"] = c.test_start;
  j["test_days"] = c.test_days;
  j["group_size"] = c.group_size;
  j["extra_groups"] = c.extra_groups;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  return j;
}

namespace detail {

inline void check_keys(const json& given, const json& known, const std::string& prefix) {
  if (!given.is_object()) throw InvalidInput("config: '" + prefix + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) throw InvalidInput("config: unknown key '" + prefix + key + "'");
    if (known.at(key).is_object() && key != "extra_groups") check_keys(value, known.at(key), prefix + key + ".");
  }
}

} // namespace detail

// Keys absent from `j` keep their defaults; unknown keys are rejected.
inline PipelineConfig config_from_json(const json& j) {
  json full = to_json(PipelineConfig{});
  detail::check_keys(j, full, "");
  full.merge_patch(j);
  PipelineConfig c;
  try {
    c.records = full.at("records").get<std::string>();
    c.calendar = full.at("calendar").get<std::string>();
    c.official_holidays = full.at("official_holidays").get<std::vector<std::string>>();
    c.n_intervals = full.at("n_intervals").get<std::size_t>();
    c.train_start = full.at("train_start").get<std::string>();
    c.train_days = full.at("train_days").get<std::size_t>();
    c.beta = full.at("beta").get<double>();
    c.gamma = full.at("gamma").get<std::size_t>();
    c.kernel_size = full.at("kernel_size").get<std::size_t>();
    if (full.contains("pelt_penalty") && !full.at("pelt_penalty").is_null()) c.pelt_penalty = full.at("pelt_penalty").get<double>();
    c.embedding_dim = full.at("embedding_dim").get<std::size_t>();
    const auto& e = full.at("embeddings");
    c.embeddings.train.learning_rate = e.at("learning_rate").get<double>();
    c.embeddings.train.batch_size = e.at("batch_size").get<std::size_t>();
    c.embeddings.train.epochs = e.at("epochs").get<std::size_t>();
    c.embeddings.train.weight_decay = e.at("weight_decay").get<double>();
    c.embeddings.train.momentum = e.at("momentum").get<double>();
    c.embeddings.train.patience = e.at("patience").get<std::size_t>();
    c.embeddings.validation_fraction = e.at("validation_fraction").get<double>();
    json p = full.at("predictor");
    p["seed"] = 0;
    c.predictor = tcond::config_from_json(p);
    const auto& t = full.at("tuner");
    c.tuner.enabled = t.at("enabled").get<bool>();
    c.tuner.min_epochs = t.at("min_epochs").get<std::size_t>();
    c.tuner.budget = t.at("budget").get<std::size_t>();
    c.tuner.validation_fraction = t.at("validation_fraction").get<double>();
    c.baseline_days = full.at("baseline_days").get<std::size_t>();
    c.test_start = full.at("test_start").get<std::string>();
    c.test_days = full.at("test_days").get<std::size_t>();
    c.group_size = full.at("group_size").get<std::size_t>();
    c.extra_groups = full.at("extra_groups").get<std::map<std::string, std::vector<std::string>>>();
    c.seed = full.at("seed").get<std::uint64_t>();
    c.threads = full.at("threads").get<std::size_t>();
  } catch (const json::exception& ex) {
    throw InvalidInput(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

inline PipelineConfig load_config(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingArtifact(p.string(), "generate");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& ex) {
    throw InvalidInput("config " + p.string() + ": " + ex.what());
  }
  return config_from_json(j);
}

inline std::string config_hash(const PipelineConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

// ---------------------------------------------------------------------------
// Workspace

inline void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

template <class Writer>
void write_with(const fs::path& p, Writer&& w) {
  std::ostringstream s;
  w(s);
  write_text(p, s.str());
}

inline std::string link_file_name(const std::string& link) {
  std::string s;
  for (char c : link) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-') ? c : '_';
  return s + "-" + hex64(fnv1a64(link)).substr(0, 8) + ".json";
}

class Workspace {
public:
  explicit Workspace(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const noexcept { return root_; }
  fs::path stage(const std::string& name) const { return root_ / name; }
  fs::path resolve(const std::string& p) const {
    const fs::path q(p);
    return q.is_absolute() ? q : root_ / q;
  }

  // Records the stage's config hash and the hashes of the files it read.
  void write_manifest(const std::string& stage_dir, const std::string& stage_name, const PipelineConfig& cfg,
                      const std::vector<fs::path>& inputs, const json& extra = json::object()) const {
    json m;
    m["stage"] = stage_name;
    m["config_hash"] = config_hash(cfg);
    json in = json::object();
    for (const auto& p : inputs) in[fs::relative(p, root_).generic_string()] = hash_file(p);
    m["inputs"] = in;
    for (const auto& [k, v] : extra.items()) m[k] = v;
    write_text(stage(stage_dir) / "manifest.json", m.dump(2) + "\n");
  }

  // Throws MissingArtifact when the producing stage has not run; warns on
  // stderr when it ran under a different configuration.
  void require_stage(const std::string& stage_dir, const std::string& producer, const PipelineConfig& cfg) const {
    const auto p = stage(stage_dir) / "manifest.json";
    std::ifstream in(p);
    if (!in) throw MissingArtifact(p.string(), producer);
    const auto m = json::parse(in);
    if (m.value("config_hash", "") != config_hash(cfg))
      std::cerr << "warning: outputs of `" << producer << "` were produced under a different configuration\n";
  }

  fs::path require_file(const fs::path& p, const std::string& producer) const {
    if (!fs::exists(p)) throw MissingArtifact(p.string(), producer);
    return p;
  }

private:
  fs::path root_;
};

inline std::vector<TravelTimeRecord> load_records(const Workspace& ws, const PipelineConfig& cfg,
                                                  bool strict = false, ParsedRecords* parsed = nullptr) {
  const auto p = ws.require_file(ws.resolve(cfg.records), "generate");
  std::ifstream in(p);
  auto r = parse_records(in, strict);
  if (parsed) {
    parsed->malformed = r.malformed;
    parsed->issues = r.issues;
  }
  return std::move(r.records);
}

inline Calendar load_calendar(const Workspace& ws, const PipelineConfig& cfg) {
  const auto p = ws.require_file(ws.resolve(cfg.calendar), "generate");
  std::ifstream in(p);
  return read_calendar_csv(in);
}

inline std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  std::vector<std::string> out;
  std::string line;
  while (csv::read_line(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

inline json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  return json::parse(in);
}

// ---------------------------------------------------------------------------
// Stages. Each returns a one-line JSON summary.

// Writes the default synthetic dataset and a matching configuration.
inline json run_generate(const Workspace& ws, std::uint64_t seed, const fs::path& config_out) {
  auto spec = synthetic::default_spec(seed);
  const auto data = synthetic::generate(spec);
  const auto dir = ws.stage("data");
  write_with(dir / "records.csv", [&](std::ostream& o) { synthetic::write_records_csv(o, data.records); });
  write_with(dir / "calendar.csv", [&](std::ostream& o) { write_calendar_csv(o, spec.calendar); });
  write_with(dir / "ground_truth.csv", [&](std::ostream& o) { synthetic::write_truth_csv(o, data.truth); });
  write_with(dir / "links.csv", [&](std::ostream& o) { synthetic::write_links_csv(o, spec); });

  PipelineConfig cfg;
  cfg.official_holidays = synthetic::official_holidays();
  cfg.train_start = spec.start.str();
  cfg.train_days = synthetic::DefaultLayout{}.new_link_day;
  cfg.test_start = "2019-04-15";
  cfg.group_size = synthetic::DefaultLayout{}.n_unseen;
  cfg.seed = seed;
  write_text(config_out, to_json(cfg).dump(2) + "\n");
  ws.write_manifest("data", "generate", cfg, {dir / "records.csv", dir / "calendar.csv"},
                    {{"seed", seed}, {"links", spec.links.size()}, {"days", spec.n_days}});
  return {{"stage", "generate"},
          {"records", data.records.size()},
          {"links", spec.links.size()},
          {"days", spec.n_days},
          {"conditions", spec.conditions.size()},
          {"config", config_out.string()}};
}

inline json run_ingest(const Workspace& ws, const PipelineConfig& cfg, bool strict) {
  ParsedRecords parsed;
  const auto records = load_records(ws, cfg, strict, &parsed);
  const auto calendar = load_calendar(ws, cfg);
  const Date start = cfg.train_begin().date();
  calendar.at(start);
  calendar.at(cfg.train_end().date() - 1);
  const auto build = build_matrices(records, start, cfg.train_days, cfg.n_intervals);
  const auto dir = ws.stage("ingest");
  fs::remove_all(dir / "matrices");
  write_matrix_cache(dir / "matrices", build.matrices, start, cfg.train_days, cfg.n_intervals);
  write_with(dir / "issues.csv", [&](std::ostream& o) {
    o << "line,message\n";
    for (const auto& i : parsed.issues) o << i.line << ',' << csv::quote(i.message) << '\n';
  });
  ws.write_manifest("ingest", "ingest", cfg, {ws.resolve(cfg.records), ws.resolve(cfg.calendar)},
                    {{"malformed", parsed.malformed}});
  return {{"stage", "ingest"},
          {"records", records.size()},
          {"malformed", parsed.malformed},
          {"in_window", build.in_window},
          {"links", build.matrices.size()}};
}

inline std::map<std::string, LinkMatrix> load_matrices(const Workspace& ws, const PipelineConfig& cfg) {
  ws.require_stage("ingest", "ingest", cfg);
  return read_matrix_cache(ws.stage("ingest") / "matrices");
}

inline json run_select(const Workspace& ws, const PipelineConfig& cfg) {
  const auto matrices = load_matrices(ws, cfg);
  const auto sel = select_representative(matrices, {cfg.beta, cfg.gamma, cfg.kernel_size}, cfg.pelt_penalty);
  const auto dir = ws.stage("select");
  write_with(dir / "selection_report.csv", [&](std::ostream& o) { write_selection_report_csv(o, sel); });
  write_with(dir / "change_points.csv", [&](std::ostream& o) { write_change_points_csv(o, sel); });
  write_with(dir / "selected.txt", [&](std::ostream& o) {
    for (const auto& l : sel.selected) o << l << '\n';
  });
  ws.write_manifest("select", "select", cfg, {ws.stage("ingest") / "manifest.json"});
  return {{"stage", "select"},
          {"links", matrices.size()},
          {"passed_coverage", sel.imputed.size()},
          {"selected", sel.selected.size()}};
}

inline std::vector<std::string> load_selected(const Workspace& ws, const PipelineConfig& cfg) {
  ws.require_stage("select", "select", cfg);
  const auto p = ws.require_file(ws.stage("select") / "selected.txt", "select");
  return read_lines(p);
}

inline json run_train_embeddings(const Workspace& ws, const PipelineConfig& cfg, bool tune) {
  const auto selected = load_selected(ws, cfg);
  if (selected.empty()) throw InsufficientData("<representative set>");
  const auto matrices = load_matrices(ws, cfg);
  const auto calendar = load_calendar(ws, cfg);
  std::map<std::string, ImputedLinkMatrix> imputed;
  for (const auto& l : selected) imputed.emplace(l, impute(matrices.at(l), cfg.kernel_size));
  const auto set = build_training_set(imputed, selected, calendar, calendar.vocabulary());
  auto tc = cfg.embeddings.train;
  tc.seed = cfg.seed;
  const auto model = train_embeddings(set, cfg.embedding_dim, tc, tune ? cfg.embeddings.validation_fraction : 0.0);

  const auto dir = ws.stage("embeddings");
  write_with(dir / "embeddings.csv", [&](std::ostream& o) { write_embeddings_csv(o, model.embedding); });
  write_text(dir / "network.json", nn::to_json(model.network).dump() + "\n");
  write_text(dir / "scaler.json",
             json{{"links", set.link_order}, {"scaler", scaler_to_json(set.scaler)}}.dump() + "\n");
  write_with(dir / "history.csv", [&](std::ostream& o) {
    o << "phase,epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < model.tuning.train_loss.size(); ++e)
      o << "tune," << e << ',' << csv::fmt(model.tuning.train_loss[e]) << ','
        << (e < model.tuning.val_loss.size() ? csv::fmt(model.tuning.val_loss[e]) : "") << '\n';
    for (std::size_t e = 0; e < model.final_run.train_loss.size(); ++e)
      o << "final," << e << ',' << csv::fmt(model.final_run.train_loss[e]) << ",\n";
  });
  ws.write_manifest("embeddings", "train-embeddings", cfg,
                    {ws.stage("select") / "selected.txt", ws.resolve(cfg.calendar)});
  return {{"stage", "train-embeddings"},
          {"conditions", model.embedding.conditions()},
          {"dimension", model.embedding.dimension()},
          {"links", selected.size()},
          {"days", set.inputs.rows()},
          {"epochs", model.final_run.train_loss.size() - 1},
          {"final_loss", model.final_run.train_loss.back()}};
}

inline EmbeddingMatrix load_embeddings(const Workspace& ws, const PipelineConfig& cfg) {
  const auto p = ws.require_file(ws.stage("embeddings") / "embeddings.csv", "train-embeddings");
  ws.require_stage("embeddings", "train-embeddings", cfg);
  std::ifstream in(p);
  return read_embeddings_csv(in);
}

inline json run_project_mds(const Workspace& ws, const PipelineConfig& cfg) {
  const auto emb = load_embeddings(ws, cfg);
  const auto proj = mds_project(emb, 2);
  write_with(ws.stage("mds") / "mds.csv", [&](std::ostream& o) { write_mds_csv(o, proj, emb.vocabulary()); });
  ws.write_manifest("mds", "project-mds", cfg, {ws.stage("embeddings") / "embeddings.csv"});
  std::size_t degenerate = 0;
  for (bool d : proj.degenerate) degenerate += d ? 1 : 0;
  return {{"stage", "project-mds"},
          {"conditions", emb.conditions()},
          {"eigenvalues", proj.eigenvalues},
          {"degenerate_axes", degenerate}};
}

inline std::vector<TravelTimeRecord> test_window(const std::vector<TravelTimeRecord>& records,
                                                 const PipelineConfig& cfg) {
  const auto lo = cfg.test_begin(), hi = cfg.test_end();
  std::vector<TravelTimeRecord> out;
  for (const auto& r : records)
    if (!(r.timestamp < lo) && r.timestamp < hi) out.push_back(r);
  return out;
}

inline EvaluationGroups groups_from_json(const json& j) {
  EvaluationGroups g;
  g.embeddings_links = j.at(kEmbeddingsGroup).get<std::vector<std::string>>();
  g.non_selected_links = j.at(kNonSelectedGroup).get<std::vector<std::string>>();
  g.unseen_links = j.at(kUnseenGroup).get<std::vector<std::string>>();
  g.seed = j.at("seed").get<std::uint64_t>();
  return g;
}

inline json groups_to_json(const EvaluationGroups& g) {
  return {{kEmbeddingsGroup, g.embeddings_links},
          {kNonSelectedGroup, g.non_selected_links},
          {kUnseenGroup, g.unseen_links},
          {"seed", g.seed}};
}

// Evaluation groups followed by the configured extra groups.
inline std::vector<std::pair<std::string, std::vector<std::string>>> all_groups(const EvaluationGroups& g,
                                                                                const PipelineConfig& cfg) {
  auto out = g.named();
  for (const auto& [name, links] : cfg.extra_groups) {
    for (const auto& [existing, unused] : out)
      if (existing == name) throw InvalidInput("extra group '" + name + "' shadows a built-in group");
    out.emplace_back(name, links);
  }
  return out;
}

inline std::vector<std::string> links_to_model(const EvaluationGroups& g, const PipelineConfig& cfg) {
  std::set<std::string> s;
  for (const auto& [name, links] : all_groups(g, cfg)) s.insert(links.begin(), links.end());
  return {s.begin(), s.end()};
}

inline TuneOptions tune_options(const PipelineConfig& cfg, bool tune) {
  auto base = cfg.predictor;
  base.train.seed = cfg.seed;
  TuneOptions opt;
  if (tune) {
    opt.candidates = default_search_space(base);
    opt.min_epochs = cfg.tuner.min_epochs;
    opt.budget = cfg.tuner.budget;
    opt.validation_fraction = cfg.tuner.validation_fraction;
  } else {
    // A single candidate trained for its configured epochs, no held-out rows.
    opt.candidates = {base};
    opt.min_epochs = base.train.epochs;
    opt.budget = base.train.epochs;
    opt.validation_fraction = 0.0;
  }
  return opt;
}

struct FitSummary {
  std::string link;
  std::string error;
  std::size_t rows = 0;
  std::size_t best_index = 0;
  std::size_t epochs = 0;
  std::size_t epochs_spent = 0;
  double val_loss = 0.0;
};

inline void write_fit_summaries(const fs::path& p, const std::vector<FitSummary>& fits) {
  write_with(p, [&](std::ostream& o) {
    o << "link_ref,rows,candidate,epochs,val_loss,tuning_epochs,error\n";
    for (const auto& f : fits) {
      o << csv::quote(f.link) << ',' << f.rows << ',';
      if (f.error.empty())
        o << f.best_index << ',' << f.epochs << ',' << csv::fmt(f.val_loss) << ',' << f.epochs_spent << ",\n";
      else
        o << ",,,," << csv::quote(f.error) << '\n';
    }
  });
}

inline FitSummary summarize_fit(const std::string& link, const TrainingRows& rows, const FitResult& r) {
  FitSummary s;
  s.link = link;
  s.rows = rows.size();
  s.best_index = r.tuning.best_index;
  s.epochs = r.model.config.train.epochs;
  s.epochs_spent = r.tuning.epochs_spent;
  s.val_loss = r.tuning.score.val_loss;
  return s;
}

// Samples the evaluation groups and fits one temporal-conditions predictor per
// link of any group. A link whose fit fails is listed in fits.csv and gets no
// model file.
inline json run_train_predictor(const Workspace& ws, const PipelineConfig& cfg, bool tune) {
  const auto emb = load_embeddings(ws, cfg);
  const auto selected = load_selected(ws, cfg);
  const auto matrices = load_matrices(ws, cfg);
  const auto records = load_records(ws, cfg);
  const auto calendar = load_calendar(ws, cfg);
  const auto test = test_window(records, cfg);
  if (!(cfg.train_end() <= cfg.test_begin()))
    throw InvalidInput("config: the test window must start after the embeddings-training period");

  std::map<std::string, std::size_t> seen;
  for (const auto& [link, m] : matrices) seen[link] = static_cast<std::size_t>(m.counts().sum());
  std::set<std::string> test_links;
  for (const auto& r : test) test_links.insert(r.link_ref);
  const auto groups = sample_groups(seen, selected, test_links, cfg.group_size, cfg.seed);
  const auto dir = ws.stage("predictor");
  fs::remove_all(dir);
  write_text(dir / "groups.json", groups_to_json(groups).dump(2) + "\n");

  const auto links = links_to_model(groups, cfg);
  const auto opt = tune_options(cfg, tune);
  const auto start = cfg.test_begin();
  std::vector<FitSummary> fits(links.size());
  parallel_for(links.size(), cfg.threads, [&](std::size_t i) {
    const auto& link = links[i];
    fits[i].link = link;
    try {
      const auto rows = assemble_training_window(link, records, calendar, emb.vocabulary(), start, opt.candidates[0]);
      const auto r = fit_predictor(rows, ConditionInput::Calendar, emb.vocabulary(),
                                   [&](const PredictorConfig& c) { return build_predictor(emb, c); }, opt);
      write_text(dir / "models" / link_file_name(link), model_to_json(r.model).dump() + "\n");
      fits[i] = summarize_fit(link, rows, r);
    } catch (const Error& e) {
      fits[i].error = e.what();
    }
  });
  write_fit_summaries(dir / "fits.csv", fits);
  ws.write_manifest("predictor", "train-predictor", cfg,
                    {ws.stage("embeddings") / "embeddings.csv", ws.stage("select") / "selected.txt",
                     ws.resolve(cfg.records), ws.resolve(cfg.calendar)});
  std::size_t failed = 0;
  for (const auto& f : fits) failed += f.error.empty() ? 0 : 1;
  return {{"stage", "train-predictor"},
          {"links", links.size()},
          {"failed", failed},
          {"test_observations", test.size()}};
}

inline EvaluationGroups load_groups(const Workspace& ws, const PipelineConfig& cfg) {
  const auto p = ws.require_file(ws.stage("predictor") / "groups.json", "train-predictor");
  ws.require_stage("predictor", "train-predictor", cfg);
  return groups_from_json(read_json(p));
}

// Neural day-of-week and Sunday-average baselines for every modelled link.
// Replicate-last-year needs no fitting; its history ends with the
// embeddings-training period.
inline json run_train_baselines(const Workspace& ws, const PipelineConfig& cfg, bool tune) {
  const auto groups = load_groups(ws, cfg);
  const auto records = load_records(ws, cfg);
  const auto calendar = load_calendar(ws, cfg);
  const std::set<std::string> official(cfg.official_holidays.begin(), cfg.official_holidays.end());
  const auto links = links_to_model(groups, cfg);
  const auto opt = tune_options(cfg, tune);
  const auto start = cfg.test_begin();
  const auto dir = ws.stage("baselines");
  fs::remove_all(dir);

  std::vector<FitSummary> fits(links.size());
  std::vector<std::string> sunday_errors(links.size());
  parallel_for(links.size(), cfg.threads, [&](std::size_t i) {
    const auto& link = links[i];
    fits[i].link = link;
    try {
      const auto rows = assemble_weekday_window(link, records, calendar, start, cfg.baseline_days);
      const auto r = fit_predictor(rows, ConditionInput::Weekday, weekday_vocabulary(),
                                   [&](const PredictorConfig& c) { return build_weekday_network(cfg.embedding_dim, c); },
                                   opt);
      write_text(dir / kNeuralDow / link_file_name(link), model_to_json(r.model).dump() + "\n");
      fits[i] = summarize_fit(link, rows, r);
    } catch (const Error& e) {
      fits[i].error = e.what();
    }
    try {
      const auto m = fit_sunday_average(link, records, calendar, official, start, cfg.baseline_days, cfg.n_intervals);
      write_text(dir / kSundayAverage / link_file_name(link), sunday_to_json(m).dump() + "\n");
    } catch (const Error& e) {
      sunday_errors[i] = e.what();
    }
  });
  write_fit_summaries(dir / "neural_dow_fits.csv", fits);
  write_with(dir / "sunday_average_fits.csv", [&](std::ostream& o) {
    o << "link_ref,error\n";
    for (std::size_t i = 0; i < links.size(); ++i) o << csv::quote(links[i]) << ',' << csv::quote(sunday_errors[i]) << '\n';
  });
  write_text(dir / "replicate_last_year.json", json{{"history_end", cfg.train_end().str()}}.dump(2) + "\n");
  ws.write_manifest("baselines", "train-baselines", cfg,
                    {ws.stage("predictor") / "groups.json", ws.resolve(cfg.records), ws.resolve(cfg.calendar)});
  std::size_t failed = 0;
  for (std::size_t i = 0; i < links.size(); ++i) failed += (fits[i].error.empty() && sunday_errors[i].empty()) ? 0 : 1;
  return {{"stage", "train-baselines"}, {"links", links.size()}, {"failed", failed}};
}

// Per-link model store shared by evaluation and prediction. Models are loaded
// on first use; a missing file raises.
class ModelStore {
public:
  ModelStore(const Workspace& ws, const Calendar& calendar, const std::vector<TravelTimeRecord>& records)
      : ws_(ws), calendar_(calendar), records_(records) {}

  ModelAdapter adapter(const std::string& name) {
    ModelAdapter a;
    a.name = name;
    if (name == kTemporalConditions || name == kNeuralDow) {
      const auto dir = name == kTemporalConditions ? ws_.stage("predictor") / "models" : ws_.stage("baselines") / kNeuralDow;
      auto& cache = name == kTemporalConditions ? predictors_ : dows_;
      auto get = [this, dir, &cache](const std::string& link) -> const PredictorModel& {
        std::lock_guard lock(mutex_);
        auto it = cache.find(link);
        if (it == cache.end()) {
          const auto p = dir / link_file_name(link);
          if (!fs::exists(p)) throw InsufficientData(link);
          it = cache.emplace(link, model_from_json(read_json(p))).first;
        }
        return it->second;
      };
      a.predict = [this, get](const std::string& link, const std::vector<DateTime>& t) {
        const auto v = predict_many(get(link), calendar_, t);
        return std::vector<std::optional<double>>(v.begin(), v.end());
      };
      a.last_training = [get](const std::string& link) -> std::optional<DateTime> {
        return get(link).last_training_timestamp;
      };
    } else if (name == kSundayAverage) {
      auto get = [this](const std::string& link) -> const SundayAverageModel& {
        std::lock_guard lock(mutex_);
        auto it = sundays_.find(link);
        if (it == sundays_.end()) {
          const auto p = ws_.stage("baselines") / kSundayAverage / link_file_name(link);
          if (!fs::exists(p)) throw InsufficientData(link);
          it = sundays_.emplace(link, sunday_from_json(read_json(p))).first;
        }
        return it->second;
      };
      a.predict = [this, get](const std::string& link, const std::vector<DateTime>& t) {
        std::vector<std::optional<double>> out;
        for (auto x : t) out.push_back(tcond::predict(get(link), calendar_, x));
        return out;
      };
      a.last_training = [get](const std::string& link) -> std::optional<DateTime> {
        return get(link).last_training_timestamp;
      };
    } else if (name == kReplicateLastYear) {
      const auto p = ws_.require_file(ws_.stage("baselines") / "replicate_last_year.json", "train-baselines");
      const auto cutoff = DateTime::parse(read_json(p).at("history_end").get<std::string>());
      auto get = [this, cutoff](const std::string& link) -> const ReplicateLastYear& {
        std::lock_guard lock(mutex_);
        auto it = replicates_.find(link);
        if (it == replicates_.end())
          it = replicates_.emplace(link, std::make_unique<ReplicateLastYear>(link, records_, calendar_, cutoff)).first;
        return *it->second;
      };
      a.predict = [get](const std::string& link, const std::vector<DateTime>& t) {
        const auto& m = get(link);
        std::vector<std::optional<double>> out;
        for (auto x : t) out.push_back(m.predict(x));
        return out;
      };
      a.last_training = [get](const std::string& link) -> std::optional<DateTime> {
        const auto& m = get(link);
        if (!m.has_history()) return std::nullopt;
        return m.last_training_timestamp();
      };
    } else {
      throw InvalidInput("unknown model '" + name + "'");
    }
    return a;
  }

private:
  const Workspace& ws_;
  const Calendar& calendar_;
  const std::vector<TravelTimeRecord>& records_;
  std::mutex mutex_;
  std::map<std::string, PredictorModel> predictors_, dows_;
  std::map<std::string, SundayAverageModel> sundays_;
  std::map<std::string, std::unique_ptr<ReplicateLastYear>> replicates_;
};

inline json run_evaluate(const Workspace& ws, const PipelineConfig& cfg) {
  const auto groups = load_groups(ws, cfg);
  ws.require_stage("baselines", "train-baselines", cfg);
  const auto records = load_records(ws, cfg);
  const auto calendar = load_calendar(ws, cfg);
  const auto test = test_window(records, cfg);
  ModelStore store(ws, calendar, records);
  std::vector<ModelAdapter> models;
  for (const auto& name : model_names()) models.push_back(store.adapter(name));
  const auto report = run_evaluation(models, all_groups(groups, cfg), test, cfg.test_begin());
  const auto dir = ws.stage("evaluate");
  write_with(dir / "report.csv", [&](std::ostream& o) { write_report_csv(o, report); });
  write_with(dir / "residuals.csv", [&](std::ostream& o) { write_residuals_csv(o, report); });
  write_with(dir / "failures.csv", [&](std::ostream& o) {
    o << "model,group,message\n";
    for (const auto& c : report.cells)
      if (c.status == CellStatus::Failed)
        o << csv::quote(c.model) << ',' << csv::quote(c.group) << ',' << csv::quote(c.message) << '\n';
  });
  ws.write_manifest("evaluate", "evaluate", cfg,
                    {ws.stage("predictor") / "manifest.json", ws.stage("baselines") / "manifest.json",
                     ws.resolve(cfg.records)});
  std::size_t ok = 0, absent = 0, failed = 0;
  for (const auto& c : report.cells) {
    if (c.status == CellStatus::Ok) ++ok;
    if (c.status == CellStatus::Absent) ++absent;
    if (c.status == CellStatus::Failed) ++failed;
  }
  return {{"stage", "evaluate"},
          {"test_observations", test.size()},
          {"cells", report.cells.size()},
          {"ok", ok},
          {"absent", absent},
          {"failed", failed}};
}

struct ReportRow {
  std::string model, group, metric, value;
  std::size_t n_observations;
};

inline std::vector<ReportRow> read_report_csv(std::istream& in) {
  std::string line;
  if (!csv::read_line(in, line) || line != "model,group,metric,value,n_observations")
    throw ParseError(1, "expected report header");
  std::vector<ReportRow> out;
  std::size_t lineno = 1;
  while (csv::read_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = csv::split(line);
    if (f.size() != 5) throw ParseError(lineno, "expected 5 fields");
    out.push_back({f[0], f[1], f[2], f[3], static_cast<std::size_t>(std::stoull(f[4]))});
  }
  return out;
}

// Markdown tables, one per metric: models as rows, groups as columns, the
// lowest value of each column in bold.
inline std::string render_report(const std::vector<ReportRow>& rows) {
  std::vector<std::string> models, groups;
  auto add = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& r : rows) {
    add(models, r.model);
    add(groups, r.group);
  }
  std::ostringstream o;
  o << "# Test-week evaluation\n";
  for (const char* metric : {"rmse", "mae"}) {
    std::map<std::pair<std::string, std::string>, const ReportRow*> cell;
    for (const auto& r : rows)
      if (r.metric == metric) cell[{r.model, r.group}] = &r;
    std::map<std::string, double> best;
    for (const auto& [key, r] : cell) {
      if (auto v = csv::to_double(r->value)) {
        auto it = best.find(key.second);
        if (it == best.end() || *v < it->second) best[key.second] = *v;
      }
    }
    o << "\n## " << (metric[0] == 'r' ? "RMSE" : "MAE") << " (seconds)\n\n| model |";
    for (const auto& g : groups) o << ' ' << g << " |";
    o << "\n|---|";
    for (std::size_t i = 0; i < groups.size(); ++i) o << "---:|";
    o << '\n';
    for (const auto& m : models) {
      o << "| " << m << " |";
      for (const auto& g : groups) {
        auto it = cell.find({m, g});
        if (it == cell.end()) {
          o << " |";
          continue;
        }
        const auto v = csv::to_double(it->second->value);
        const bool is_best = v && best.count(g) && *v == best[g];
        o << ' ' << (is_best ? "**" : "") << (v ? csv::fmt_fixed(*v, 2) : it->second->value)
          << (is_best ? "**" : "") << " |";
      }
      o << '\n';
    }
  }
  o << "\n## Observations per cell\n\n| model |";
  for (const auto& g : groups) o << ' ' << g << " |";
  o << "\n|---|";
  for (std::size_t i = 0; i < groups.size(); ++i) o << "---:|";
  o << '\n';
  for (const auto& m : models) {
    o << "| " << m << " |";
    for (const auto& g : groups) {
      std::size_t n = 0;
      for (const auto& r : rows)
        if (r.model == m && r.group == g && r.metric == "rmse") n = r.n_observations;
      o << ' ' << n << " |";
    }
    o << '\n';
  }
  return o.str();
}

inline json run_report(const Workspace& ws, const PipelineConfig& cfg) {
  const auto p = ws.require_file(ws.stage("evaluate") / "report.csv", "evaluate");
  ws.require_stage("evaluate", "evaluate", cfg);
  std::ifstream in(p);
  const auto rows = read_report_csv(in);
  write_text(ws.stage("report") / "report.md", render_report(rows));
  ws.write_manifest("report", "report", cfg, {p});
  return {{"stage", "report"}, {"rows", rows.size()}, {"output", (ws.stage("report") / "report.md").string()}};
}

// Reads `timestamp,link_ref` rows and writes
// `timestamp,link_ref,predicted_travel_time`; an empty prediction means the
// model has nothing to replicate.
inline json run_predict(const Workspace& ws, const PipelineConfig& cfg, const std::string& model,
                        std::istream& in, std::ostream& out) {
  if (std::find(model_names().begin(), model_names().end(), model) == model_names().end())
    throw InvalidInput("unknown model '" + model + "'");
  if (model == kTemporalConditions)
    ws.require_stage("predictor", "train-predictor", cfg);
  else
    ws.require_stage("baselines", "train-baselines", cfg);
  const auto calendar = load_calendar(ws, cfg);
  std::vector<TravelTimeRecord> records;
  if (model == kReplicateLastYear) records = load_records(ws, cfg);
  ModelStore store(ws, calendar, records);
  const auto adapter = store.adapter(model);

  std::string line;
  if (!csv::read_line(in, line) || csv::split(line) != std::vector<std::string>{"timestamp", "link_ref"})
    throw ParseError(1, "expected header `timestamp,link_ref`");
  std::vector<std::pair<DateTime, std::string>> queries;
  std::size_t lineno = 1;
  while (csv::read_line(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = csv::split(line);
    if (f.size() != 2) throw ParseError(lineno, "expected 2 fields");
    try {
      queries.emplace_back(DateTime::parse(f[0]), f[1]);
    } catch (const InvalidInput& e) {
      throw ParseError(lineno, e.what());
    }
  }
  out << "timestamp,link_ref,predicted_travel_time\n";
  std::size_t empty = 0;
  for (const auto& [t, link] : queries) {
    const auto v = adapter.predict(link, {t}).front();
    out << t.str() << ',' << csv::quote(link) << ',';
    if (v)
      out << csv::fmt(*v);
    else
      ++empty;
    out << '\n';
  }
  return {{"stage", "predict"}, {"model", model}, {"queries", queries.size()}, {"unpredicted", empty}};
}

} // namespace tcond::pipeline
