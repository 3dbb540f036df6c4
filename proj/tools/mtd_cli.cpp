// mtd: command-line driver for corpus generation, single-variant runs,
// ablations, loss landscapes and dataset statistics.
//
// Exit codes: 0 success, 2 usage or validation error, 3 runtime failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtd/config.hpp"
#include "mtd/landscape.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

// ---- logging (DD_LOG=error|warn|info|debug, default info) -------------------

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

Level log_level() {
  static const Level level = [] {
    const char* env = std::getenv("DD_LOG");
    const std::string v = env ? env : "info";
    if (v == "error") return Level::error;
    if (v == "warn") return Level::warn;
    if (v == "debug") return Level::debug;
    return Level::info;
  }();
  return level;
}

void log(Level l, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (l <= log_level()) std::cerr << "[" << names[static_cast<int>(l)] << "] " << msg << '\n';
}

// Usage-class failure (bad flags, bad config, missing inputs).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- files -------------------------------------------------------------------

json read_json_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw UsageError("file not found: " + p.string());
  std::ifstream in(p);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("cannot parse " + p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create " + p.string() + ": " + ec.message());
}

// ---- shared experiment flags --------------------------------------------------

// Flag values; unset optionals leave the config file (or profile default) alone.
struct Overrides {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::string> profile;
  std::optional<std::size_t> seeds;
  std::optional<double> lambda;
  std::optional<double> temperature;
  std::optional<int> iterations;
  std::optional<double> selection_ratio;
  std::optional<std::string> include_difference;
  std::optional<std::string> arch;
  std::optional<std::string> train, dev, test;
  std::optional<double> labeled_fraction;
  std::optional<double> learning_rate;
  std::optional<std::size_t> workers;
};

void add_experiment_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON experiment config");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--dataset-profile", o.profile, "semeval, tacred or synthetic")
      ->check(CLI::IsMember({"semeval", "tacred", "synthetic"}));
  cmd->add_option("--seeds", o.seeds, "number of run seeds (1..N)")->check(CLI::PositiveNumber);
  cmd->add_option("--lambda", o.lambda, "distillation weight in [0, 1]");
  cmd->add_option("--temperature", o.temperature, "distillation temperature");
  cmd->add_option("--iterations", o.iterations, "self-training iterations");
  cmd->add_option("--selection-ratio", o.selection_ratio, "per-iteration selection cap");
  cmd->add_option("--include-difference", o.include_difference, "use the difference set")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--arch", o.arch, "linear or mlp1")->check(CLI::IsMember({"linear", "mlp1"}));
  cmd->add_option("--train", o.train, "training corpus (JSON lines)");
  cmd->add_option("--dev", o.dev, "dev corpus (JSON lines)");
  cmd->add_option("--test", o.test, "test corpus (JSON lines)");
  cmd->add_option("--labeled-fraction", o.labeled_fraction, "share of the training pool kept labeled");
  cmd->add_option("--learning-rate", o.learning_rate, "SGD learning rate");
  cmd->add_option("--workers", o.workers, "worker threads (0: all cores)");
}

mtd::ExperimentConfig resolve_config(const Overrides& o) {
  json j = json::object();
  fs::path base;
  if (!o.config.empty()) {
    j = read_json_file(o.config);
    base = fs::path(o.config).parent_path();
  }
  std::optional<mtd::Profile> profile;
  if (o.profile) profile = mtd::find_profile(*o.profile);
  std::vector<std::string> problems;
  mtd::ExperimentConfig c = mtd::parse_config(j, problems, profile, base);
  if (o.out) c.out = *o.out;
  if (o.seeds) c.seeds = mtd::seed_range(*o.seeds);
  if (o.lambda) c.lambda = *o.lambda;
  if (o.temperature) c.temperature = *o.temperature;
  if (o.iterations) c.iterations = *o.iterations;
  if (o.selection_ratio) c.selection_ratio = *o.selection_ratio;
  if (o.include_difference) c.include_difference = *o.include_difference == "on";
  if (o.arch) c.model.arch = mtd::parse_arch(*o.arch);
  if (o.train) c.dataset.train = *o.train;
  if (o.dev) c.dataset.dev = *o.dev;
  if (o.test) c.dataset.test = *o.test;
  if (o.labeled_fraction) c.labeled_fraction = *o.labeled_fraction;
  if (o.learning_rate) c.model.learning_rate = *o.learning_rate;
  if (o.workers) c.workers = *o.workers;
  auto more = mtd::validation_problems(c);
  problems.insert(problems.end(), more.begin(), more.end());
  if (!problems.empty()) throw mtd::ConfigError(std::move(problems));
  return c;
}

// Validated config, output directory created and resolved-config.json written.
mtd::ExperimentConfig start(const Overrides& o) {
  auto c = resolve_config(o);
  ensure_dir(c.out);
  write_json(c.out / "resolved-config.json", mtd::to_json(c));
  return c;
}

mtd::Workspace workspace_for(const mtd::ExperimentConfig& c) {
  std::vector<std::string> warnings;
  auto t0 = std::chrono::steady_clock::now();
  auto ws = mtd::prepare_workspace(c, &warnings);
  for (const auto& w : warnings) log(Level::warn, w);
  log(Level::info, "split: " + std::to_string(ws.split.labeled.size()) + " labeled, " +
                       std::to_string(ws.split.unlabeled.size()) + " unlabeled, " +
                       std::to_string(ws.split.dev.size()) + " dev, " + std::to_string(ws.split.test.size()) +
                       " test (" +
                       std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) +
                       " s)");
  return ws;
}

json split_summary(const mtd::Workspace& ws) {
  return {{"labeled", ws.split.labeled.size()},
          {"unlabeled", ws.split.unlabeled.size()},
          {"dev", ws.split.dev.size()},
          {"test", ws.split.test.size()},
          {"relations", ws.labels.names()}};
}

std::size_t failed_seeds(const mtd::RunReport& r) {
  std::size_t n = 0;
  for (const auto& s : r.per_seed) {
    if (s.error) {
      ++n;
      log(Level::error, std::string(mtd::to_string(r.variant)) + " seed " + std::to_string(s.seed) + ": " + *s.error);
    }
  }
  return n;
}

// ---- commands ----------------------------------------------------------------

struct SynthFlags {
  Overrides common;
  std::optional<std::size_t> num_classes, instances_per_class, vocab_size, triggers_per_class;
  std::optional<double> noise_rate, no_relation_share;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(SynthFlags& f) {
  json j = json::object();
  fs::path base;
  if (!f.common.config.empty()) {
    j = read_json_file(f.common.config);
    base = fs::path(f.common.config).parent_path();
  }
  std::vector<std::string> problems;
  auto c = mtd::parse_config(j, problems, mtd::Profile::synthetic, base);
  if (f.common.out) c.out = *f.common.out;
  auto& s = c.dataset.synthetic;
  if (f.num_classes) s.num_classes = *f.num_classes;
  if (f.instances_per_class) s.instances_per_class = *f.instances_per_class;
  if (f.vocab_size) s.vocab_size = *f.vocab_size;
  if (f.triggers_per_class) s.triggers_per_class = *f.triggers_per_class;
  if (f.noise_rate) s.noise_rate = *f.noise_rate;
  if (f.no_relation_share) s.no_relation_share = *f.no_relation_share;
  if (f.seed) s.seed = *f.seed;
  c.dataset.train.reset();
  c.dataset.dev.reset();
  c.dataset.test.reset();
  auto more = mtd::validation_problems(c);
  problems.insert(problems.end(), more.begin(), more.end());
  if (!problems.empty()) throw mtd::ConfigError(std::move(problems));

  auto corpus = mtd::load_corpus(c);
  ensure_dir(c.out);
  write_json(c.out / "resolved-config.json", mtd::to_json(c));
  const std::pair<const char*, const std::vector<mtd::Instance>*> parts[] = {
      {"train.jsonl", &corpus.train}, {"dev.jsonl", &corpus.dev}, {"test.jsonl", &corpus.test}};
  json files = json::object();
  for (const auto& [name, data] : parts) {
    mtd::save_jsonl(c.out / name, *data, corpus.labels);
    files[name] = data->size();
  }
  write_json(c.out / "labels.json", corpus.labels.to_json());

  // A config that runs on the files just written.
  json run_cfg = mtd::to_json(c);
  run_cfg["dataset"]["train"] = "train.jsonl";
  run_cfg["dataset"]["dev"] = "dev.jsonl";
  run_cfg["dataset"]["test"] = "test.jsonl";
  run_cfg.erase("out");
  write_json(c.out / "config.json", run_cfg);

  write_json(c.out / "manifest.json", {{"generator", s.to_json()},
                                       {"seed", s.seed},
                                       {"partition_seed", c.dataset.partition_seed},
                                       {"dev_fraction", c.dataset.dev_fraction},
                                       {"test_fraction", c.dataset.test_fraction},
                                       {"files", files},
                                       {"labels", corpus.labels.names()}});
  log(Level::info, "wrote synthetic corpus to " + c.out.string());
  return 0;
}

struct RunFlags {
  Overrides common;
  std::string variant = "mtd";
  bool save_model = false;
};

int cmd_run(RunFlags& f) {
  const mtd::Variant variant = mtd::parse_variant(f.variant);
  const auto c = start(f.common);
  auto ws = workspace_for(c);
  auto hs = mtd::harness_settings(c);
  hs.keep_artifacts = f.save_model;

  log(Level::info, "running " + f.variant + " over " + std::to_string(c.seeds.size()) + " seed(s)");
  const auto report = mtd::run_variant(variant, ws, hs, c.seeds, c.effective_workers());

  json rj = report.to_json();
  rj["split"] = split_summary(ws);
  write_json(c.out / "report.json", rj);

  std::ofstream hist(c.out / "history.jsonl", std::ios::binary);
  for (const auto& s : report.per_seed) {
    for (std::size_t run = 0; run < s.history.size(); ++run) {
      for (const auto& rec : s.history[run]) {
        json line = rec;
        line["seed"] = s.seed;
        line["run"] = run;
        hist << line.dump() << '\n';
      }
    }
  }

  if (f.save_model) {
    const auto& first = report.per_seed.front();
    if (first.model) {
      write_json(c.out / "model.json", mtd::model_to_json(*first.model));
      std::ofstream ts(c.out / "teaching.jsonl", std::ios::binary);
      mtd::write_samples(ts, *first.train_samples);
      write_json(c.out / "artifact.json", {{"variant", f.variant},
                                           {"seed", first.seed},
                                           {"model", "model.json"},
                                           {"samples", "teaching.jsonl"},
                                           {"lambda", first.objective.lambda},
                                           {"temperature", first.objective.temperature},
                                           {"scale_distill_by_tau_squared",
                                            first.objective.loss.scale_distill_by_tau_squared}});
      std::ofstream pd(c.out / "predictions.jsonl", std::ios::binary);
      for (const auto& rec : mtd::prediction_dump(*first.model, ws.test, ws.labels)) pd << rec.dump() << '\n';
    }
  }

  std::cout << mtd::to_string(variant) << " F1 " << report.f1.mean << " +- " << report.f1.stdev << " over "
            << report.f1_values().size() << " seed(s)\n";
  return failed_seeds(report) > 0 ? kExitRuntime : 0;
}

struct AblateFlags {
  Overrides common;
  std::vector<std::string> variants;
};

int cmd_ablate(AblateFlags& f) {
  std::vector<mtd::Variant> variants;
  for (const auto& v : f.variants) variants.push_back(mtd::parse_variant(v));
  if (variants.empty()) variants.assign(std::begin(mtd::kAllVariants), std::end(mtd::kAllVariants));
  const auto c = start(f.common);
  auto ws = workspace_for(c);
  const auto hs = mtd::harness_settings(c);

  log(Level::info, "ablation: " + std::to_string(variants.size()) + " variant(s) x " +
                       std::to_string(c.seeds.size()) + " seed(s) on " + std::to_string(c.effective_workers()) +
                       " worker(s)");
  const auto reports = mtd::run_variants(variants, ws, hs, c.seeds, c.effective_workers());
  const auto table = mtd::summarize(reports);

  json all = json::array();
  for (const auto& r : reports) all.push_back(r.to_json());
  write_json(c.out / "reports.json", {{"split", split_summary(ws)}, {"reports", all}});
  write_json(c.out / "comparison.json", table.to_json());
  std::ofstream csv(c.out / "comparison.csv", std::ios::binary);
  table.write_csv(csv);

  std::cout << "variant               F1 mean   F1 std   delta vs mtd\n";
  for (const auto& row : table.rows) {
    std::cout << std::left << std::setw(20) << mtd::to_string(row.variant) << std::right << std::fixed
              << std::setprecision(4) << std::setw(9) << row.f1.mean << std::setw(9) << row.f1.stdev;
    if (row.delta_f1) std::cout << std::setw(11) << *row.delta_f1 << (row.drop ? " (drop)" : "");
    std::cout << '\n';
  }
  std::size_t failed = 0;
  for (const auto& r : reports) failed += failed_seeds(r);
  return failed > 0 ? kExitRuntime : 0;
}

struct LandscapeFlags {
  std::string model;
  std::optional<std::string> samples;
  std::string out = "out";
  std::size_t resolution = 41;
  double half_width = 1.0;
  std::uint64_t direction_seed = 0;
  std::optional<double> lambda, temperature;
};

int cmd_landscape(LandscapeFlags& f) {
  const fs::path model_path = f.model;
  const auto model = mtd::model_from_json(read_json_file(model_path));
  const fs::path dir = model_path.parent_path();
  json artifact = json::object();
  if (fs::is_regular_file(dir / "artifact.json")) artifact = read_json_file(dir / "artifact.json");

  fs::path samples_path = f.samples ? fs::path(*f.samples)
                                    : dir / artifact.value("samples", std::string("teaching.jsonl"));
  if (!fs::is_regular_file(samples_path)) throw UsageError("file not found: " + samples_path.string());
  std::ifstream in(samples_path);
  const auto samples = mtd::read_samples(in);

  mtd::ObjectiveConfig obj;
  obj.lambda = f.lambda.value_or(artifact.value("lambda", 0.0));
  obj.temperature = f.temperature.value_or(artifact.value("temperature", 2.4));
  obj.loss.scale_distill_by_tau_squared = artifact.value("scale_distill_by_tau_squared", false);
  if (!(obj.lambda >= 0.0 && obj.lambda <= 1.0)) throw UsageError("--lambda must lie in [0, 1]");
  if (!(obj.temperature > 0.0)) throw UsageError("--temperature must be positive");
  if (f.resolution < 3 || f.resolution % 2 == 0) throw UsageError("--resolution must be odd and at least 3");
  if (!(f.half_width > 0.0)) throw UsageError("--half-width must be positive");

  mtd::LandscapeOptions opts{f.half_width, f.resolution, f.direction_seed};
  auto grid = mtd::loss_landscape_grid(model, samples, obj, opts);
  grid.metadata["evaluation_data"] = samples_path.string();
  for (const auto& w : grid.warnings) log(Level::warn, w);

  const fs::path out = f.out;
  ensure_dir(out);
  write_json(out / "resolved-config.json", {{"model", model_path.string()},
                                            {"samples", samples_path.string()},
                                            {"resolution", f.resolution},
                                            {"half_width", f.half_width},
                                            {"direction_seed", f.direction_seed},
                                            {"lambda", obj.lambda},
                                            {"temperature", obj.temperature},
                                            {"out", out.string()}});
  std::ofstream csv(out / "landscape.csv", std::ios::binary);
  grid.write_csv(csv);
  json meta = grid.metadata;
  meta["warnings"] = grid.warnings;
  meta["center_loss"] = grid.center();
  write_json(out / "landscape.json", meta);
  std::cout << "center loss " << grid.center() << ", grid " << f.resolution << "x" << f.resolution << '\n';
  return 0;
}

int cmd_stats(Overrides& o) {
  const auto c = start(o);
  const auto corpus = mtd::load_corpus(c);
  const auto report =
      mtd::validate_stats(corpus.train, corpus.dev, corpus.test, corpus.labels, mtd::stats_profile(c.dataset.profile));
  const json j = report.to_json();
  write_json(c.out / "stats.json", j);
  std::cout << j.dump(2) << '\n';
  if (report.profile && !report.all_ok()) {
    log(Level::error, "statistics do not match the " + *report.profile + " profile");
    return kExitRuntime;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-teacher distillation for semi-supervised relation extraction"};
  app.require_subcommand(1);

  SynthFlags synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic corpus");
  c_synth->add_option("--config", synth.common.config, "JSON experiment config");
  c_synth->add_option("--out", synth.common.out, "output directory");
  c_synth->add_option("--num-classes", synth.num_classes);
  c_synth->add_option("--instances-per-class", synth.instances_per_class);
  c_synth->add_option("--vocab-size", synth.vocab_size);
  c_synth->add_option("--triggers-per-class", synth.triggers_per_class);
  c_synth->add_option("--noise-rate", synth.noise_rate);
  c_synth->add_option("--no-relation-share", synth.no_relation_share);
  c_synth->add_option("--seed", synth.seed);

  RunFlags run;
  auto* c_run = app.add_subcommand("run", "run one variant end to end");
  add_experiment_flags(c_run, run.common);
  c_run->add_option("--variant", run.variant, "variant name");
  c_run->add_flag("--save-model", run.save_model, "save the first seed's model and its training samples");

  AblateFlags ablate;
  auto* c_ablate = app.add_subcommand("ablate", "run all (or some) variants and compare");
  add_experiment_flags(c_ablate, ablate.common);
  c_ablate->add_option("--variants", ablate.variants, "subset of variants")->delimiter(',');

  LandscapeFlags land;
  auto* c_land = app.add_subcommand("landscape", "loss surface around a saved model");
  c_land->add_option("--model", land.model, "model JSON written by run --save-model")->required();
  c_land->add_option("--samples", land.samples, "evaluation samples (default: the model's teaching data)");
  c_land->add_option("--out", land.out, "output directory");
  c_land->add_option("--resolution", land.resolution, "odd grid size");
  c_land->add_option("--half-width", land.half_width, "grid covers [-w, w] on both axes");
  c_land->add_option("--direction-seed", land.direction_seed);
  c_land->add_option("--lambda", land.lambda);
  c_land->add_option("--temperature", land.temperature);

  Overrides stats;
  auto* c_stats = app.add_subcommand("stats", "corpus statistics, checked against the dataset profile");
  add_experiment_flags(c_stats, stats);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth);
    if (c_run->parsed()) return cmd_run(run);
    if (c_ablate->parsed()) return cmd_ablate(ablate);
    if (c_land->parsed()) return cmd_landscape(land);
    if (c_stats->parsed()) return cmd_stats(stats);
  } catch (const UsageError& e) {
    log(Level::error, e.what());
    return kExitUsage;
  } catch (const mtd::InvalidArgument& e) {
    log(Level::error, e.what());
    return kExitUsage;
  } catch (const mtd::ParseError& e) {
    log(Level::error, e.what());
    return kExitUsage;
  } catch (const mtd::SchemaError& e) {
    log(Level::error, e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    log(Level::error, e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
