#pragma once

// Experiment configuration: profile defaults, JSON parsing with exhaustive
// validation, and turning a resolved config into a prepared workspace.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mtd/datasets.hpp"
#include "mtd/error.hpp"
#include "mtd/harness.hpp"

namespace mtd {

// Validation failure carrying every offending field.
class ConfigError : public InvalidArgument {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : InvalidArgument(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& ps) {
    std::string s = "invalid configuration:";
    for (const auto& p : ps) s += "\n  " + p;
    return s;
  }
  std::vector<std::string> problems_;
};

enum class Profile { synthetic, semeval, tacred };

inline std::string_view to_string(Profile p) {
  switch (p) {
    case Profile::synthetic: return "synthetic";
    case Profile::semeval: return "semeval";
    case Profile::tacred: return "tacred";
  }
  return "?";
}

inline std::optional<Profile> find_profile(std::string_view s) {
  for (auto p : {Profile::synthetic, Profile::semeval, Profile::tacred}) {
    if (to_string(p) == s) return p;
  }
  return std::nullopt;
}

struct DatasetConfig {
  Profile profile = Profile::synthetic;
  // File-backed corpora (required for semeval/tacred, optional for synthetic).
  std::optional<std::filesystem::path> train, dev, test;
  std::string no_relation = "no_relation";
  // In-memory corpus when no files are given.
  SyntheticParams synthetic;
  double dev_fraction = 0.1;
  double test_fraction = 0.2;
  std::uint64_t partition_seed = 11;

  bool from_files() const noexcept { return train || dev || test; }
};

struct ExperimentConfig {
  DatasetConfig dataset;
  double labeled_fraction = 0.05;
  double unlabeled_fraction = 0.5;
  std::uint64_t split_seed = 13;
  SslMethod ssl_method = SslMethod::self_training;
  int iterations = 10;
  double selection_ratio = 0.10;
  double confidence_floor = 0.0;
  ModelConfig model;
  std::uint64_t hash_seed = 0;
  double lambda = 0.4;
  double temperature = 2.4;
  bool include_difference = true;
  bool scale_distill_by_tau_squared = false;
  TeacherChoice single_teacher = TeacherChoice::first;
  bool student_from_teacher = false;
  bool gold_with_mtd = false;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t workers = 0;  // 0: one per hardware thread
  std::filesystem::path out = "out";

  std::size_t effective_workers() const {
    if (workers > 0) return workers;
    return std::max(1u, std::thread::hardware_concurrency());
  }
};

inline std::vector<std::uint64_t> seed_range(std::size_t n) {
  std::vector<std::uint64_t> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = i + 1;
  return s;
}

inline ExperimentConfig defaults_for(Profile p) {
  ExperimentConfig c;
  c.dataset.profile = p;
  switch (p) {
    case Profile::synthetic:
      c.dataset.synthetic.no_relation_share = 0.4;
      c.dataset.synthetic.seed = 7;
      c.lambda = 0.4;
      c.seeds = seed_range(5);
      c.labeled_fraction = 0.05;
      break;
    case Profile::semeval:
      c.dataset.no_relation = "Other";
      c.lambda = 0.3;
      c.seeds = seed_range(5);
      c.labeled_fraction = 0.05;
      break;
    case Profile::tacred:
      c.lambda = 0.5;
      c.seeds = seed_range(3);
      c.labeled_fraction = 0.03;
      break;
  }
  return c;
}

namespace detail {

inline std::string_view choice_name(TeacherChoice t) {
  switch (t) {
    case TeacherChoice::both: return "both";
    case TeacherChoice::first: return "first";
    case TeacherChoice::second: return "second";
  }
  return "?";
}

// Reads typed fields out of a JSON object, recording every problem instead of
// stopping at the first one.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string prefix, std::vector<std::string>& problems)
      : j_(j), prefix_(std::move(prefix)), problems_(problems) {
    if (!j_.is_object()) problems_.push_back((prefix_.empty() ? std::string("config") : prefix_) + ": expected an object");
  }

  // True when the field was present and well typed.
  template <typename T>
  bool read(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return false;
    try {
      dst = j_.at(key).get<T>();
      return true;
    } catch (const nlohmann::json::exception&) {
      problems_.push_back(path(key) + ": wrong type (" + j_.at(key).dump() + ")");
      return false;
    }
  }

  void read_path(const char* key, std::optional<std::filesystem::path>& dst) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key) || j_.at(key).is_null()) return;
    if (!j_.at(key).is_string()) {
      problems_.push_back(path(key) + ": expected a path string");
      return;
    }
    dst = j_.at(key).get<std::string>();
  }

  template <typename Parse>
  void read_enum(const char* key, Parse&& parse) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    if (!j_.at(key).is_string()) {
      problems_.push_back(path(key) + ": expected a string");
      return;
    }
    try {
      parse(j_.at(key).get<std::string>());
    } catch (const InvalidArgument& e) {
      problems_.push_back(path(key) + ": " + e.what());
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  void reject_unknown() {
    if (!j_.is_object()) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) problems_.push_back(path(k.c_str()) + ": unknown field");
    }
  }

  std::string path(const char* key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

 private:
  const nlohmann::json& j_;
  std::string prefix_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  auto opt_path = [](const std::optional<std::filesystem::path>& p) {
    return p ? nlohmann::json(p->string()) : nlohmann::json(nullptr);
  };
  const auto& d = c.dataset;
  return {
      {"dataset",
       {{"profile", std::string(to_string(d.profile))},
        {"train", opt_path(d.train)},
        {"dev", opt_path(d.dev)},
        {"test", opt_path(d.test)},
        {"no_relation", d.no_relation},
        {"synthetic", d.synthetic.to_json()},
        {"dev_fraction", d.dev_fraction},
        {"test_fraction", d.test_fraction},
        {"partition_seed", d.partition_seed}}},
      {"labeled_fraction", c.labeled_fraction},
      {"unlabeled_fraction", c.unlabeled_fraction},
      {"split_seed", c.split_seed},
      {"ssl_method", std::string(to_string(c.ssl_method))},
      {"iterations", c.iterations},
      {"selection_ratio", c.selection_ratio},
      {"confidence_floor", c.confidence_floor},
      {"arch", std::string(to_string(c.model.arch))},
      {"dim", c.model.dim},
      {"hidden", c.model.hidden},
      {"learning_rate", c.model.effective_learning_rate()},
      {"batch_size", c.model.batch_size},
      {"epochs", c.model.epochs},
      {"hash_seed", c.hash_seed},
      {"lambda", c.lambda},
      {"temperature", c.temperature},
      {"include_difference", c.include_difference},
      {"scale_distill_by_tau_squared", c.scale_distill_by_tau_squared},
      {"single_teacher", std::string(detail::choice_name(c.single_teacher))},
      {"student_from_teacher", c.student_from_teacher},
      {"gold_with_mtd", c.gold_with_mtd},
      {"seeds", c.seeds},
      {"workers", c.workers},
      {"out", c.out.string()},
  };
}

// Every range and consistency problem, one message per field.
inline std::vector<std::string> validation_problems(const ExperimentConfig& c) {
  std::vector<std::string> p;
  auto in01_open = [&](const char* f, double v) {
    if (!(v > 0.0 && v < 1.0)) p.push_back(std::string(f) + ": must lie in (0, 1), got " + std::to_string(v));
  };
  const auto& d = c.dataset;
  if (d.profile != Profile::synthetic && !d.from_files()) {
    p.push_back("dataset: profile '" + std::string(to_string(d.profile)) + "' needs train, dev and test paths");
  }
  if (d.from_files()) {
    for (auto [name, path] : {std::pair{"dataset.train", &d.train}, {"dataset.dev", &d.dev}, {"dataset.test", &d.test}}) {
      if (!*path) {
        p.push_back(std::string(name) + ": missing (train, dev and test must be given together)");
      } else if (!std::filesystem::is_regular_file(**path)) {
        p.push_back(std::string(name) + ": file not found: " + (*path)->string());
      }
    }
  } else {
    if (d.dev_fraction < 0.0 || d.test_fraction < 0.0 || d.dev_fraction + d.test_fraction >= 1.0) {
      p.push_back("dataset.dev_fraction/test_fraction: must be non-negative with a sum below 1");
    }
    const auto& s = d.synthetic;
    if (s.num_classes < 2) p.push_back("dataset.synthetic.num_classes: must be at least 2");
    if (s.instances_per_class == 0) p.push_back("dataset.synthetic.instances_per_class: must be positive");
    if (!(s.noise_rate >= 0.0 && s.noise_rate < 0.5)) p.push_back("dataset.synthetic.noise_rate: must lie in [0, 0.5)");
    if (!(s.no_relation_share >= 0.0 && s.no_relation_share < 1.0)) {
      p.push_back("dataset.synthetic.no_relation_share: must lie in [0, 1)");
    }
    if (s.triggers_per_class < 2) p.push_back("dataset.synthetic.triggers_per_class: must be at least 2");
    if (s.vocab_size < s.num_classes * s.triggers_per_class + kMinFillerVocab) {
      p.push_back("dataset.synthetic.vocab_size: " + std::to_string(s.vocab_size) + " is too small (need at least " +
                  std::to_string(s.num_classes * s.triggers_per_class + kMinFillerVocab) + ")");
    }
  }
  in01_open("labeled_fraction", c.labeled_fraction);
  if (!(c.unlabeled_fraction >= 0.0 && c.unlabeled_fraction < 1.0)) {
    p.push_back("unlabeled_fraction: must lie in [0, 1)");
  } else if (c.labeled_fraction + c.unlabeled_fraction > 1.0 + 1e-12) {
    p.push_back("labeled_fraction + unlabeled_fraction: must not exceed 1");
  }
  if (c.iterations < 1) p.push_back("iterations: must be a positive integer, got " + std::to_string(c.iterations));
  if (!(c.selection_ratio > 0.0 && c.selection_ratio <= 1.0)) p.push_back("selection_ratio: must lie in (0, 1]");
  if (!(c.confidence_floor >= 0.0 && c.confidence_floor <= 1.0)) p.push_back("confidence_floor: must lie in [0, 1]");
  if (!is_power_of_two(c.model.dim) || c.model.dim < kMinFeatureDim) {
    p.push_back("dim: must be a power of two no smaller than " + std::to_string(kMinFeatureDim));
  }
  if (c.model.arch == Arch::mlp1 && c.model.hidden == 0) p.push_back("hidden: must be positive");
  if (c.model.learning_rate && (!(*c.model.learning_rate > 0.0) || !std::isfinite(*c.model.learning_rate))) {
    p.push_back("learning_rate: must be positive");
  }
  if (c.model.batch_size == 0) p.push_back("batch_size: must be positive");
  if (c.model.epochs < 1) p.push_back("epochs: must be positive");
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) p.push_back("lambda: must lie in [0, 1]");
  if (!(c.temperature > 0.0) || !std::isfinite(c.temperature)) p.push_back("temperature: must be positive");
  if (c.single_teacher == TeacherChoice::both) p.push_back("single_teacher: must be 'first' or 'second'");
  if (c.seeds.empty()) p.push_back("seeds: need at least one seed");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    p.push_back("seeds: duplicates are not allowed");
  }
  if (c.out.empty()) p.push_back("out: must not be empty");
  return p;
}

inline void validate(const ExperimentConfig& c) {
  auto p = validation_problems(c);
  if (!p.empty()) throw ConfigError(std::move(p));
}

// Applies a (possibly partial) JSON document on top of the defaults of its
// profile, or of `profile_override` when given. Relative dataset paths are
// resolved against `base_dir`. Type and unknown-field problems are appended
// to `problems`; ranges are not checked here.
inline ExperimentConfig parse_config(const nlohmann::json& j, std::vector<std::string>& problems,
                                     std::optional<Profile> profile_override = {},
                                     const std::filesystem::path& base_dir = {}) {
  Profile profile = Profile::synthetic;
  if (j.is_object() && j.contains("dataset") && j["dataset"].is_object() && j["dataset"].contains("profile")) {
    const auto& pj = j["dataset"]["profile"];
    auto found = pj.is_string() ? find_profile(pj.get<std::string>()) : std::nullopt;
    if (!found) {
      problems.push_back("dataset.profile: must be one of synthetic, semeval, tacred (got " + pj.dump() + ")");
    } else {
      profile = *found;
    }
  }
  if (profile_override) profile = *profile_override;
  ExperimentConfig c = defaults_for(profile);

  detail::FieldReader r(j, "", problems);
  if (const auto* dj = r.child("dataset")) {
    detail::FieldReader dr(*dj, "dataset", problems);
    std::string ignored;
    dr.read("profile", ignored);
    dr.read_path("train", c.dataset.train);
    dr.read_path("dev", c.dataset.dev);
    dr.read_path("test", c.dataset.test);
    dr.read("no_relation", c.dataset.no_relation);
    dr.read("dev_fraction", c.dataset.dev_fraction);
    dr.read("test_fraction", c.dataset.test_fraction);
    dr.read("partition_seed", c.dataset.partition_seed);
    if (const auto* sj = dr.child("synthetic")) {
      detail::FieldReader sr(*sj, "dataset.synthetic", problems);
      auto& s = c.dataset.synthetic;
      sr.read("num_classes", s.num_classes);
      sr.read("instances_per_class", s.instances_per_class);
      sr.read("vocab_size", s.vocab_size);
      sr.read("noise_rate", s.noise_rate);
      sr.read("no_relation_share", s.no_relation_share);
      sr.read("triggers_per_class", s.triggers_per_class);
      sr.read("max_context", s.max_context);
      sr.read("seed", s.seed);
      sr.reject_unknown();
    }
    dr.reject_unknown();
    if (!base_dir.empty()) {
      for (auto* p : {&c.dataset.train, &c.dataset.dev, &c.dataset.test}) {
        if (*p && p->value().is_relative()) *p = base_dir / **p;
      }
    }
  }
  r.read("labeled_fraction", c.labeled_fraction);
  r.read("unlabeled_fraction", c.unlabeled_fraction);
  r.read("split_seed", c.split_seed);
  r.read_enum("ssl_method", [&](const std::string& s) { c.ssl_method = parse_ssl_method(s); });
  r.read("iterations", c.iterations);
  r.read("selection_ratio", c.selection_ratio);
  r.read("confidence_floor", c.confidence_floor);
  r.read_enum("arch", [&](const std::string& s) { c.model.arch = parse_arch(s); });
  r.read("dim", c.model.dim);
  r.read("hidden", c.model.hidden);
  if (double lr = 0.0; r.read("learning_rate", lr)) c.model.learning_rate = lr;
  r.read("batch_size", c.model.batch_size);
  r.read("epochs", c.model.epochs);
  r.read("hash_seed", c.hash_seed);
  r.read("lambda", c.lambda);
  r.read("temperature", c.temperature);
  r.read("include_difference", c.include_difference);
  r.read("scale_distill_by_tau_squared", c.scale_distill_by_tau_squared);
  r.read_enum("single_teacher", [&](const std::string& s) {
    if (s == "first") {
      c.single_teacher = TeacherChoice::first;
    } else if (s == "second") {
      c.single_teacher = TeacherChoice::second;
    } else {
      throw InvalidArgument("must be 'first' or 'second'");
    }
  });
  r.read("student_from_teacher", c.student_from_teacher);
  r.read("gold_with_mtd", c.gold_with_mtd);
  if (const auto* sj = r.child("seeds")) {
    auto non_negative = [](const nlohmann::json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.template get<std::int64_t>() >= 0);
    };
    if (non_negative(*sj)) {
      c.seeds = seed_range(sj->get<std::size_t>());
    } else if (sj->is_array() && std::all_of(sj->begin(), sj->end(), non_negative)) {
      c.seeds = sj->get<std::vector<std::uint64_t>>();
    } else {
      problems.push_back("seeds: expected a count or a list of non-negative integers");
    }
  }
  r.read("workers", c.workers);
  std::string out = c.out.string();
  r.read("out", out);
  c.out = out;
  r.reject_unknown();
  return c;
}

// parse_config followed by validation; throws with every problem found.
inline ExperimentConfig config_from_json(const nlohmann::json& j, std::optional<Profile> profile_override = {},
                                         const std::filesystem::path& base_dir = {}) {
  std::vector<std::string> problems;
  ExperimentConfig c = parse_config(j, problems, profile_override, base_dir);
  auto more = validation_problems(c);
  problems.insert(problems.end(), more.begin(), more.end());
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

inline HarnessSettings harness_settings(const ExperimentConfig& c) {
  HarnessSettings hs;
  hs.model = c.model;
  hs.ssl.method = c.ssl_method;
  hs.ssl.iterations = c.iterations;
  hs.ssl.selection_ratio = c.selection_ratio;
  hs.ssl.confidence_floor = c.confidence_floor;
  hs.lambda = c.lambda;
  hs.temperature = c.temperature;
  hs.loss.scale_distill_by_tau_squared = c.scale_distill_by_tau_squared;
  hs.include_difference = c.include_difference;
  hs.single_teacher = c.single_teacher;
  hs.student_from_teacher = c.student_from_teacher;
  hs.gold_with_mtd = c.gold_with_mtd;
  return hs;
}

// A labeled corpus in its train/dev/test parts.
struct Corpus {
  LabelSet labels;
  std::vector<Instance> train, dev, test;
};

inline Corpus load_corpus(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  if (d.from_files()) {
    Corpus corpus;
    corpus.labels = infer_label_set({*d.train, *d.dev, *d.test}, d.no_relation);
    corpus.train = load_jsonl(*d.train, corpus.labels);
    corpus.dev = load_jsonl(*d.dev, corpus.labels);
    corpus.test = load_jsonl(*d.test, corpus.labels);
    return corpus;
  }
  auto syn = generate_synthetic(d.synthetic);
  auto parts = partition_corpus(syn.instances, syn.labels.size(), d.dev_fraction, d.test_fraction, d.partition_seed);
  return {std::move(syn.labels), std::move(parts.train), std::move(parts.dev), std::move(parts.test)};
}

inline Workspace prepare_workspace(const ExperimentConfig& c, std::vector<std::string>* warnings = nullptr) {
  Corpus corpus = load_corpus(c);
  DataSplit split = make_split(corpus.train, std::move(corpus.dev), std::move(corpus.test), corpus.labels.size(),
                               c.labeled_fraction, c.unlabeled_fraction, c.split_seed);
  if (warnings) warnings->insert(warnings->end(), split.warnings.begin(), split.warnings.end());
  return make_workspace(std::move(corpus.labels), std::move(split), c.model.dim, c.hash_seed);
}

inline std::optional<DatasetProfile> stats_profile(Profile p) {
  switch (p) {
    case Profile::semeval: return kSemEvalProfile;
    case Profile::tacred: return kTacredProfile;
    case Profile::synthetic: return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace mtd
