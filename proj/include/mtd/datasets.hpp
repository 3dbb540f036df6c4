#pragma once

// Corpus I/O, stratified labeled/unlabeled splitting, corpus statistics and
// a synthetic relation-corpus generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mtd/error.hpp"
#include "mtd/featurizer.hpp"
#include "mtd/random.hpp"

namespace mtd {

class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names, std::optional<std::string> no_relation = {})
      : names_(std::move(names)) {
    if (names_.size() < 2) throw InvalidArgument("a label set needs at least two relations");
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!index_.emplace(names_[i], i).second) {
        throw InvalidArgument("duplicate relation name '" + names_[i] + "'");
      }
    }
    if (no_relation) {
      auto it = index_.find(*no_relation);
      if (it == index_.end()) {
        throw InvalidArgument("no_relation label '" + *no_relation + "' is not in the label set");
      }
      no_relation_ = it->second;
    }
  }

  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::optional<std::size_t> no_relation_index() const noexcept { return no_relation_; }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index_of(const std::string& name) const {
    if (auto i = find(name)) return *i;
    throw SchemaError("unknown relation label '" + name + "'");
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"names", names_}};
    j["no_relation"] = no_relation_ ? nlohmann::json(names_[*no_relation_]) : nlohmann::json(nullptr);
    return j;
  }

  static LabelSet from_json(const nlohmann::json& j) {
    std::optional<std::string> nr;
    if (j.contains("no_relation") && !j.at("no_relation").is_null()) nr = j.at("no_relation").get<std::string>();
    return LabelSet(j.at("names").get<std::vector<std::string>>(), nr);
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
  std::optional<std::size_t> no_relation_;
};

// ---- JSON-lines I/O ----------------------------------------------------------
//
// One object per line: id, token (array), subj_start, subj_end, obj_start,
// obj_end (inclusive token indices), relation (string; may be omitted).

inline Instance parse_instance(const nlohmann::json& j, const LabelSet& labels, std::size_t line) {
  Instance inst;
  try {
    const auto& id = j.at("id");
    inst.id = id.is_string() ? id.get<std::string>() : id.dump();
    inst.tokens = j.at("token").get<std::vector<std::string>>();
    inst.subj = {j.at("subj_start").get<std::size_t>(), j.at("subj_end").get<std::size_t>() + 1};
    inst.obj = {j.at("obj_start").get<std::size_t>(), j.at("obj_end").get<std::size_t>() + 1};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line, e.what());
  }
  if (j.contains("relation") && !j.at("relation").is_null()) {
    if (!j.at("relation").is_string()) throw ParseError(line, "relation must be a string");
    inst.relation = labels.index_of(j.at("relation").get<std::string>());
  }
  try {
    validate_instance(inst, labels.size());
  } catch (const InvalidArgument& e) {
    throw ParseError(line, e.what());
  }
  return inst;
}

inline nlohmann::json instance_to_json(const Instance& inst, const LabelSet& labels) {
  nlohmann::json j{{"id", inst.id},
                   {"token", inst.tokens},
                   {"subj_start", inst.subj.start},
                   {"subj_end", inst.subj.end - 1},
                   {"obj_start", inst.obj.start},
                   {"obj_end", inst.obj.end - 1}};
  if (inst.relation) j["relation"] = labels.name(*inst.relation);
  return j;
}

inline std::vector<Instance> read_jsonl(std::istream& in, const LabelSet& labels) {
  std::vector<Instance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, e.what());
    }
    if (!j.is_object()) throw ParseError(line_no, "expected a JSON object");
    out.push_back(parse_instance(j, labels, line_no));
  }
  return out;
}

inline std::vector<Instance> load_jsonl(const std::filesystem::path& path, const LabelSet& labels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_jsonl(in, labels);
}

inline void write_jsonl(std::ostream& out, const std::vector<Instance>& data, const LabelSet& labels) {
  for (const auto& inst : data) out << instance_to_json(inst, labels).dump() << '\n';
}

inline void save_jsonl(const std::filesystem::path& path, const std::vector<Instance>& data,
                       const LabelSet& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_jsonl(out, data, labels);
}

// Every relation string found in the files, sorted. no_relation is declared
// when `no_relation_name` occurs.
inline LabelSet infer_label_set(const std::vector<std::filesystem::path>& paths,
                                const std::optional<std::string>& no_relation_name) {
  std::set<std::string> names;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        auto j = nlohmann::json::parse(line);
        if (j.contains("relation") && j["relation"].is_string()) names.insert(j["relation"].get<std::string>());
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(line_no, e.what());
      }
    }
  }
  std::optional<std::string> nr;
  if (no_relation_name && names.count(*no_relation_name)) nr = no_relation_name;
  return LabelSet(std::vector<std::string>(names.begin(), names.end()), nr);
}

// ---- splitting ---------------------------------------------------------------

// Gold labels of unlabeled instances. Only the gold-label baseline and
// generator self-checks may read them.
class OracleLabels {
 public:
  void hide(const std::string& id, std::size_t label) { labels_[id] = label; }
  std::optional<std::size_t> oracle(const std::string& id) const {
    auto it = labels_.find(id);
    if (it == labels_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t size() const noexcept { return labels_.size(); }

 private:
  std::unordered_map<std::string, std::size_t> labels_;
};

struct DataSplit {
  std::vector<Instance> labeled;
  std::vector<Instance> unlabeled;  // relation stripped; see oracle_labels
  std::vector<Instance> dev;
  std::vector<Instance> test;
  OracleLabels oracle_labels;
  std::vector<std::string> warnings;
};

// Integer allocation of `total` items across classes proportional to the
// exact quotas, rounding by largest remainder (ties to the lower class), never
// exceeding caps.
inline std::vector<std::size_t> largest_remainder(const std::vector<double>& exact, std::size_t total,
                                                  const std::vector<std::size_t>& caps) {
  const std::size_t k = exact.size();
  std::vector<std::size_t> alloc(k);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    alloc[c] = std::min(caps[c], static_cast<std::size_t>(std::floor(exact[c])));
    assigned += alloc[c];
  }
  std::vector<std::size_t> order(k);
  for (std::size_t c = 0; c < k; ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return exact[a] - std::floor(exact[a]) > exact[b] - std::floor(exact[b]);
  });
  // Repeated passes handle caps: a capped class hands its share to the next one.
  while (assigned < total) {
    bool progressed = false;
    for (std::size_t c : order) {
      if (assigned == total) break;
      if (alloc[c] < caps[c]) {
        ++alloc[c];
        ++assigned;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  return alloc;
}

inline std::size_t round_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

// Stratified sampling of D_L and D_U from the training pool. Output lists keep
// pool order. dev/test are passed through untouched.
inline DataSplit make_split(const std::vector<Instance>& pool, std::vector<Instance> dev,
                            std::vector<Instance> test, std::size_t num_relations,
                            double labeled_fraction, double unlabeled_fraction, std::uint64_t seed) {
  if (!(labeled_fraction > 0.0) || unlabeled_fraction < 0.0 ||
      labeled_fraction + unlabeled_fraction > 1.0 + 1e-12) {
    throw InvalidArgument("make_split: fractions must be positive and sum to at most 1");
  }
  std::vector<std::vector<std::size_t>> by_class(num_relations);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!pool[i].relation) throw InvalidArgument("make_split: pool instance '" + pool[i].id + "' has no relation");
    if (*pool[i].relation >= num_relations) throw InvalidArgument("make_split: relation index out of range");
    by_class[*pool[i].relation].push_back(i);
  }
  const std::size_t n = pool.size();
  std::vector<double> exact_l(num_relations), exact_u(num_relations);
  std::vector<std::size_t> caps(num_relations);
  for (std::size_t c = 0; c < num_relations; ++c) {
    caps[c] = by_class[c].size();
    exact_l[c] = labeled_fraction * static_cast<double>(caps[c]);
    exact_u[c] = unlabeled_fraction * static_cast<double>(caps[c]);
  }
  const auto n_l = largest_remainder(exact_l, round_count(labeled_fraction, n), caps);
  std::vector<std::size_t> rest(num_relations);
  for (std::size_t c = 0; c < num_relations; ++c) rest[c] = caps[c] - n_l[c];
  const auto n_u = largest_remainder(exact_u, round_count(unlabeled_fraction, n), rest);

  enum class Dest : std::uint8_t { none, labeled, unlabeled };
  std::vector<Dest> dest(n, Dest::none);
  DataSplit split;
  for (std::size_t c = 0; c < num_relations; ++c) {
    auto members = by_class[c];
    Rng rng(derive_seed(seed, c));
    rng.shuffle(std::span<std::size_t>(members));
    for (std::size_t k = 0; k < n_l[c]; ++k) dest[members[k]] = Dest::labeled;
    for (std::size_t k = 0; k < n_u[c]; ++k) dest[members[n_l[c] + k]] = Dest::unlabeled;
    if (n_l[c] == 0 && caps[c] > 0) {
      split.warnings.push_back("relation " + std::to_string(c) + " has no labeled instances after stratification");
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (dest[i] == Dest::labeled) {
      split.labeled.push_back(pool[i]);
    } else if (dest[i] == Dest::unlabeled) {
      Instance hidden = pool[i];
      split.oracle_labels.hide(hidden.id, *hidden.relation);
      hidden.relation.reset();
      split.unlabeled.push_back(std::move(hidden));
    }
  }
  split.dev = std::move(dev);
  split.test = std::move(test);

  std::unordered_set<std::string> ids;
  for (const auto* part : {&split.labeled, &split.unlabeled, &split.dev, &split.test}) {
    for (const auto& inst : *part) {
      if (!ids.insert(inst.id).second) throw InvalidArgument("make_split: duplicate instance id '" + inst.id + "'");
    }
  }
  return split;
}

// ---- statistics ----------------------------------------------------------------

struct DatasetProfile {
  std::string name;
  std::size_t train = 0;
  std::size_t dev = 0;
  std::size_t test = 0;
  std::size_t relations = 0;
  double no_relation_percent = 0.0;
  double percent_tolerance = 0.1;
};

inline const DatasetProfile kSemEvalProfile{"semeval", 7199, 800, 2715, 19, 17.6, 0.1};
inline const DatasetProfile kTacredProfile{"tacred", 68124, 22631, 15509, 42, 79.5, 0.1};

struct StatCheck {
  std::string field;
  double expected = 0.0;
  double actual = 0.0;
  bool ok = false;
};

struct StatsReport {
  std::size_t train = 0;
  std::size_t dev = 0;
  std::size_t test = 0;
  std::size_t relations = 0;
  double no_relation_percent = 0.0;  // share of training instances labeled no_relation
  std::optional<std::string> profile;
  std::vector<StatCheck> checks;

  bool all_ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const StatCheck& c) { return c.ok; });
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"train", train},
                     {"dev", dev},
                     {"test", test},
                     {"relations", relations},
                     {"no_relation_percent", no_relation_percent}};
    if (profile) {
      j["profile"] = *profile;
      j["checks"] = nlohmann::json::array();
      for (const auto& c : checks) {
        j["checks"].push_back({{"field", c.field}, {"expected", c.expected}, {"actual", c.actual}, {"ok", c.ok}});
      }
      j["all_ok"] = all_ok();
    }
    return j;
  }
};

inline StatsReport validate_stats(const std::vector<Instance>& train, const std::vector<Instance>& dev,
                                  const std::vector<Instance>& test, const LabelSet& labels,
                                  const std::optional<DatasetProfile>& profile = {}) {
  StatsReport r;
  r.train = train.size();
  r.dev = dev.size();
  r.test = test.size();
  r.relations = labels.size();
  if (auto nr = labels.no_relation_index(); nr && !train.empty()) {
    const auto neg = std::count_if(train.begin(), train.end(),
                                   [&](const Instance& i) { return i.relation == *nr; });
    r.no_relation_percent = 100.0 * static_cast<double>(neg) / static_cast<double>(train.size());
  }
  if (profile) {
    r.profile = profile->name;
    auto exact = [&](const char* f, std::size_t e, std::size_t a) {
      r.checks.push_back({f, static_cast<double>(e), static_cast<double>(a), e == a});
    };
    exact("train", profile->train, r.train);
    exact("dev", profile->dev, r.dev);
    exact("test", profile->test, r.test);
    exact("relations", profile->relations, r.relations);
    r.checks.push_back({"no_relation_percent", profile->no_relation_percent, r.no_relation_percent,
                        std::abs(r.no_relation_percent - profile->no_relation_percent) <=
                            profile->percent_tolerance + 1e-9});
  }
  return r;
}

// ---- synthetic corpus ----------------------------------------------------------

struct SyntheticParams {
  std::size_t num_classes = 10;
  std::size_t instances_per_class = 300;
  std::size_t vocab_size = 400;
  double noise_rate = 0.25;
  // Share of the corpus labeled no_relation (class 0). 0 disables the negative class.
  double no_relation_share = 0.0;
  std::size_t triggers_per_class = 3;
  // Up to this many filler tokens before the first and after the second entity.
  std::size_t max_context = 3;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    return {{"num_classes", num_classes},
            {"instances_per_class", instances_per_class},
            {"vocab_size", vocab_size},
            {"noise_rate", noise_rate},
            {"no_relation_share", no_relation_share},
            {"triggers_per_class", triggers_per_class},
            {"max_context", max_context},
            {"seed", seed}};
  }
};

// Words left over after the trigger blocks; they fill context and entities.
inline constexpr std::size_t kMinFillerVocab = 16;

inline std::string synthetic_token(std::size_t v) { return "w" + std::to_string(v); }

struct SyntheticCorpus {
  LabelSet labels;
  std::vector<Instance> instances;
};

// Every class (no_relation included) owns a disjoint block of trigger words;
// the rest of the vocabulary is filler. A sentence reads
//   context  ENTITY  gap  ENTITY  context
// where the gap holds 2-3 triggers of the instance's class (plus at most one
// filler word) and, with probability noise_rate, as many triggers of a
// uniformly drawn other class.
inline SyntheticCorpus generate_synthetic(const SyntheticParams& p) {
  if (p.num_classes < 2) throw InvalidArgument("generate_synthetic: num_classes must be at least 2");
  if (!(p.noise_rate >= 0.0 && p.noise_rate < 0.5)) {
    throw InvalidArgument("generate_synthetic: noise_rate must lie in [0, 0.5)");
  }
  if (!(p.no_relation_share >= 0.0 && p.no_relation_share < 1.0)) {
    throw InvalidArgument("generate_synthetic: no_relation_share must lie in [0, 1)");
  }
  if (p.triggers_per_class < 2) throw InvalidArgument("generate_synthetic: need at least 2 triggers per class");
  if (p.instances_per_class == 0) throw InvalidArgument("generate_synthetic: instances_per_class must be positive");
  const bool has_negative = p.no_relation_share > 0.0;
  const std::size_t trigger_vocab = p.num_classes * p.triggers_per_class;
  if (p.vocab_size < trigger_vocab + kMinFillerVocab) {
    throw InvalidArgument("generate_synthetic: vocab_size " + std::to_string(p.vocab_size) +
                          " is too small for disjoint trigger sets (need at least " +
                          std::to_string(trigger_vocab + kMinFillerVocab) + ")");
  }

  std::vector<std::string> names;
  for (std::size_t c = 0; c < p.num_classes; ++c) {
    names.push_back(has_negative && c == 0 ? "no_relation" : "rel_" + std::to_string(c));
  }
  SyntheticCorpus corpus{LabelSet(names, has_negative ? std::optional<std::string>("no_relation") : std::nullopt), {}};

  std::vector<std::size_t> counts(p.num_classes, p.instances_per_class);
  if (has_negative) {
    const double positives = static_cast<double>(p.instances_per_class * (p.num_classes - 1));
    counts[0] = static_cast<std::size_t>(std::llround(positives * p.no_relation_share / (1.0 - p.no_relation_share)));
  }
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < p.num_classes; ++c) labels.insert(labels.end(), counts[c], c);

  Rng rng(derive_seed(p.seed, 0x5717));
  rng.shuffle(std::span<std::size_t>(labels));
  const std::size_t filler_vocab = p.vocab_size - trigger_vocab;
  auto trigger = [&](std::size_t cls) {
    return synthetic_token(cls * p.triggers_per_class + rng.below(p.triggers_per_class));
  };
  auto filler = [&] { return synthetic_token(trigger_vocab + rng.below(filler_vocab)); };

  corpus.instances.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t cls = labels[i];
    Instance inst;
    inst.id = "syn-" + std::to_string(i);
    inst.relation = cls;

    std::vector<std::string> gap;
    const std::size_t k = 2 + rng.below(2);
    for (std::size_t j = 0; j < k; ++j) gap.push_back(trigger(cls));
    if (rng.bernoulli(p.noise_rate)) {
      const std::size_t other = (cls + 1 + rng.below(p.num_classes - 1)) % p.num_classes;
      for (std::size_t j = 0; j < k; ++j) gap.push_back(trigger(other));
      rng.shuffle(std::span<std::string>(gap));
    }
    if (rng.bernoulli(0.5)) gap.insert(gap.begin() + static_cast<std::ptrdiff_t>(rng.below(gap.size() + 1)), filler());

    auto& toks = inst.tokens;
    const std::size_t before = rng.below(p.max_context + 1);
    for (std::size_t j = 0; j < before; ++j) toks.push_back(filler());
    Span first{toks.size(), 0};
    for (std::size_t j = 0, n = 1 + rng.below(2); j < n; ++j) toks.push_back(filler());
    first.end = toks.size();
    toks.insert(toks.end(), gap.begin(), gap.end());
    Span second{toks.size(), 0};
    for (std::size_t j = 0, n = 1 + rng.below(2); j < n; ++j) toks.push_back(filler());
    second.end = toks.size();
    const std::size_t after = rng.below(p.max_context + 1);
    for (std::size_t j = 0; j < after; ++j) toks.push_back(filler());

    if (rng.bernoulli(0.5)) {
      inst.subj = first;
      inst.obj = second;
    } else {
      inst.subj = second;
      inst.obj = first;
    }
    corpus.instances.push_back(std::move(inst));
  }
  return corpus;
}

struct CorpusParts {
  std::vector<Instance> train;
  std::vector<Instance> dev;
  std::vector<Instance> test;
};

// Stratified train/dev/test partition of a labeled corpus; parts keep input order.
inline CorpusParts partition_corpus(const std::vector<Instance>& data, std::size_t num_relations,
                                    double dev_fraction, double test_fraction, std::uint64_t seed) {
  if (dev_fraction < 0.0 || test_fraction < 0.0 || dev_fraction + test_fraction >= 1.0) {
    throw InvalidArgument("partition_corpus: dev + test fractions must lie in [0, 1)");
  }
  // Reuse the labeled/unlabeled sampler: "labeled" becomes train, "unlabeled" becomes test.
  const double train_fraction = 1.0 - dev_fraction - test_fraction;
  DataSplit s = make_split(data, {}, {}, num_relations, train_fraction, test_fraction, seed);
  std::unordered_set<std::string> taken;
  for (const auto& i : s.labeled) taken.insert(i.id);
  for (const auto& i : s.unlabeled) taken.insert(i.id);
  CorpusParts parts;
  parts.train = std::move(s.labeled);
  for (const auto& inst : data) {
    if (s.oracle_labels.oracle(inst.id)) {
      parts.test.push_back(inst);
    } else if (!taken.count(inst.id)) {
      parts.dev.push_back(inst);
    }
  }
  return parts;
}

}  // namespace mtd
