#pragma once

// Base semi-supervised loop: train, pseudo-label the most confident unlabeled
// instances (intersection of two models where there are two), augment, repeat.
// The models of the final round become the two teachers for distillation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mtd/classifier.hpp"
#include "mtd/datasets.hpp"
#include "mtd/eval.hpp"
#include "mtd/featurizer.hpp"

namespace mtd {

// Featurized view of every instance in a split, keyed by id.
class FeatureCache {
 public:
  FeatureCache() = default;
  FeatureCache(const DataSplit& split, std::size_t dim, std::uint64_t hash_seed) : dim_(dim) {
    for (const auto* part : {&split.labeled, &split.unlabeled, &split.dev, &split.test}) {
      for (const auto& inst : *part) by_id_.emplace(inst.id, featurize(inst, dim, hash_seed));
    }
  }

  const FeatureVector& at(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw InvalidArgument("no features cached for instance '" + id + "'");
    return it->second;
  }

  void add(const Instance& inst, std::uint64_t hash_seed) { by_id_.emplace(inst.id, featurize(inst, dim_, hash_seed)); }

  std::size_t dim() const noexcept { return dim_; }

  EvalSet eval_set(const std::vector<Instance>& data) const {
    EvalSet s;
    for (const auto& inst : data) {
      if (!inst.relation) throw InvalidArgument("evaluation instance '" + inst.id + "' has no relation");
      s.ids.push_back(inst.id);
      s.features.push_back(at(inst.id));
      s.gold.push_back(*inst.relation);
    }
    return s;
  }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, FeatureVector> by_id_;
};

// Shape and optimizer settings shared by every model trained in a run.
struct ModelConfig {
  Arch arch = Arch::linear;
  std::size_t dim = kDefaultFeatureDim;
  std::size_t hidden = kDefaultHidden;
  std::optional<double> learning_rate;  // unset: the architecture's default
  std::size_t batch_size = 20;
  int epochs = 10;

  double effective_learning_rate() const { return learning_rate.value_or(default_learning_rate(arch)); }

  OptimizerState optimizer(std::uint64_t model_seed) const {
    return {effective_learning_rate(), batch_size, epochs, derive_seed(model_seed, 0x0b7)};
  }
};

enum class SslMethod { self_training, self_training_i, re_ensemble, gold_oracle };

inline std::string_view to_string(SslMethod m) {
  switch (m) {
    case SslMethod::self_training: return "self_training";
    case SslMethod::self_training_i: return "self_training_i";
    case SslMethod::re_ensemble: return "re_ensemble";
    case SslMethod::gold_oracle: return "gold_oracle";
  }
  return "?";
}

inline SslMethod parse_ssl_method(std::string_view s) {
  for (auto m : {SslMethod::self_training, SslMethod::self_training_i, SslMethod::re_ensemble, SslMethod::gold_oracle}) {
    if (s == to_string(m)) return m;
  }
  throw InvalidArgument("unknown ssl method '" + std::string(s) +
                        "' (expected self_training, self_training_i, re_ensemble or gold_oracle)");
}

struct SslConfig {
  SslMethod method = SslMethod::self_training;
  int iterations = 10;
  double selection_ratio = 0.10;
  std::pair<std::uint64_t, std::uint64_t> seeds{1, 2};
  double confidence_floor = 0.0;
};

struct LabeledEntry {
  Instance instance;
  std::size_t label = 0;
};

struct IterationRecord {
  int iteration = 0;
  std::size_t pool_start = 0;  // unlabeled pool size when the iteration began
  std::size_t selected = 0;
  double agreement_rate = 1.0;
  Scores dev;

  nlohmann::json to_json() const {
    return {{"iteration", iteration},   {"pool_start", pool_start},   {"selected", selected},
            {"agreement_rate", agreement_rate}, {"dev_precision", dev.precision},
            {"dev_recall", dev.recall}, {"dev_f1", dev.f1}};
  }
};

struct SslState {
  std::vector<LabeledEntry> labeled_pool;
  std::vector<Instance> unlabeled_pool;
  std::vector<Model> models;
  std::vector<IterationRecord> history;
  std::optional<std::string> stop_reason;

  nlohmann::json history_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : history) j.push_back(r.to_json());
    return j;
  }
};

struct TeacherPair {
  Model t1;
  Model t2;
};

struct SslOutcome {
  // One state for two-model methods; two (one per seed) for self_training.
  std::vector<SslState> runs;
  TeacherPair teachers;
};

struct Selection {
  std::size_t pool_index = 0;
  std::size_t label = 0;
  double confidence = 0.0;
};

// Largest count allowed by the per-iteration cap ceil(ratio * pool).
inline std::size_t selection_cap(double ratio, std::size_t pool) {
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(pool) - 1e-9));
}

// Argmax predictions and their probabilities, per model, over a pool.
struct PoolPredictions {
  std::vector<std::vector<std::size_t>> labels;  // [model][instance]
  std::vector<std::vector<double>> confidence;   // [model][instance]
};

inline PoolPredictions predict_pool(std::span<const Model> models, std::span<const Instance> pool,
                                    const FeatureCache& cache) {
  PoolPredictions out;
  for (const auto& m : models) {
    auto& lab = out.labels.emplace_back();
    auto& conf = out.confidence.emplace_back();
    lab.reserve(pool.size());
    conf.reserve(pool.size());
    for (const auto& inst : pool) {
      const ProbDist p = predict_proba(m, cache.at(inst.id));
      const std::size_t k = argmax(p);
      lab.push_back(k);
      conf.push_back(p[k]);
    }
  }
  return out;
}

inline double agreement_rate(const PoolPredictions& preds) {
  if (preds.labels.size() < 2 || preds.labels[0].empty()) return 1.0;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < preds.labels[0].size(); ++i) agree += preds.labels[0][i] == preds.labels[1][i];
  return static_cast<double>(agree) / static_cast<double>(preds.labels[0].size());
}

// One model: rank everything by max probability. Two models: keep only
// instances whose argmaxes agree and rank by the mean of the two max
// probabilities. Ties go to the smaller id; nothing below the floor is taken.
inline std::vector<Selection> select_from_predictions(const PoolPredictions& preds,
                                                      std::span<const Instance> pool, double ratio,
                                                      double confidence_floor) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw InvalidArgument("selection ratio must lie in (0, 1]");
  if (preds.labels.empty() || preds.labels.size() > 2) throw InvalidArgument("selection needs one or two models");
  std::vector<Selection> candidates;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    Selection s{i, preds.labels[0][i], preds.confidence[0][i]};
    if (preds.labels.size() == 2) {
      if (preds.labels[1][i] != s.label) continue;
      s.confidence = 0.5 * (preds.confidence[0][i] + preds.confidence[1][i]);
    }
    if (s.confidence < confidence_floor) continue;
    candidates.push_back(s);
  }
  std::sort(candidates.begin(), candidates.end(), [&](const Selection& a, const Selection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return pool[a.pool_index].id < pool[b.pool_index].id;
  });
  candidates.resize(std::min(candidates.size(), selection_cap(ratio, pool.size())));
  return candidates;
}

inline std::vector<Selection> select_batch(std::span<const Model> models, std::span<const Instance> pool,
                                           const FeatureCache& cache, double ratio, double confidence_floor) {
  return select_from_predictions(predict_pool(models, pool, cache), pool, ratio, confidence_floor);
}

inline std::vector<TrainSample> hard_samples(const std::vector<LabeledEntry>& pool, const FeatureCache& cache) {
  std::vector<TrainSample> out;
  out.reserve(pool.size());
  for (const auto& e : pool) out.push_back({cache.at(e.instance.id), e.label, {}});
  return out;
}

// Fresh model from `seed`, trained with hard labels only.
inline Model train_supervised(const std::vector<TrainSample>& samples, std::size_t num_classes,
                              const ModelConfig& mc, std::uint64_t seed) {
  Model m = init_model(mc.arch, mc.dim, num_classes, seed, mc.hidden);
  return train(std::move(m), samples, mc.optimizer(seed), ObjectiveConfig{0.0, 1.0, {}}).model;
}

namespace detail {

// One end-to-end loop with one or two models.
inline SslState run_loop(const DataSplit& split, const FeatureCache& cache, const LabelSet& labels,
                         const SslConfig& cfg, const ModelConfig& mc, std::vector<std::uint64_t> seeds,
                         bool use_oracle) {
  SslState st;
  for (const auto& inst : split.labeled) {
    if (!inst.relation) throw InvalidArgument("labeled instance '" + inst.id + "' has no relation");
    st.labeled_pool.push_back({inst, *inst.relation});
  }
  if (st.labeled_pool.empty()) throw InvalidArgument("run_ssl: labeled pool is empty");
  st.unlabeled_pool = split.unlabeled;
  const EvalSet dev = cache.eval_set(split.dev);

  auto train_all = [&] {
    const auto samples = hard_samples(st.labeled_pool, cache);
    st.models.clear();
    for (auto s : seeds) st.models.push_back(train_supervised(samples, labels.size(), mc, s));
  };

  bool models_current = false;
  for (int t = 0; t < cfg.iterations; ++t) {
    train_all();
    IterationRecord rec;
    rec.iteration = t;
    rec.pool_start = st.unlabeled_pool.size();
    if (!dev.features.empty()) rec.dev = evaluate(st.models.front(), dev, labels);
    std::vector<Selection> chosen;
    if (!st.unlabeled_pool.empty()) {
      const auto preds = predict_pool(st.models, st.unlabeled_pool, cache);
      rec.agreement_rate = agreement_rate(preds);
      chosen = select_from_predictions(preds, st.unlabeled_pool, cfg.selection_ratio, cfg.confidence_floor);
    }
    rec.selected = chosen.size();
    st.history.push_back(rec);
    if (chosen.empty()) {
      // Retraining on an unchanged pool reproduces the same models and the
      // same empty selection, so later iterations cannot add anything.
      st.stop_reason = "no instance selected at iteration " + std::to_string(t);
      models_current = true;
      break;
    }
    std::vector<char> taken(st.unlabeled_pool.size(), 0);
    for (const auto& s : chosen) {
      const Instance& inst = st.unlabeled_pool[s.pool_index];
      std::size_t label = s.label;
      if (use_oracle) {
        const auto gold = split.oracle_labels.oracle(inst.id);
        if (!gold) throw InvalidArgument("no oracle label for '" + inst.id + "'");
        label = *gold;
      }
      st.labeled_pool.push_back({inst, label});
      taken[s.pool_index] = 1;
    }
    std::vector<Instance> rest;
    rest.reserve(st.unlabeled_pool.size() - chosen.size());
    for (std::size_t i = 0; i < st.unlabeled_pool.size(); ++i) {
      if (!taken[i]) rest.push_back(std::move(st.unlabeled_pool[i]));
    }
    st.unlabeled_pool = std::move(rest);
  }
  if (!models_current) train_all();
  return st;
}

}  // namespace detail

inline SslOutcome run_ssl(const DataSplit& split, const FeatureCache& cache, const LabelSet& labels,
                          const SslConfig& cfg, const ModelConfig& mc) {
  if (cfg.iterations < 0) throw InvalidArgument("run_ssl: iterations must be non-negative");
  SslOutcome out;
  if (cfg.method == SslMethod::self_training) {
    out.runs.push_back(detail::run_loop(split, cache, labels, cfg, mc, {cfg.seeds.first}, false));
    out.runs.push_back(detail::run_loop(split, cache, labels, cfg, mc, {cfg.seeds.second}, false));
    out.teachers = {out.runs[0].models.front(), out.runs[1].models.front()};
  } else {
    const bool oracle = cfg.method == SslMethod::gold_oracle;
    out.runs.push_back(detail::run_loop(split, cache, labels, cfg, mc, {cfg.seeds.first, cfg.seeds.second}, oracle));
    out.teachers = {out.runs[0].models[0], out.runs[0].models[1]};
  }
  return out;
}

}  // namespace mtd
