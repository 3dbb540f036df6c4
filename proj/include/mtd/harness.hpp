#pragma once

// Ablation variants, multi-seed reports and the comparison table.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "json.hpp"
#include "mtd/distill.hpp"
#include "mtd/eval.hpp"
#include "mtd/ssl.hpp"

namespace mtd {

enum class Variant {
  self_training,
  self_training_i,
  intersection_t,
  intersection_s,
  distillation_o,
  mtd,
  gold_upper_bound
};

inline constexpr Variant kAllVariants[] = {Variant::self_training,  Variant::self_training_i, Variant::intersection_t,
                                           Variant::intersection_s, Variant::distillation_o,  Variant::mtd,
                                           Variant::gold_upper_bound};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::self_training: return "self_training";
    case Variant::self_training_i: return "self_training_i";
    case Variant::intersection_t: return "intersection_t";
    case Variant::intersection_s: return "intersection_s";
    case Variant::distillation_o: return "distillation_o";
    case Variant::mtd: return "mtd";
    case Variant::gold_upper_bound: return "gold_upper_bound";
  }
  return "?";
}

inline std::string variant_names() {
  std::string s;
  for (auto v : kAllVariants) {
    if (!s.empty()) s += ", ";
    s += to_string(v);
  }
  return s;
}

inline std::optional<Variant> find_variant(std::string_view s) {
  for (auto v : kAllVariants) {
    if (s == to_string(v)) return v;
  }
  return std::nullopt;
}

inline Variant parse_variant(std::string_view s) {
  if (auto v = find_variant(s)) return *v;
  throw InvalidArgument("unknown variant '" + std::string(s) + "' (valid: " + variant_names() + ")");
}

// Everything a variant needs besides the seed.
struct HarnessSettings {
  ModelConfig model;
  SslConfig ssl;  // method is the base method for teacher-based variants; seeds are replaced per run
  double lambda = 0.4;
  double temperature = 2.4;
  LossOptions loss;
  bool include_difference = true;
  TeacherChoice single_teacher = TeacherChoice::first;  // distillation_o
  bool student_from_teacher = false;                    // initialize students from teacher 1
  bool gold_with_mtd = false;                           // gold_upper_bound: distill on top of oracle teachers
  bool keep_artifacts = false;                          // keep final models and their training samples
};

// Prepared corpus shared read-only by every job.
struct Workspace {
  LabelSet labels;
  DataSplit split;
  FeatureCache cache;
  EvalSet test;
};

inline Workspace make_workspace(LabelSet labels, DataSplit split, std::size_t dim, std::uint64_t hash_seed) {
  Workspace ws{std::move(labels), std::move(split), {}, {}};
  ws.cache = FeatureCache(ws.split, dim, hash_seed);
  ws.test = ws.cache.eval_set(ws.split.test);
  return ws;
}

// Seeds of one run, all derived from the run seed.
struct RunSeeds {
  std::uint64_t run = 0;
  std::uint64_t teacher1 = 0;
  std::uint64_t teacher2 = 0;
  std::uint64_t student = 0;

  static RunSeeds from(std::uint64_t run) {
    return {run, derive_seed(run, 1), derive_seed(run, 2), derive_seed(run, 3)};
  }
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::optional<Scores> test;  // empty when the run failed
  std::optional<std::string> error;
  nlohmann::json history = nlohmann::json::array();  // one array of iteration records per SSL run
  nlohmann::json extra = nlohmann::json::object();
  // Filled only with HarnessSettings::keep_artifacts.
  std::shared_ptr<const Model> model;
  std::shared_ptr<const std::vector<TrainSample>> train_samples;
  ObjectiveConfig objective;
};

struct Stat {
  double mean = 0.0;
  double stdev = 0.0;  // sample standard deviation (n - 1); 0 for a single value
};

inline Stat mean_std(std::span<const double> xs) {
  Stat s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stdev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

struct RunReport {
  Variant variant = Variant::mtd;
  std::vector<SeedResult> per_seed;
  Stat precision, recall, f1;

  std::vector<double> f1_values() const {
    std::vector<double> v;
    for (const auto& r : per_seed) {
      if (r.test) v.push_back(r.test->f1);
    }
    return v;
  }

  void finalize() {
    std::vector<double> p, r, f;
    for (const auto& s : per_seed) {
      if (!s.test) continue;
      p.push_back(s.test->precision);
      r.push_back(s.test->recall);
      f.push_back(s.test->f1);
    }
    precision = mean_std(p);
    recall = mean_std(r);
    f1 = mean_std(f);
  }

  nlohmann::json to_json() const {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& s : per_seed) {
      nlohmann::json j{{"seed", s.seed}, {"history", s.history}, {"extra", s.extra}};
      j["test"] = s.test ? s.test->to_json() : nlohmann::json(nullptr);
      if (s.error) j["error"] = *s.error;
      seeds.push_back(std::move(j));
    }
    auto stat = [](const Stat& s) { return nlohmann::json{{"mean", s.mean}, {"std", s.stdev}}; };
    return {{"variant", std::string(to_string(variant))},
            {"seeds", seeds},
            {"precision", stat(precision)},
            {"recall", stat(recall)},
            {"f1", stat(f1)}};
  }
};

// Per-seed cache of SSL outcomes, so variants sharing a base method reuse it.
class SslCache {
 public:
  const SslOutcome& get(const Workspace& ws, const HarnessSettings& hs, SslMethod method, const RunSeeds& seeds) {
    const Key key{method, seeds.run};
    {
      std::lock_guard lock(mu_);
      if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    }
    SslConfig cfg = hs.ssl;
    cfg.method = method;
    cfg.seeds = {seeds.teacher1, seeds.teacher2};
    SslOutcome outcome = run_ssl(ws.split, ws.cache, ws.labels, cfg, hs.model);
    std::lock_guard lock(mu_);
    return entries_.try_emplace(key, std::move(outcome)).first->second;
  }

 private:
  using Key = std::pair<SslMethod, std::uint64_t>;
  std::mutex mu_;
  std::map<Key, SslOutcome> entries_;
};

inline nlohmann::json histories_json(const SslOutcome& o) {
  nlohmann::json h = nlohmann::json::array();
  for (const auto& run : o.runs) h.push_back(run.history_json());
  return h;
}

// Teaching data from the base method's teachers over the whole unlabeled set.
inline TeachingData teaching_data_for(const Workspace& ws, const TeacherPair& teachers, bool include_difference,
                                      nlohmann::json* extra = nullptr) {
  const Partition part = partition_predictions(teachers, ws.split.unlabeled, ws.cache);
  if (extra) {
    (*extra)["intersection"] = part.intersection.size();
    (*extra)["difference"] = part.difference.size();
  }
  return build_teaching_data(ws.split.labeled, part, teachers, ws.cache, include_difference);
}

inline StudentConfig student_config(const HarnessSettings& hs, const RunSeeds& seeds, const TeacherPair& teachers,
                                    double lambda, TeacherChoice choice) {
  StudentConfig sc;
  sc.lambda = lambda;
  sc.temperature = hs.temperature;
  sc.loss = hs.loss;
  sc.teachers = choice;
  sc.seed = seeds.student;
  if (hs.student_from_teacher) sc.init_from = teachers.t1;
  return sc;
}

// Trains and scores one variant for one run seed. Throws on failure.
inline SeedResult run_variant_seed(Variant variant, const Workspace& ws, const HarnessSettings& hs,
                                   std::uint64_t run_seed, SslCache& ssl_cache) {
  const RunSeeds seeds = RunSeeds::from(run_seed);
  const std::size_t R = ws.labels.size();
  SeedResult res;
  res.seed = run_seed;
  auto finish = [&](const Model& m, std::vector<TrainSample> samples, ObjectiveConfig obj) {
    res.test = evaluate(m, ws.test, ws.labels);
    if (hs.keep_artifacts) {
      res.model = std::make_shared<const Model>(m);
      res.train_samples = std::make_shared<const std::vector<TrainSample>>(std::move(samples));
      res.objective = obj;
    }
    return res;
  };
  const ObjectiveConfig hard_only{0.0, 1.0, {}};
  auto keep = [&](auto&& make) { return hs.keep_artifacts ? make() : std::vector<TrainSample>{}; };

  switch (variant) {
    case Variant::self_training: {
      const auto& o = ssl_cache.get(ws, hs, SslMethod::self_training, seeds);
      res.history = histories_json(o);
      return finish(o.teachers.t1, keep([&] { return hard_samples(o.runs.front().labeled_pool, ws.cache); }),
                    hard_only);
    }
    case Variant::self_training_i: {
      const auto& o = ssl_cache.get(ws, hs, SslMethod::self_training_i, seeds);
      res.history = histories_json(o);
      return finish(o.teachers.t1, keep([&] { return hard_samples(o.runs.front().labeled_pool, ws.cache); }),
                    hard_only);
    }
    case Variant::gold_upper_bound: {
      const auto& o = ssl_cache.get(ws, hs, SslMethod::gold_oracle, seeds);
      res.history = histories_json(o);
      if (hs.gold_with_mtd) {
        const auto td = teaching_data_for(ws, o.teachers, hs.include_difference, &res.extra);
        const auto sc = student_config(hs, seeds, o.teachers, hs.lambda, TeacherChoice::both);
        return finish(train_student(td, hs.model, R, sc).model,
                      keep([&] { return student_samples(td, sc.lambda, sc.teachers); }),
                      ObjectiveConfig{sc.lambda, sc.temperature, sc.loss});
      }
      auto samples = hard_samples(o.runs.front().labeled_pool, ws.cache);
      const Model m = train_supervised(samples, R, hs.model, seeds.student);
      return finish(m, keep([&] { return std::move(samples); }), hard_only);
    }
    default: break;
  }

  const auto& base = ssl_cache.get(ws, hs, hs.ssl.method, seeds);
  res.history = histories_json(base);
  const auto td = teaching_data_for(ws, base.teachers, hs.include_difference, &res.extra);
  switch (variant) {
    case Variant::intersection_t: {
      // Teacher 1 continues training on the hard-labeled teaching data.
      auto samples = student_samples(td, 0.0, TeacherChoice::both);
      auto r = train(base.teachers.t1, samples, hs.model.optimizer(seeds.teacher1), hard_only);
      return finish(r.model, keep([&] { return std::move(samples); }), hard_only);
    }
    case Variant::intersection_s: {
      auto sc = student_config(hs, seeds, base.teachers, 0.0, TeacherChoice::both);
      return finish(train_student(td, hs.model, R, sc).model,
                    keep([&] { return student_samples(td, sc.lambda, sc.teachers); }), hard_only);
    }
    case Variant::distillation_o:
    case Variant::mtd: {
      const auto choice = variant == Variant::mtd ? TeacherChoice::both : hs.single_teacher;
      const auto sc = student_config(hs, seeds, base.teachers, hs.lambda, choice);
      auto r = train_student(td, hs.model, R, sc);
      res.extra["epoch_losses"] = r.epoch_losses;
      return finish(r.model, keep([&] { return student_samples(td, sc.lambda, sc.teachers); }),
                    ObjectiveConfig{sc.lambda, sc.temperature, sc.loss});
    }
    default: break;
  }
  throw InvalidArgument("unhandled variant");
}

// Runs every (variant, seed) job on a bounded worker pool. Per-seed failures
// are recorded and do not stop the other jobs. Reports come back in the
// order of `variants`, seeds in the order given.
inline std::vector<RunReport> run_variants(std::span<const Variant> variants, const Workspace& ws,
                                           const HarnessSettings& hs, std::span<const std::uint64_t> seeds,
                                           std::size_t workers = 1) {
  SslCache cache;
  std::vector<RunReport> reports(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    reports[v].variant = variants[v];
    reports[v].per_seed.resize(seeds.size());
  }
  // Seed-major job order lets concurrent workers share SSL outcomes early.
  const std::size_t jobs = variants.size() * seeds.size();
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs; j = next++) {
      const std::size_t s = j / variants.size();
      const std::size_t v = j % variants.size();
      SeedResult r;
      try {
        r = run_variant_seed(variants[v], ws, hs, seeds[s], cache);
      } catch (const std::exception& e) {
        r.seed = seeds[s];
        r.error = e.what();
      }
      reports[v].per_seed[s] = std::move(r);
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, jobs));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  for (auto& r : reports) r.finalize();
  return reports;
}

inline RunReport run_variant(Variant variant, const Workspace& ws, const HarnessSettings& hs,
                             std::span<const std::uint64_t> seeds, std::size_t workers = 1) {
  const Variant v[] = {variant};
  return run_variants(v, ws, hs, seeds, workers).front();
}

// Two-sided Welch t-test p-value; nullopt when either side has fewer than two values.
inline std::optional<double> welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) return std::nullopt;
  const Stat sa = mean_std(a), sb = mean_std(b);
  const double va = sa.stdev * sa.stdev / static_cast<double>(a.size());
  const double vb = sb.stdev * sb.stdev / static_cast<double>(b.size());
  if (va + vb == 0.0) return sa.mean == sb.mean ? 1.0 : 0.0;
  const double t = (sa.mean - sb.mean) / std::sqrt(va + vb);
  const double df = (va + vb) * (va + vb) /
                    (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

struct ComparisonRow {
  Variant variant;
  std::size_t runs = 0;
  Stat precision, recall, f1;
  std::optional<double> delta_f1;  // mean F1 minus the mtd row's mean F1
  bool drop = false;               // delta < 0
  std::optional<double> p_value;   // against the mtd row
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;

  nlohmann::json to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json j{{"variant", std::string(to_string(r.variant))},
                       {"runs", r.runs},
                       {"precision_mean", r.precision.mean}, {"precision_std", r.precision.stdev},
                       {"recall_mean", r.recall.mean},       {"recall_std", r.recall.stdev},
                       {"f1_mean", r.f1.mean},               {"f1_std", r.f1.stdev},
                       {"drop", r.drop}};
      j["delta_f1_vs_mtd"] = r.delta_f1 ? nlohmann::json(*r.delta_f1) : nlohmann::json(nullptr);
      j["p_value_vs_mtd"] = r.p_value ? nlohmann::json(*r.p_value) : nlohmann::json(nullptr);
      out.push_back(std::move(j));
    }
    return out;
  }

  void write_csv(std::ostream& out) const {
    out.precision(10);
    out << "variant,runs,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std,delta_f1_vs_mtd,drop,"
           "p_value_vs_mtd\n";
    for (const auto& r : rows) {
      out << to_string(r.variant) << ',' << r.runs << ',' << r.precision.mean << ',' << r.precision.stdev << ','
          << r.recall.mean << ',' << r.recall.stdev << ',' << r.f1.mean << ',' << r.f1.stdev << ',';
      if (r.delta_f1) out << *r.delta_f1;
      out << ',' << (r.drop ? "true" : "false") << ',';
      if (r.p_value) out << *r.p_value;
      out << '\n';
    }
  }
};

// Rows sorted by mean F1 (descending, ties by variant name). Deltas and
// p-values are relative to the mtd row; without one, a single report is
// its own reference.
inline ComparisonTable summarize(std::span<const RunReport> reports) {
  if (reports.empty()) throw InvalidArgument("summarize: no reports");
  const RunReport* ref = nullptr;
  for (const auto& r : reports) {
    if (r.variant == Variant::mtd) ref = &r;
  }
  if (!ref && reports.size() == 1) ref = &reports.front();

  ComparisonTable t;
  for (const auto& r : reports) {
    ComparisonRow row{r.variant, r.f1_values().size(), r.precision, r.recall, r.f1, {}, false, {}};
    if (ref) {
      row.delta_f1 = r.f1.mean - ref->f1.mean;
      row.drop = *row.delta_f1 < 0.0;
      if (&r != ref) row.p_value = welch_t_test(r.f1_values(), ref->f1_values());
    }
    t.rows.push_back(row);
  }
  std::stable_sort(t.rows.begin(), t.rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    if (a.f1.mean != b.f1.mean) return a.f1.mean > b.f1.mean;
    return to_string(a.variant) < to_string(b.variant);
  });
  return t;
}

}  // namespace mtd
