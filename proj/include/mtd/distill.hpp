#pragma once

// Multi-teacher distillation: split the teachers' predictions on the
// unlabeled pool into agreement (intersection) and disagreement (difference)
// sets, build the teaching data, and train a student on hard labels plus the
// teachers' temperature-softened distributions.

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mtd/classifier.hpp"
#include "mtd/datasets.hpp"
#include "mtd/ssl.hpp"

namespace mtd {

inline void validate_teachers(const TeacherPair& t) {
  if (!t.t1.shares_shape_with(t.t2)) throw InvalidArgument("teachers must share arch, dim and relation count");
}

struct Partition {
  std::vector<LabeledEntry> intersection;  // agreed label
  std::vector<Instance> difference;
};

inline Partition partition_predictions(const TeacherPair& teachers, std::span<const Instance> pool,
                                       const FeatureCache& cache) {
  validate_teachers(teachers);
  if (pool.empty()) throw InvalidArgument("partition_predictions: empty pool");
  Partition out;
  for (const auto& inst : pool) {
    const auto& x = cache.at(inst.id);
    const std::size_t a = predict(teachers.t1, x);
    const std::size_t b = predict(teachers.t2, x);
    if (a == b) {
      out.intersection.push_back({inst, a});
    } else {
      out.difference.push_back(inst);
    }
  }
  return out;
}

enum class Origin { labeled, intersection, difference };

inline std::string_view to_string(Origin o) {
  switch (o) {
    case Origin::labeled: return "L";
    case Origin::intersection: return "I";
    case Origin::difference: return "diff";
  }
  return "?";
}

// Training samples carry both teachers' logits (frozen at build time), in
// the order t1, t2.
struct TeachingData {
  std::vector<TrainSample> samples;
  std::vector<std::string> ids;
  std::vector<Origin> origins;

  std::size_t count(Origin o) const {
    std::size_t n = 0;
    for (auto x : origins) n += x == o;
    return n;
  }
};

inline TeachingData build_teaching_data(const std::vector<Instance>& labeled, const Partition& partition,
                                        const TeacherPair& teachers, const FeatureCache& cache,
                                        bool include_difference = true) {
  validate_teachers(teachers);
  TeachingData td;
  auto add = [&](const Instance& inst, std::optional<std::size_t> label, Origin origin) {
    const auto& x = cache.at(inst.id);
    td.samples.push_back({x, label, {forward(teachers.t1, x), forward(teachers.t2, x)}});
    td.ids.push_back(inst.id);
    td.origins.push_back(origin);
  };
  for (const auto& inst : labeled) {
    if (!inst.relation) throw InvalidArgument("labeled instance '" + inst.id + "' has no relation");
    add(inst, *inst.relation, Origin::labeled);
  }
  for (const auto& e : partition.intersection) add(e.instance, e.label, Origin::intersection);
  if (include_difference) {
    for (const auto& inst : partition.difference) add(inst, std::nullopt, Origin::difference);
  }
  return td;
}

enum class TeacherChoice { both, first, second };

struct StudentConfig {
  double lambda = 0.4;
  double temperature = 2.4;
  LossOptions loss;
  TeacherChoice teachers = TeacherChoice::both;
  std::uint64_t seed = 3;
  // Start from this model instead of a fresh initialization.
  std::optional<Model> init_from;
};

// Samples the student actually trains on: teacher logits restricted to the
// chosen teachers; with lambda == 0 the soft-only samples are dropped because
// they carry no signal.
inline std::vector<TrainSample> student_samples(const TeachingData& td, double lambda, TeacherChoice choice) {
  std::vector<TrainSample> out;
  out.reserve(td.samples.size());
  for (const auto& s : td.samples) {
    if (lambda == 0.0 && !s.hard_label) continue;
    TrainSample t{s.features, s.hard_label, {}};
    if (choice != TeacherChoice::second) t.teacher_logits.push_back(s.teacher_logits.at(0));
    if (choice != TeacherChoice::first) t.teacher_logits.push_back(s.teacher_logits.at(1));
    out.push_back(std::move(t));
  }
  return out;
}

inline Model student_init(const TeachingData& td, const ModelConfig& mc, std::size_t num_classes,
                          const StudentConfig& sc) {
  if (sc.init_from) return *sc.init_from;
  if (td.samples.empty()) throw InvalidArgument("train_student: empty teaching data");
  return init_model(mc.arch, mc.dim, num_classes, sc.seed, mc.hidden);
}

inline TrainResult train_student(const TeachingData& td, const ModelConfig& mc, std::size_t num_classes,
                                 const StudentConfig& sc) {
  if (!(sc.lambda >= 0.0 && sc.lambda <= 1.0)) throw InvalidArgument("train_student: lambda must lie in [0, 1]");
  if (!(sc.temperature > 0.0)) throw InvalidArgument("train_student: temperature must be positive");
  const auto samples = student_samples(td, sc.lambda, sc.teachers);
  if (samples.empty()) throw InvalidArgument("train_student: no usable samples");
  return train(student_init(td, mc, num_classes, sc), samples, mc.optimizer(sc.seed),
               ObjectiveConfig{sc.lambda, sc.temperature, sc.loss});
}

// Audit line per sample: id, origin, hard label, both teachers' softened distributions.
inline void write_teaching_audit(std::ostream& out, const TeachingData& td, const LabelSet& labels,
                                 double temperature) {
  for (std::size_t i = 0; i < td.samples.size(); ++i) {
    const auto& s = td.samples[i];
    nlohmann::json j{{"id", td.ids[i]}, {"origin", std::string(to_string(td.origins[i]))}};
    j["hard_label"] = s.hard_label ? nlohmann::json(labels.name(*s.hard_label)) : nlohmann::json(nullptr);
    j["t1_soft"] = softmax(s.teacher_logits.at(0), temperature).probs;
    j["t2_soft"] = softmax(s.teacher_logits.at(1), temperature).probs;
    out << j.dump() << '\n';
  }
}

// Self-contained training sample (hashed features, hard label, teacher
// logits), so a saved model's loss can be re-evaluated without the corpus.
inline nlohmann::json sample_to_json(const TrainSample& s) {
  nlohmann::json teachers = nlohmann::json::array();
  for (const auto& t : s.teacher_logits) teachers.push_back(t.values);
  return {{"dim", s.features.dim},
          {"indices", s.features.indices},
          {"values", s.features.values},
          {"hard_label", s.hard_label ? nlohmann::json(*s.hard_label) : nlohmann::json(nullptr)},
          {"teacher_logits", teachers}};
}

inline TrainSample sample_from_json(const nlohmann::json& j) {
  TrainSample s;
  try {
    s.features.dim = j.at("dim").get<std::size_t>();
    s.features.indices = j.at("indices").get<std::vector<std::uint32_t>>();
    s.features.values = j.at("values").get<std::vector<double>>();
    if (!j.at("hard_label").is_null()) s.hard_label = j.at("hard_label").get<std::size_t>();
    for (const auto& t : j.at("teacher_logits")) s.teacher_logits.push_back(Logits{t.get<std::vector<double>>()});
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad training sample: ") + e.what());
  }
  if (s.features.indices.size() != s.features.values.size()) throw SchemaError("bad training sample: length mismatch");
  for (auto i : s.features.indices) {
    if (i >= s.features.dim) throw SchemaError("bad training sample: feature index out of range");
  }
  return s;
}

inline void write_samples(std::ostream& out, std::span<const TrainSample> samples) {
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

inline std::vector<TrainSample> read_samples(std::istream& in) {
  std::vector<TrainSample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(n, e.what());
    } catch (const SchemaError& e) {
      throw ParseError(n, e.what());
    }
  }
  return out;
}

}  // namespace mtd
