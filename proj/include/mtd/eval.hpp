#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtd/classifier.hpp"
#include "mtd/datasets.hpp"
#include "mtd/error.hpp"

namespace mtd {

struct Scores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t gold_positives = 0;
  std::size_t predicted_positives = 0;
  std::size_t correct_positives = 0;

  bool operator==(const Scores&) const = default;

  nlohmann::json to_json() const {
    return {{"precision", precision},
            {"recall", recall},
            {"f1", f1},
            {"gold_positives", gold_positives},
            {"predicted_positives", predicted_positives},
            {"correct_positives", correct_positives}};
  }

  static Scores from_json(const nlohmann::json& j) {
    Scores s;
    s.precision = j.at("precision").get<double>();
    s.recall = j.at("recall").get<double>();
    s.f1 = j.at("f1").get<double>();
    s.gold_positives = j.at("gold_positives").get<std::size_t>();
    s.predicted_positives = j.at("predicted_positives").get<std::size_t>();
    s.correct_positives = j.at("correct_positives").get<std::size_t>();
    return s;
  }
};

// Micro-averaged P/R/F1. When `no_relation` is given, that label never counts
// as a positive; otherwise every label does (P = R = F1 = accuracy).
// Empty denominators yield 0.
inline Scores score(std::span<const std::size_t> gold, std::span<const std::size_t> pred,
                    std::size_t num_relations, std::optional<std::size_t> no_relation = {}) {
  if (gold.size() != pred.size()) {
    throw InvalidArgument("score: gold has " + std::to_string(gold.size()) + " labels but pred has " +
                          std::to_string(pred.size()));
  }
  Scores s;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= num_relations || pred[i] >= num_relations) throw InvalidArgument("score: label out of range");
    const bool gold_pos = gold[i] != no_relation;
    const bool pred_pos = pred[i] != no_relation;
    s.gold_positives += gold_pos;
    s.predicted_positives += pred_pos;
    s.correct_positives += gold_pos && pred_pos && gold[i] == pred[i];
  }
  const auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  s.precision = ratio(s.correct_positives, s.predicted_positives);
  s.recall = ratio(s.correct_positives, s.gold_positives);
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

inline Scores score(std::span<const std::size_t> gold, std::span<const std::size_t> pred,
                    const LabelSet& labels) {
  return score(gold, pred, labels.size(), labels.no_relation_index());
}

// Featurized evaluation set with gold labels.
struct EvalSet {
  std::vector<std::string> ids;
  std::vector<FeatureVector> features;
  std::vector<std::size_t> gold;
};

inline Scores evaluate(const Model& model, const EvalSet& data, const LabelSet& labels) {
  std::vector<std::size_t> pred;
  pred.reserve(data.features.size());
  for (const auto& x : data.features) pred.push_back(predict(model, x));
  return score(data.gold, pred, labels);
}

// One line of the per-instance prediction dump: id, gold, prediction and the
// three most probable labels.
inline nlohmann::json prediction_record(const std::string& id, std::size_t gold, const ProbDist& probs,
                                        const LabelSet& labels, std::size_t top_k = 3) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  nlohmann::json top = nlohmann::json::array();
  for (std::size_t k = 0; k < std::min(top_k, order.size()); ++k) {
    top.push_back({{"label", labels.name(order[k])}, {"prob", probs[order[k]]}});
  }
  return {{"id", id}, {"gold", labels.name(gold)}, {"pred", labels.name(order.front())}, {"top", top}};
}

inline std::vector<nlohmann::json> prediction_dump(const Model& model, const EvalSet& data,
                                                   const LabelSet& labels) {
  std::vector<nlohmann::json> out;
  out.reserve(data.features.size());
  for (std::size_t i = 0; i < data.features.size(); ++i) {
    out.push_back(prediction_record(data.ids[i], data.gold[i], predict_proba(model, data.features[i]), labels));
  }
  return out;
}

}  // namespace mtd
