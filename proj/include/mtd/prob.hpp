#pragma once

// Probability and loss kernels shared by teachers and students.
//
// Everything here is a pure function. Gradients are hand-derived for the
// softmax family; there is no autodiff.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtd/error.hpp"

namespace mtd {

// Floor applied to probabilities inside log terms.
inline constexpr double kProbClamp = 1e-12;

// Pre-softmax scores over the relation set.
struct Logits {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  bool operator==(const Logits&) const = default;
};

// Normalized distribution over the relation set.
struct ProbDist {
  std::vector<double> probs;

  std::size_t size() const noexcept { return probs.size(); }
  double operator[](std::size_t i) const { return probs[i]; }
  bool operator==(const ProbDist&) const = default;
};

struct LossBreakdown {
  double ground_truth_loss = 0.0;
  double distill_loss = 0.0;
  double combined = 0.0;
  double lambda = 0.0;
};

// Switches that are not part of the default objective.
struct LossOptions {
  // Multiply the distillation term (and its gradient) by tau^2.
  bool scale_distill_by_tau_squared = false;
};

// Index of the largest entry; the lowest index wins ties.
inline std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

inline std::size_t argmax(const Logits& z) { return argmax(z.values); }
inline std::size_t argmax(const ProbDist& p) { return argmax(p.probs); }

inline ProbDist softmax(std::span<const double> logits, double temperature = 1.0) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InvalidArgument("softmax: temperature must be a positive finite number");
  }
  if (logits.empty()) throw InvalidArgument("softmax: empty logits");
  for (double v : logits) {
    if (!std::isfinite(v)) throw InvalidArgument("softmax: non-finite logit");
  }
  double max_scaled = -std::numeric_limits<double>::infinity();
  for (double v : logits) max_scaled = std::max(max_scaled, v / temperature);

  ProbDist out;
  out.probs.resize(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out.probs[i] = std::exp(logits[i] / temperature - max_scaled);
    total += out.probs[i];
  }
  for (double& p : out.probs) p /= total;
  return out;
}

inline ProbDist softmax(const Logits& logits, double temperature = 1.0) {
  return softmax(std::span<const double>(logits.values), temperature);
}

// KL(p || q). Terms with p_i == 0 contribute nothing; q is floored at kProbClamp.
inline double kl_divergence(const ProbDist& p, const ProbDist& q) {
  if (p.size() != q.size()) {
    throw InvalidArgument("kl_divergence: length mismatch (" + std::to_string(p.size()) + " vs " +
                          std::to_string(q.size()) + ")");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    sum += p[i] * (std::log(p[i]) - std::log(std::max(q[i], kProbClamp)));
  }
  return std::max(sum, 0.0);
}

inline double cross_entropy(std::size_t gold, const ProbDist& pred) {
  if (gold >= pred.size()) {
    throw InvalidArgument("cross_entropy: gold label " + std::to_string(gold) +
                          " out of range for " + std::to_string(pred.size()) + " classes");
  }
  return -std::log(std::max(pred[gold], kProbClamp));
}

namespace detail {

inline void check_loss_args(const Logits& student, std::optional<std::size_t> gold,
                            std::span<const Logits> teachers, double lambda, double temperature) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw InvalidArgument("lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  if (lambda > 0.0 && teachers.empty()) {
    throw InvalidArgument("lambda > 0 requires at least one teacher");
  }
  if (student.size() < 2) throw InvalidArgument("at least two relation classes are required");
  if (gold && *gold >= student.size()) {
    throw InvalidArgument("gold label " + std::to_string(*gold) + " out of range");
  }
  for (const auto& t : teachers) {
    if (t.size() != student.size()) {
      throw InvalidArgument("teacher logits length differs from student logits length");
    }
  }
}

}  // namespace detail

// (1 - lambda) * CE(gold, softmax(z_s)) + lambda * sum_m KL(softmax(z_m / tau) || softmax(z_s / tau)).
// A missing gold label drops the cross-entropy term (soft-label-only samples).
inline LossBreakdown combined_loss(const Logits& student, std::optional<std::size_t> gold,
                                   std::span<const Logits> teachers, double lambda,
                                   double temperature, const LossOptions& options = {}) {
  detail::check_loss_args(student, gold, teachers, lambda, temperature);
  LossBreakdown out;
  out.lambda = lambda;
  if (gold) out.ground_truth_loss = cross_entropy(*gold, softmax(student, 1.0));
  if (lambda > 0.0) {
    const ProbDist student_soft = softmax(student, temperature);
    for (const auto& t : teachers) {
      out.distill_loss += kl_divergence(softmax(t, temperature), student_soft);
    }
    if (options.scale_distill_by_tau_squared) out.distill_loss *= temperature * temperature;
  }
  out.combined = (1.0 - lambda) * out.ground_truth_loss + lambda * out.distill_loss;
  return out;
}

// d(combined_loss)/d(student logits). Teachers are constants.
inline std::vector<double> combined_loss_gradient(const Logits& student,
                                                  std::optional<std::size_t> gold,
                                                  std::span<const Logits> teachers, double lambda,
                                                  double temperature,
                                                  const LossOptions& options = {}) {
  detail::check_loss_args(student, gold, teachers, lambda, temperature);
  std::vector<double> grad(student.size(), 0.0);
  if (gold && lambda < 1.0) {
    const ProbDist p = softmax(student, 1.0);
    const double w = 1.0 - lambda;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      grad[i] += w * (p[i] - (i == *gold ? 1.0 : 0.0));
    }
  }
  if (lambda > 0.0) {
    const ProbDist q = softmax(student, temperature);
    double w = lambda / temperature;
    if (options.scale_distill_by_tau_squared) w *= temperature * temperature;
    for (const auto& t : teachers) {
      const ProbDist p = softmax(t, temperature);
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += w * (q[i] - p[i]);
    }
  }
  return grad;
}

}  // namespace mtd
