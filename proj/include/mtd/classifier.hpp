#pragma once

// Teacher/student model family: a linear softmax classifier over hashed
// features, or the same with one tanh hidden layer. Trained by plain
// mini-batch SGD against the combined objective from prob.hpp.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mtd/error.hpp"
#include "mtd/featurizer.hpp"
#include "mtd/prob.hpp"
#include "mtd/random.hpp"

namespace mtd {

enum class Arch { linear, mlp1 };

inline constexpr std::size_t kDefaultHidden = 64;
inline constexpr double kInitRange = 0.01;
// mlp1 starts away from the all-small saddle: a sparse unit-norm input sees
// ~kMlpInputInitRange-sized pre-activations, and the output layer is scaled
// by 1/sqrt(hidden).
inline constexpr double kMlpInputInitRange = 0.1;

inline std::string_view to_string(Arch a) { return a == Arch::linear ? "linear" : "mlp1"; }

inline Arch parse_arch(std::string_view s) {
  if (s == "linear") return Arch::linear;
  if (s == "mlp1") return Arch::mlp1;
  throw InvalidArgument("unknown arch '" + std::string(s) + "' (expected linear or mlp1)");
}

// Rectangular slice of the flat parameter vector. Each row is one "filter"
// for direction normalization purposes.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
};

// All parameters live in one flat vector. Layout:
//   linear: out_w (classes x dim), out_b (classes)
//   mlp1:   in_w (hidden x dim), in_b (hidden), out_w (classes x hidden), out_b (classes)
struct Model {
  Arch arch = Arch::linear;
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::size_t hidden = 0;  // 0 for linear
  std::uint64_t seed = 0;
  std::vector<double> params;

  std::size_t in_w_offset() const noexcept { return 0; }
  std::size_t in_b_offset() const noexcept { return hidden * dim; }
  std::size_t out_w_offset() const noexcept {
    return arch == Arch::linear ? 0 : hidden * dim + hidden;
  }
  std::size_t out_in() const noexcept { return arch == Arch::linear ? dim : hidden; }
  std::size_t out_b_offset() const noexcept { return out_w_offset() + num_classes * out_in(); }

  static std::size_t param_count(Arch arch, std::size_t dim, std::size_t classes, std::size_t hidden) {
    return arch == Arch::linear ? classes * dim + classes
                                : hidden * dim + hidden + classes * hidden + classes;
  }

  std::vector<ParamBlock> blocks() const {
    std::vector<ParamBlock> out;
    if (arch == Arch::mlp1) {
      out.push_back({"in_w", in_w_offset(), hidden, dim});
      out.push_back({"in_b", in_b_offset(), 1, hidden});
    }
    out.push_back({"out_w", out_w_offset(), num_classes, out_in()});
    out.push_back({"out_b", out_b_offset(), 1, num_classes});
    return out;
  }

  bool shares_shape_with(const Model& o) const noexcept {
    return arch == o.arch && dim == o.dim && num_classes == o.num_classes && hidden == o.hidden;
  }

  bool operator==(const Model&) const = default;
};

inline Model init_model(Arch arch, std::size_t dim, std::size_t num_classes, std::uint64_t seed,
                        std::size_t hidden = kDefaultHidden) {
  if (num_classes < 2) throw InvalidArgument("init_model: need at least two classes");
  if (dim == 0) throw InvalidArgument("init_model: dim must be positive");
  if (arch == Arch::mlp1 && hidden == 0) throw InvalidArgument("init_model: hidden size must be positive");
  Model m;
  m.arch = arch;
  m.dim = dim;
  m.num_classes = num_classes;
  m.hidden = arch == Arch::mlp1 ? hidden : 0;
  m.seed = seed;
  m.params.assign(Model::param_count(arch, dim, num_classes, m.hidden), 0.0);

  Rng rng(derive_seed(seed, 0x1417));
  auto fill = [&](std::size_t offset, std::size_t count, double range) {
    for (std::size_t i = 0; i < count; ++i) m.params[offset + i] = rng.uniform(-range, range);
  };
  if (arch == Arch::mlp1) {
    fill(m.in_w_offset(), m.hidden * dim, kMlpInputInitRange);
    fill(m.out_w_offset(), num_classes * m.hidden, 1.0 / std::sqrt(static_cast<double>(m.hidden)));
  } else {
    fill(m.out_w_offset(), num_classes * dim, kInitRange);
  }
  return m;
}

namespace detail {

inline void check_features(const Model& m, const FeatureVector& x) {
  if (x.dim != m.dim) {
    throw InvalidArgument("feature dim " + std::to_string(x.dim) + " does not match model dim " +
                          std::to_string(m.dim));
  }
}

// Hidden activations (mlp1 only) and logits.
struct ForwardPass {
  std::vector<double> hidden;
  Logits logits;
};

inline ForwardPass forward_pass(const Model& m, const FeatureVector& x) {
  check_features(m, x);
  ForwardPass fp;
  const double* p = m.params.data();
  if (m.arch == Arch::mlp1) {
    fp.hidden.resize(m.hidden);
    for (std::size_t h = 0; h < m.hidden; ++h) {
      const double* row = p + m.in_w_offset() + h * m.dim;
      double s = p[m.in_b_offset() + h];
      for (std::size_t k = 0; k < x.nnz(); ++k) s += row[x.indices[k]] * x.values[k];
      fp.hidden[h] = std::tanh(s);
    }
  }
  fp.logits.values.resize(m.num_classes);
  for (std::size_t r = 0; r < m.num_classes; ++r) {
    const double* row = p + m.out_w_offset() + r * m.out_in();
    double s = p[m.out_b_offset() + r];
    if (m.arch == Arch::linear) {
      for (std::size_t k = 0; k < x.nnz(); ++k) s += row[x.indices[k]] * x.values[k];
    } else {
      for (std::size_t h = 0; h < m.hidden; ++h) s += row[h] * fp.hidden[h];
    }
    fp.logits.values[r] = s;
  }
  return fp;
}

// Backpropagated signal for the hidden pre-activations (mlp1 only). Reads the
// output weights, so it must be taken before any update in the same step.
inline std::vector<double> hidden_delta(const Model& m, const ForwardPass& fp,
                                        std::span<const double> dz) {
  std::vector<double> dpre;
  if (m.arch != Arch::mlp1) return dpre;
  dpre.resize(m.hidden);
  const double* p = m.params.data();
  for (std::size_t h = 0; h < m.hidden; ++h) {
    double da = 0.0;
    for (std::size_t r = 0; r < m.num_classes; ++r) da += p[m.out_w_offset() + r * m.hidden + h] * dz[r];
    dpre[h] = da * (1.0 - fp.hidden[h] * fp.hidden[h]);
  }
  return dpre;
}

// target += scale * d(loss)/d(params) for one sample, given dL/dz and the
// hidden delta; bias entries get an extra bias_scale. Does not read the
// parameters.
inline void accumulate_sample_gradient(const Model& m, const FeatureVector& x, const ForwardPass& fp,
                                       std::span<const double> dz, std::span<const double> dpre,
                                       double scale, std::span<double> target, double bias_scale = 1.0) {
  double* t = target.data();
  for (std::size_t r = 0; r < m.num_classes; ++r) {
    const double g = scale * dz[r];
    if (g == 0.0) continue;
    t[m.out_b_offset() + r] += g * bias_scale;
    double* row = t + m.out_w_offset() + r * m.out_in();
    if (m.arch == Arch::linear) {
      for (std::size_t k = 0; k < x.nnz(); ++k) row[x.indices[k]] += g * x.values[k];
    } else {
      for (std::size_t h = 0; h < m.hidden; ++h) row[h] += g * fp.hidden[h];
    }
  }
  for (std::size_t h = 0; h < dpre.size(); ++h) {
    const double g = scale * dpre[h];
    if (g == 0.0) continue;
    t[m.in_b_offset() + h] += g * bias_scale;
    double* row = t + m.in_w_offset() + h * m.dim;
    for (std::size_t k = 0; k < x.nnz(); ++k) row[x.indices[k]] += g * x.values[k];
  }
}

}  // namespace detail

inline Logits forward(const Model& m, const FeatureVector& x) {
  return detail::forward_pass(m, x).logits;
}

inline ProbDist predict_proba(const Model& m, const FeatureVector& x) {
  return softmax(forward(m, x), 1.0);
}

inline std::size_t predict(const Model& m, const FeatureVector& x) { return argmax(forward(m, x)); }

// One training example. Samples without a hard label only feed the distillation term.
struct TrainSample {
  FeatureVector features;
  std::optional<std::size_t> hard_label;
  std::vector<Logits> teacher_logits;
};

// Inputs are unit-norm hashed vectors and gradients are batch means, so
// per-weight updates are tiny; small rates leave the linear model at its
// prior. mlp1 has dense hidden units and wants a far smaller step.
inline constexpr double kLinearLearningRate = 20.0;
inline constexpr double kMlpLearningRate = 2.0;

inline double default_learning_rate(Arch a) noexcept {
  return a == Arch::linear ? kLinearLearningRate : kMlpLearningRate;
}

struct OptimizerState {
  double learning_rate = kLinearLearningRate;
  std::size_t batch_size = 20;
  int epochs = 10;
  std::uint64_t shuffle_seed = 0;
};

struct ObjectiveConfig {
  double lambda = 0.0;
  double temperature = 2.4;
  LossOptions loss;
};

struct TrainResult {
  Model model;
  std::vector<double> epoch_losses;  // mean combined loss seen during each epoch
};

namespace detail {

inline void check_sample(const TrainSample& s, const ObjectiveConfig& obj) {
  if (!s.hard_label && s.teacher_logits.empty()) {
    throw InvalidArgument("train sample has neither a hard label nor teacher logits");
  }
  if (obj.lambda > 0.0 && s.teacher_logits.empty()) {
    throw InvalidArgument("lambda > 0 but a sample carries no teacher logits");
  }
}

inline std::span<const Logits> active_teachers(const TrainSample& s, const ObjectiveConfig& obj) {
  if (obj.lambda == 0.0) return {};
  return s.teacher_logits;
}

}  // namespace detail

inline LossBreakdown sample_loss(const Model& m, const TrainSample& s, const ObjectiveConfig& obj) {
  detail::check_sample(s, obj);
  return combined_loss(forward(m, s.features), s.hard_label, detail::active_teachers(s, obj),
                       obj.lambda, obj.temperature, obj.loss);
}

// Mean combined loss over samples at fixed parameters.
inline double evaluate_loss(const Model& m, std::span<const TrainSample> samples,
                            const ObjectiveConfig& obj) {
  if (samples.empty()) throw InvalidArgument("evaluate_loss: no samples");
  double total = 0.0;
  for (const auto& s : samples) total += sample_loss(m, s, obj).combined;
  return total / static_cast<double>(samples.size());
}

// Dense gradient of evaluate_loss with respect to the flat parameter vector.
inline std::vector<double> batch_gradient(const Model& m, std::span<const TrainSample> samples,
                                          const ObjectiveConfig& obj) {
  if (samples.empty()) throw InvalidArgument("batch_gradient: no samples");
  std::vector<double> grad(m.params.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    detail::check_sample(s, obj);
    const auto fp = detail::forward_pass(m, s.features);
    const auto dz = combined_loss_gradient(fp.logits, s.hard_label, detail::active_teachers(s, obj),
                                           obj.lambda, obj.temperature, obj.loss);
    detail::accumulate_sample_gradient(m, s.features, fp, dz, detail::hidden_delta(m, fp, dz), scale,
                                       grad);
  }
  return grad;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Mini-batch SGD. Each step averages the per-sample gradients of one shuffled
// batch, all evaluated at the parameters before the step. Sparse inputs rarely
// share a weight inside a batch, so a weight effectively moves at
// learning_rate / batch_size per sample; biases are shared by every sample and
// are stepped at that same per-sample rate instead of the full rate, which
// otherwise swings the class prior by whole logits per batch.
inline TrainResult train(Model model, std::span<const TrainSample> samples, const OptimizerState& opt,
                         const ObjectiveConfig& obj) {
  if (samples.empty()) throw InvalidArgument("train: no samples");
  if (!(opt.learning_rate > 0.0) || opt.batch_size == 0 || opt.epochs <= 0) {
    throw InvalidArgument("train: learning rate, batch size and epochs must be positive");
  }
  for (const auto& s : samples) {
    detail::check_sample(s, obj);
    detail::check_features(model, s.features);
  }

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(opt.shuffle_seed, 0x5eed));

  const double bias_scale = 1.0 / static_cast<double>(opt.batch_size);
  TrainResult result;
  std::vector<detail::ForwardPass> passes;
  std::vector<std::vector<double>> dzs;
  std::vector<std::vector<double>> dpres;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += opt.batch_size) {
      const std::size_t end = std::min(order.size(), begin + opt.batch_size);
      passes.clear();
      dzs.clear();
      dpres.clear();
      for (std::size_t i = begin; i < end; ++i) {
        const TrainSample& s = samples[order[i]];
        auto teachers = detail::active_teachers(s, obj);
        passes.push_back(detail::forward_pass(model, s.features));
        if (!all_finite(passes.back().logits.values)) throw TrainingDiverged(epoch);
        const auto loss = combined_loss(passes.back().logits, s.hard_label, teachers, obj.lambda,
                                        obj.temperature, obj.loss);
        if (!std::isfinite(loss.combined)) throw TrainingDiverged(epoch);
        epoch_loss += loss.combined;
        dzs.push_back(combined_loss_gradient(passes.back().logits, s.hard_label, teachers, obj.lambda,
                                             obj.temperature, obj.loss));
        dpres.push_back(detail::hidden_delta(model, passes.back(), dzs.back()));
      }
      const double scale = -opt.learning_rate / static_cast<double>(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        detail::accumulate_sample_gradient(model, samples[order[i]].features, passes[i - begin],
                                           dzs[i - begin], dpres[i - begin], scale, model.params, bias_scale);
      }
    }
    if (!all_finite(model.params)) throw TrainingDiverged(epoch);
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(samples.size()));
  }
  result.model = std::move(model);
  return result;
}

// ---- serialization ----------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json model_to_json(const Model& m) {
  return {{"format", "mtd-model"},
          {"version", kModelFormatVersion},
          {"arch", std::string(to_string(m.arch))},
          {"dim", m.dim},
          {"num_classes", m.num_classes},
          {"hidden", m.hidden},
          {"seed", m.seed},
          {"params", m.params}};
}

inline Model model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "mtd-model") throw SchemaError("not an mtd-model document");
  if (j.at("version").get<int>() != kModelFormatVersion) {
    throw SchemaError("unsupported model format version " + j.at("version").dump());
  }
  Model m;
  m.arch = parse_arch(j.at("arch").get<std::string>());
  m.dim = j.at("dim").get<std::size_t>();
  m.num_classes = j.at("num_classes").get<std::size_t>();
  m.hidden = j.at("hidden").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.params = j.at("params").get<std::vector<double>>();
  if (m.params.size() != Model::param_count(m.arch, m.dim, m.num_classes, m.hidden)) {
    throw SchemaError("parameter count does not match the declared shape");
  }
  return m;
}

}  // namespace mtd
