#include <gtest/gtest.h>

#include <cmath>

#include "mtd/classifier.hpp"
#include "support.hpp"

using namespace mtd;

namespace {

constexpr std::size_t kDim = 1024;

FeatureVector sparse(std::vector<std::uint32_t> idx, std::vector<double> vals) {
  FeatureVector f{std::move(idx), std::move(vals), kDim};
  double n = 0.0;
  for (double v : f.values) n += v * v;
  for (double& v : f.values) v /= std::sqrt(n);
  return f;
}

FeatureVector random_features(Rng& rng, std::size_t nnz = 12) {
  std::vector<std::uint32_t> idx;
  for (std::size_t k = 0; k < nnz; ++k) idx.push_back(static_cast<std::uint32_t>(k * (kDim / nnz) + rng.below(kDim / nnz)));
  std::vector<double> vals(nnz);
  for (auto& v : vals) v = rng.uniform(-1.0, 1.0);
  return sparse(idx, vals);
}

// Two clusters: class c lights up its own block of eight indices plus shared noise.
std::vector<TrainSample> clusters(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<TrainSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % 2;
    std::vector<std::uint32_t> idx;
    std::vector<double> vals;
    for (std::uint32_t k = 0; k < 8; ++k) {
      idx.push_back(static_cast<std::uint32_t>(100 * c + k));
      vals.push_back(rng.uniform(0.5, 1.5));
    }
    for (std::uint32_t k = 0; k < 4; ++k) {
      idx.push_back(static_cast<std::uint32_t>(500 + 20 * k + rng.below(20)));
      vals.push_back(rng.uniform(-0.3, 0.3));
    }
    out.push_back({sparse(idx, vals), c, {}});
  }
  return out;
}

double accuracy(const Model& m, const std::vector<TrainSample>& data) {
  std::size_t ok = 0;
  for (const auto& s : data) ok += predict(m, s.features) == *s.hard_label;
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

const ObjectiveConfig kHard{0.0, 1.0, {}};

}  // namespace

TEST(InitModel, DeterministicSmallWeightsZeroBias) {
  for (Arch arch : {Arch::linear, Arch::mlp1}) {
    const Model a = init_model(arch, kDim, 5, 42, 16);
    const Model b = init_model(arch, kDim, 5, 42, 16);
    EXPECT_EQ(a.params, b.params);
    EXPECT_NE(a.params, init_model(arch, kDim, 5, 43, 16).params);
    EXPECT_EQ(a.params.size(), arch == Arch::linear ? 5 * kDim + 5 : 16 * kDim + 16 + 5 * 16 + 5);
    for (std::size_t r = 0; r < 5; ++r) EXPECT_EQ(a.params[a.out_b_offset() + r], 0.0);
    if (arch == Arch::mlp1) {
      for (std::size_t h = 0; h < 16; ++h) EXPECT_EQ(a.params[a.in_b_offset() + h], 0.0);
    }
    const double range = arch == Arch::linear ? kInitRange : std::max(kMlpInputInitRange, 0.25);
    for (double v : a.params) EXPECT_LE(std::abs(v), range);
  }
}

TEST(InitModel, RejectsBadShapes) {
  EXPECT_THROW(init_model(Arch::linear, kDim, 1, 0), InvalidArgument);
  EXPECT_THROW(init_model(Arch::linear, 0, 3, 0), InvalidArgument);
  EXPECT_THROW(init_model(Arch::mlp1, kDim, 3, 0, 0), InvalidArgument);
}

TEST(Forward, ZeroModelIsUniform) {
  Model m = init_model(Arch::linear, kDim, 4, 1);
  std::fill(m.params.begin(), m.params.end(), 0.0);
  Rng rng(1);
  const auto x = random_features(rng);
  for (double z : forward(m, x).values) EXPECT_EQ(z, 0.0);
  for (double p : predict_proba(m, x).probs) EXPECT_DOUBLE_EQ(p, 0.25);
  EXPECT_EQ(predict(m, x), 0u);
}

TEST(Forward, LinearLogitsScaleWithWeights) {
  Model m = init_model(Arch::linear, kDim, 3, 2);
  Rng rng(2);
  const auto x = random_features(rng);
  const auto z = forward(m, x);
  Model scaled = m;
  for (auto& v : scaled.params) v *= 3.0;
  const auto zs = forward(scaled, x);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(zs.values[r], 3.0 * z.values[r], 1e-15);
}

TEST(Forward, DimensionMismatchThrows) {
  const Model m = init_model(Arch::linear, kDim, 3, 2);
  FeatureVector x{{1}, {1.0}, 2048};
  EXPECT_THROW(forward(m, x), InvalidArgument);
}

TEST(Predict, IsArgmaxOfProbabilities) {
  Rng rng(3);
  for (int c = 0; c < 100; ++c) {
    Model m = init_model(c % 2 ? Arch::mlp1 : Arch::linear, kDim, 7, rng.next(), 8);
    for (auto& v : m.params) v = rng.uniform(-2.0, 2.0);
    const auto x = random_features(rng);
    const auto p = predict_proba(m, x);
    double total = 0.0;
    for (double v : p.probs) total += v;
    ASSERT_NEAR(total, 1.0, 1e-9);
    ASSERT_EQ(predict(m, x), argmax(p));
  }
}

TEST(Train, SeparableClustersReachPerfectAccuracy) {
  const auto data = clusters(5, 200);
  for (Arch arch : {Arch::linear, Arch::mlp1}) {
    const auto r = train(init_model(arch, kDim, 2, 9, 16), data, OptimizerState{default_learning_rate(arch), 20, 10, 4},
                         kHard);
    EXPECT_EQ(accuracy(r.model, data), 1.0) << to_string(arch);
    EXPECT_EQ(r.epoch_losses.size(), 10u);
  }
}

TEST(Train, CrossEntropyFallsOverFirstEpochs) {
  const auto data = clusters(6, 200);
  const Model start = init_model(Arch::linear, kDim, 2, 9);
  double prev = evaluate_loss(start, data, kHard);
  for (int e = 1; e <= 3; ++e) {
    const auto r = train(start, data, OptimizerState{kLinearLearningRate, 20, e, 4}, kHard);
    const double now = evaluate_loss(r.model, data, kHard);
    EXPECT_LT(now, prev) << "epoch " << e;
    prev = now;
  }
}

TEST(Train, Deterministic) {
  const auto data = clusters(7, 120);
  const OptimizerState opt{kMlpLearningRate, 20, 3, 11};
  const auto a = train(init_model(Arch::mlp1, kDim, 2, 1, 8), data, opt, kHard);
  const auto b = train(init_model(Arch::mlp1, kDim, 2, 1, 8), data, opt, kHard);
  EXPECT_EQ(a.model.params, b.model.params);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
}

TEST(Train, StudentAtTeacherDoesNotMove) {
  const auto data = clusters(8, 100);
  const Model teacher = train(init_model(Arch::linear, kDim, 2, 3), data, OptimizerState{}, kHard).model;
  std::vector<TrainSample> soft;
  for (const auto& s : data) soft.push_back({s.features, std::nullopt, {forward(teacher, s.features)}});
  const ObjectiveConfig obj{1.0, 2.4, {}};
  EXPECT_NEAR(evaluate_loss(teacher, soft, obj), 0.0, 1e-12);
  const auto r = train(teacher, soft, OptimizerState{kLinearLearningRate, 20, 2, 5}, obj);
  EXPECT_NEAR(r.epoch_losses.front(), 0.0, 1e-12);
  for (std::size_t i = 0; i < teacher.params.size(); ++i) ASSERT_NEAR(r.model.params[i], teacher.params[i], 1e-9);
}

TEST(Train, RejectsBadInput) {
  const auto data = clusters(9, 10);
  const Model m = init_model(Arch::linear, kDim, 2, 1);
  EXPECT_THROW(train(m, {}, OptimizerState{}, kHard), InvalidArgument);
  EXPECT_THROW(train(m, data, OptimizerState{0.0, 20, 1, 0}, kHard), InvalidArgument);
  EXPECT_THROW(train(m, data, OptimizerState{1.0, 0, 1, 0}, kHard), InvalidArgument);
  EXPECT_THROW(train(m, data, OptimizerState{1.0, 20, 1, 0}, ObjectiveConfig{0.5, 2.4, {}}), InvalidArgument);
  std::vector<TrainSample> empty_label{{data[0].features, std::nullopt, {}}};
  EXPECT_THROW(train(m, empty_label, OptimizerState{}, kHard), InvalidArgument);
}

TEST(Train, DivergenceReportsEpoch) {
  // Unnormalized huge inputs blow the logits up after the first step.
  std::vector<TrainSample> data;
  for (std::size_t i = 0; i < 10; ++i) data.push_back({FeatureVector{{3}, {1e200}, kDim}, i % 2, {}});
  try {
    train(init_model(Arch::linear, kDim, 2, 1), data, OptimizerState{kLinearLearningRate, 5, 3, 0}, kHard);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.epoch(), 0);
    EXPECT_LT(e.epoch(), 3);
  }
}

// The analytic batch gradient of the composed model against central differences.
TEST(BatchGradient, MatchesFiniteDifferences) {
  Rng rng(12);
  const std::size_t sizes[] = {2, 19, 42};
  for (int c = 0; c < 12; ++c) {
    const std::size_t R = sizes[c % 3];
    const Arch arch = c % 2 ? Arch::mlp1 : Arch::linear;
    Model m = init_model(arch, kDim, R, rng.next(), 6);
    for (auto& v : m.params) v = rng.uniform(-0.5, 0.5);
    std::vector<TrainSample> batch;
    for (int i = 0; i < 4; ++i) {
      TrainSample s{random_features(rng, 6), rng.below(R), {}};
      if (i == 3) s.hard_label.reset();
      s.teacher_logits = {mtd::testing::random_logits(rng, R), mtd::testing::random_logits(rng, R)};
      batch.push_back(s);
    }
    const ObjectiveConfig obj{rng.uniform(0.1, 0.9), rng.uniform(0.5, 4.0), {}};
    const auto g = batch_gradient(m, batch, obj);
    double diff = 0.0, norm = 0.0;
    for (int k = 0; k < 60; ++k) {
      std::size_t i;
      if (k < 40) {  // coordinates the batch actually touches
        const auto& x = batch[rng.below(batch.size())].features;
        const std::size_t col = x.indices[rng.below(x.nnz())];
        const std::size_t rows = arch == Arch::linear ? R : 6;
        const std::size_t off = arch == Arch::linear ? m.out_w_offset() : m.in_w_offset();
        i = off + rng.below(rows) * kDim + col;
      } else {
        i = arch == Arch::linear ? m.out_b_offset() + rng.below(R)
                                 : m.in_b_offset() + rng.below(m.params.size() - m.in_b_offset());
      }
      Model up = m, down = m;
      up.params[i] += 1e-5;
      down.params[i] -= 1e-5;
      const double fd = (evaluate_loss(up, batch, obj) - evaluate_loss(down, batch, obj)) / 2e-5;
      diff += (fd - g[i]) * (fd - g[i]);
      norm += fd * fd + g[i] * g[i];
    }
    ASSERT_LT(std::sqrt(diff / norm), 1e-3) << "case " << c;
  }
}

TEST(ModelJson, RoundTripIsBitExact) {
  Rng rng(13);
  for (Arch arch : {Arch::linear, Arch::mlp1}) {
    Model m = init_model(arch, kDim, 4, 77, 8);
    for (auto& v : m.params) v = rng.normal() * 1e-3 + 1.0 / 3.0;
    const Model back = model_from_json(nlohmann::json::parse(model_to_json(m).dump()));
    EXPECT_EQ(back, m);
  }
}

TEST(ModelJson, RejectsWrongFormat) {
  auto j = model_to_json(init_model(Arch::linear, kDim, 2, 1));
  j["version"] = 99;
  EXPECT_ANY_THROW(model_from_json(j));
  EXPECT_ANY_THROW(model_from_json(nlohmann::json::object()));
}
