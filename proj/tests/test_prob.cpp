#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtd/prob.hpp"
#include "support.hpp"

using namespace mtd;
using mtd::testing::random_dist;
using mtd::testing::random_logits;

namespace {

const double kLn2 = std::log(2.0);

std::vector<std::size_t> argsort(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] > v[b]; });
  return idx;
}

}  // namespace

TEST(Softmax, ZeroLogitsGiveUniform) {
  const auto p = softmax(Logits{{0.0, 0.0}}, 1.0);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, TemperatureTwoHalvesLogOdds) {
  const auto p = softmax(Logits{{std::log(4.0), 0.0}}, 2.0);
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-12);
}

TEST(Softmax, HugeTemperatureApproachesUniform) {
  const auto p = softmax(Logits{{5.0, 3.0, 1.0}}, 1e6);
  for (double v : p.probs) EXPECT_NEAR(v, 1.0 / 3.0, 1e-6);
}

TEST(Softmax, RejectsBadInput) {
  EXPECT_THROW(softmax(Logits{{1.0, 2.0}}, 0.0), InvalidArgument);
  EXPECT_THROW(softmax(Logits{{1.0, 2.0}}, -1.0), InvalidArgument);
  EXPECT_THROW(softmax(Logits{}, 1.0), InvalidArgument);
  EXPECT_THROW(softmax(Logits{{1.0, NAN}}, 1.0), InvalidArgument);
}

TEST(Softmax, ExtremeLogitsStayFinite) {
  const auto p = softmax(Logits{{1e300, -1e300, 0.0}}, 1.0);
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_DOUBLE_EQ(p[1], 0.0);
}

TEST(SoftmaxProperty, NormalizedShiftInvariantRankPreserving) {
  Rng rng(101);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 2 + rng.below(41);
    const Logits z = random_logits(rng, n, 20.0);
    const double tau = rng.uniform(0.05, 10.0);
    const auto p = softmax(z, tau);
    double total = 0.0;
    for (double v : p.probs) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
      total += v;
    }
    ASSERT_NEAR(total, 1.0, 1e-9);

    Logits shifted = z;
    const double shift = rng.uniform(-100.0, 100.0);
    for (auto& v : shifted.values) v += shift;
    const auto ps = softmax(shifted, tau);
    for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(ps[i], p[i], 1e-12);

    const auto p2 = softmax(z, rng.uniform(0.05, 10.0));
    ASSERT_EQ(argmax(p), argmax(z));
    ASSERT_EQ(argmax(p2), argmax(z));
    ASSERT_EQ(argsort(p.probs), argsort(z.values));
  }
}

TEST(Argmax, LowestIndexWinsTies) {
  EXPECT_EQ(argmax(Logits{{1.0, 3.0, 3.0}}), 1u);
  EXPECT_EQ(argmax(Logits{{0.0, 0.0}}), 0u);
  EXPECT_THROW(argmax(Logits{}), InvalidArgument);
}

TEST(Kl, Examples) {
  EXPECT_DOUBLE_EQ(kl_divergence(ProbDist{{0.3, 0.7}}, ProbDist{{0.3, 0.7}}), 0.0);
  EXPECT_NEAR(kl_divergence(ProbDist{{1.0, 0.0}}, ProbDist{{0.5, 0.5}}), kLn2, 1e-12);
  EXPECT_NEAR(kl_divergence(ProbDist{{0.5, 0.5}}, ProbDist{{0.25, 0.75}}), 0.5 * std::log(4.0 / 3.0), 1e-12);
  EXPECT_NEAR(kl_divergence(ProbDist{{0.5, 0.5}}, ProbDist{{0.25, 0.75}}), 0.143841, 1e-6);
}

TEST(Kl, LengthMismatchThrows) {
  EXPECT_THROW(kl_divergence(ProbDist{{1.0}}, ProbDist{{0.5, 0.5}}), InvalidArgument);
}

TEST(Kl, ZeroTargetMassIsClamped) {
  const double v = kl_divergence(ProbDist{{1.0, 0.0}}, ProbDist{{0.0, 1.0}});
  EXPECT_NEAR(v, -std::log(kProbClamp), 1e-9);
}

TEST(KlProperty, NonNegativeAndZeroOnIdentity) {
  Rng rng(202);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 2 + rng.below(41);
    const auto p = random_dist(rng, n);
    const auto q = random_dist(rng, n, false);
    ASSERT_GE(kl_divergence(p, q), 0.0);
    ASSERT_NEAR(kl_divergence(p, p), 0.0, 1e-12);
  }
}

TEST(CrossEntropy, Examples) {
  EXPECT_DOUBLE_EQ(cross_entropy(0, ProbDist{{1.0, 0.0}}), 0.0);
  EXPECT_NEAR(cross_entropy(0, ProbDist{{0.5, 0.5}}), kLn2, 1e-12);
  EXPECT_NEAR(cross_entropy(1, ProbDist{{1.0, 0.0}}), 27.631, 1e-3);
  EXPECT_THROW(cross_entropy(2, ProbDist{{0.5, 0.5}}), InvalidArgument);
}

TEST(CrossEntropyProperty, MatchesNegativeLogAndIsNonNegative) {
  Rng rng(303);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 2 + rng.below(41);
    const auto p = random_dist(rng, n);
    const std::size_t g = rng.below(n);
    const double ce = cross_entropy(g, p);
    ASSERT_GE(ce, 0.0);
    ASSERT_DOUBLE_EQ(ce, -std::log(std::max(p[g], kProbClamp)));
  }
}

TEST(CombinedLoss, Examples) {
  const Logits zero{{0.0, 0.0}};
  const std::vector<Logits> teachers{Logits{{3.0, -1.0}}};
  EXPECT_NEAR(combined_loss(zero, 0, teachers, 0.0, 2.4).combined, kLn2, 1e-12);

  const Logits s{{0.4, -1.2, 2.0}};
  const std::vector<Logits> same{s};
  EXPECT_NEAR(combined_loss(s, std::nullopt, same, 1.0, 2.4).combined, 0.0, 1e-15);

  const std::vector<Logits> two_zero{zero, zero};
  const auto b = combined_loss(zero, 0, two_zero, 0.5, 2.4);
  EXPECT_NEAR(b.combined, 0.5 * kLn2, 1e-12);
  EXPECT_NEAR(b.combined, 0.346574, 1e-6);
  EXPECT_DOUBLE_EQ(b.distill_loss, 0.0);
}

TEST(CombinedLoss, Errors) {
  const Logits z{{0.0, 1.0}};
  const std::vector<Logits> t{z};
  EXPECT_THROW(combined_loss(z, 0, t, -0.1, 2.4), InvalidArgument);
  EXPECT_THROW(combined_loss(z, 0, t, 1.1, 2.4), InvalidArgument);
  EXPECT_THROW(combined_loss(z, 0, {}, 1.0, 2.4), InvalidArgument);
  EXPECT_THROW(combined_loss(z, 0, t, 0.5, 0.0), InvalidArgument);
  EXPECT_THROW(combined_loss(z, 2, t, 0.5, 2.4), InvalidArgument);
  const std::vector<Logits> wrong{Logits{{0.0, 1.0, 2.0}}};
  EXPECT_THROW(combined_loss(z, 0, wrong, 0.5, 2.4), InvalidArgument);
}

TEST(CombinedLoss, MissingGoldDropsCrossEntropy) {
  const Logits s{{1.0, 0.0}};
  const std::vector<Logits> t{Logits{{0.0, 1.0}}};
  const auto b = combined_loss(s, std::nullopt, t, 0.3, 2.0);
  EXPECT_DOUBLE_EQ(b.ground_truth_loss, 0.0);
  EXPECT_DOUBLE_EQ(b.combined, 0.3 * b.distill_loss);
}

TEST(CombinedLoss, TauSquaredOptionScalesDistillTerm) {
  const Logits s{{1.0, 0.0, -0.5}};
  const std::vector<Logits> t{Logits{{0.0, 1.0, 0.2}}};
  const auto plain = combined_loss(s, 0, t, 0.5, 2.0);
  const auto scaled = combined_loss(s, 0, t, 0.5, 2.0, LossOptions{true});
  EXPECT_NEAR(scaled.distill_loss, 4.0 * plain.distill_loss, 1e-12);
}

TEST(CombinedLossProperty, EndpointsAreExact) {
  Rng rng(404);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 2 + rng.below(41);
    const auto s = random_logits(rng, n);
    const std::vector<Logits> t{random_logits(rng, n), random_logits(rng, n)};
    const std::size_t g = rng.below(n);
    const double tau = rng.uniform(0.5, 5.0);
    ASSERT_EQ(combined_loss(s, g, t, 0.0, tau).combined, cross_entropy(g, softmax(s, 1.0)));
    const double kl = kl_divergence(softmax(t[0], tau), softmax(s, tau)) +
                      kl_divergence(softmax(t[1], tau), softmax(s, tau));
    ASSERT_EQ(combined_loss(s, g, t, 1.0, tau).combined, kl);
  }
}

TEST(Gradient, Examples) {
  const Logits zero{{0.0, 0.0}};
  const auto g = combined_loss_gradient(zero, 0, {}, 0.0, 2.4);
  EXPECT_DOUBLE_EQ(g[0], -0.5);
  EXPECT_DOUBLE_EQ(g[1], 0.5);

  const Logits s{{0.7, -0.3, 1.1}};
  const std::vector<Logits> t{s};
  for (double v : combined_loss_gradient(s, std::nullopt, t, 1.0, 2.4)) EXPECT_DOUBLE_EQ(v, 0.0);
}

// Central differences over every logit, compared as a relative 2-norm error.
TEST(GradientProperty, MatchesFiniteDifferences) {
  Rng rng(505);
  const std::size_t sizes[] = {2, 19, 42};
  for (int c = 0; c < 60; ++c) {
    const std::size_t n = sizes[c % 3];
    const auto s = random_logits(rng, n);
    const std::size_t k = 1 + rng.below(2);
    std::vector<Logits> t;
    for (std::size_t m = 0; m < k; ++m) t.push_back(random_logits(rng, n));
    const double lambda = rng.uniform();
    const double tau = rng.uniform(0.5, 5.0);
    const std::optional<std::size_t> gold =
        rng.below(4) == 0 ? std::nullopt : std::optional<std::size_t>(rng.below(n));
    const LossOptions opt{rng.below(2) == 0};
    const auto g = combined_loss_gradient(s, gold, t, lambda, tau, opt);
    std::vector<double> fd(n);
    const double h = 1e-5;
    for (std::size_t i = 0; i < n; ++i) {
      Logits up = s, down = s;
      up.values[i] += h;
      down.values[i] -= h;
      fd[i] = (combined_loss(up, gold, t, lambda, tau, opt).combined -
               combined_loss(down, gold, t, lambda, tau, opt).combined) /
              (2 * h);
    }
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      diff += (g[i] - fd[i]) * (g[i] - fd[i]);
      norm += g[i] * g[i] + fd[i] * fd[i];
    }
    ASSERT_LT(std::sqrt(diff) / std::max(std::sqrt(norm), 1e-8), 1e-4) << "case " << c;
  }
}
