#pragma once

// Shared fixtures for the unit tests and the acceptance binary.

#include <cmath>
#include <cstdint>
#include <vector>

#include "mtd/config.hpp"
#include "mtd/random.hpp"

namespace mtd::testing {

inline Logits random_logits(Rng& rng, std::size_t n, double scale = 3.0) {
  Logits z;
  z.values.resize(n);
  for (auto& v : z.values) v = rng.uniform(-scale, scale);
  return z;
}

// Random distribution with some exact zeros, so the p_i = 0 branch is hit.
inline ProbDist random_dist(Rng& rng, std::size_t n, bool allow_zeros = true) {
  ProbDist p;
  p.probs.resize(n);
  double total = 0.0;
  for (auto& v : p.probs) {
    v = (allow_zeros && rng.below(5) == 0) ? 0.0 : rng.uniform() + 1e-3;
    total += v;
  }
  if (total == 0.0) {
    p.probs[0] = 1.0;
    return p;
  }
  for (auto& v : p.probs) v /= total;
  return p;
}

// A small synthetic experiment: a few hundred instances, 4096-dim features.
inline ExperimentConfig small_config(std::size_t classes = 5, std::size_t per_class = 100) {
  ExperimentConfig c = defaults_for(Profile::synthetic);
  c.dataset.synthetic.num_classes = classes;
  c.dataset.synthetic.instances_per_class = per_class;
  c.dataset.synthetic.vocab_size = 120;
  c.labeled_fraction = 0.1;
  c.unlabeled_fraction = 0.5;
  c.iterations = 3;
  c.model.dim = 4096;
  c.seeds = {1};
  c.workers = 1;
  return c;
}

}  // namespace mtd::testing
