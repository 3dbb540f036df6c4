#pragma once

// Two-dimensional loss surfaces around a parameter vector, along two seeded
// random directions normalized filter by filter (row by row) to the scale of
// the parameters they perturb.

#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtd/classifier.hpp"
#include "mtd/error.hpp"
#include "mtd/random.hpp"

namespace mtd {

struct LossGrid {
  std::vector<double> alphas;
  std::vector<double> betas;
  std::vector<double> values;  // row-major: values[i * betas.size() + j] at (alphas[i], betas[j])
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::string> warnings;

  std::size_t resolution() const noexcept { return alphas.size(); }
  double at(std::size_t i, std::size_t j) const { return values.at(i * betas.size() + j); }
  double center() const { return at(alphas.size() / 2, betas.size() / 2); }

  // Header row of beta values, first column alpha values.
  void write_csv(std::ostream& out) const {
    out.precision(17);
    out << "alpha\\beta";
    for (double b : betas) out << ',' << b;
    out << '\n';
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      out << alphas[i];
      for (std::size_t j = 0; j < betas.size(); ++j) out << ',' << at(i, j);
      out << '\n';
    }
  }
};

// Coordinates w * (i - c) / c for i in [0, resolution), c = (resolution - 1) / 2,
// so the middle coordinate is exactly zero.
inline std::vector<double> grid_axis(double half_width, std::size_t resolution) {
  if (resolution < 3 || resolution % 2 == 0) throw InvalidArgument("grid resolution must be odd and at least 3");
  if (!(half_width > 0.0)) throw InvalidArgument("grid half width must be positive");
  const double c = static_cast<double>(resolution - 1) / 2.0;
  std::vector<double> axis(resolution);
  for (std::size_t i = 0; i < resolution; ++i) axis[i] = half_width * (static_cast<double>(i) - c) / c;
  return axis;
}

// Evaluates loss_at(alpha, beta) on the square grid.
template <typename LossAt>
LossGrid surface_grid(double half_width, std::size_t resolution, LossAt&& loss_at) {
  LossGrid g;
  g.alphas = grid_axis(half_width, resolution);
  g.betas = g.alphas;
  g.values.reserve(resolution * resolution);
  for (double a : g.alphas) {
    for (double b : g.betas) g.values.push_back(loss_at(a, b));
  }
  return g;
}

// Gaussian direction with every row of every block rescaled to the norm of
// the matching parameter row. Rows with zero parameter norm get a zero
// direction and a warning.
inline std::vector<double> filter_normalized_direction(std::span<const double> params,
                                                       std::span<const ParamBlock> blocks, std::uint64_t seed,
                                                       std::vector<std::string>* warnings = nullptr) {
  std::vector<double> dir(params.size(), 0.0);
  Rng rng(seed);
  for (auto& d : dir) d = rng.normal();
  std::size_t zero_rows = 0;
  for (const auto& b : blocks) {
    for (std::size_t r = 0; r < b.rows; ++r) {
      const std::size_t off = b.offset + r * b.cols;
      double pn = 0.0, dn = 0.0;
      for (std::size_t k = 0; k < b.cols; ++k) {
        pn += params[off + k] * params[off + k];
        dn += dir[off + k] * dir[off + k];
      }
      pn = std::sqrt(pn);
      dn = std::sqrt(dn);
      const double scale = (pn == 0.0 || dn == 0.0) ? 0.0 : pn / dn;
      if (pn == 0.0) ++zero_rows;
      for (std::size_t k = 0; k < b.cols; ++k) dir[off + k] *= scale;
    }
  }
  if (zero_rows > 0 && warnings) {
    warnings->push_back(std::to_string(zero_rows) + " parameter row(s) with zero norm; direction zeroed there");
  }
  return dir;
}

// Generic reference path: materializes center + a*d1 + b*d2 for each cell.
template <typename LossOfParams>
LossGrid perturbation_grid(std::span<const double> center, std::span<const double> d1, std::span<const double> d2,
                           double half_width, std::size_t resolution, LossOfParams&& loss_of) {
  if (d1.size() != center.size() || d2.size() != center.size()) throw InvalidArgument("direction size mismatch");
  std::vector<double> theta(center.size());
  return surface_grid(half_width, resolution, [&](double a, double b) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = center[i] + a * d1[i] + b * d2[i];
    return loss_of(std::span<const double>(theta));
  });
}

struct LandscapeOptions {
  double half_width = 1.0;
  std::size_t resolution = 41;
  std::uint64_t direction_seed = 0;
};

namespace detail {

// Per-sample quantities that are linear in the parameters, precomputed for
// the center and both directions.
struct LinearParts {
  std::vector<double> base, d1, d2;
};

// W * x + b over rows [offset, offset + rows * cols) and bias at bias_offset.
inline std::vector<double> sparse_rows_times(std::span<const double> p, std::size_t offset, std::size_t rows,
                                             std::size_t cols, std::size_t bias_offset, const FeatureVector& x) {
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = p.data() + offset + r * cols;
    double s = p[bias_offset + r];
    for (std::size_t k = 0; k < x.nnz(); ++k) s += row[x.indices[k]] * x.values[k];
    out[r] = s;
  }
  return out;
}

}  // namespace detail

// Loss surface of a trained model over `samples`. The logits (linear) or the
// hidden pre-activations (mlp1) are affine in the parameters, so they are
// precomputed once per sample instead of materializing every perturbed model.
inline LossGrid loss_landscape_grid(const Model& model, std::span<const TrainSample> samples,
                                    const ObjectiveConfig& obj, const LandscapeOptions& opts = {}) {
  if (samples.empty()) throw InvalidArgument("loss_landscape_grid: no evaluation samples");
  std::vector<std::string> warnings;
  const auto blocks = model.blocks();
  const auto d1 = filter_normalized_direction(model.params, blocks, derive_seed(opts.direction_seed, 1), &warnings);
  const auto d2 = filter_normalized_direction(model.params, blocks, derive_seed(opts.direction_seed, 2), &warnings);

  const bool mlp = model.arch == Arch::mlp1;
  std::vector<detail::LinearParts> parts(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& x = samples[i].features;
    if (x.dim != model.dim) throw InvalidArgument("loss_landscape_grid: feature dim mismatch");
    if (!mlp) {
      parts[i].base = forward(model, x).values;
      parts[i].d1 = detail::sparse_rows_times(d1, model.out_w_offset(), model.num_classes, model.dim,
                                              model.out_b_offset(), x);
      parts[i].d2 = detail::sparse_rows_times(d2, model.out_w_offset(), model.num_classes, model.dim,
                                              model.out_b_offset(), x);
    } else {
      parts[i].base = detail::sparse_rows_times(model.params, model.in_w_offset(), model.hidden, model.dim,
                                                model.in_b_offset(), x);
      parts[i].d1 = detail::sparse_rows_times(d1, model.in_w_offset(), model.hidden, model.dim, model.in_b_offset(), x);
      parts[i].d2 = detail::sparse_rows_times(d2, model.in_w_offset(), model.hidden, model.dim, model.in_b_offset(), x);
    }
  }

  const std::size_t R = model.num_classes;
  const std::size_t H = model.hidden;
  std::vector<double> out_w, out_b(R);
  Logits z;
  z.values.resize(R);
  std::vector<double> hidden(H);

  LossGrid g = surface_grid(opts.half_width, opts.resolution, [&](double a, double b) {
    if (mlp) {
      out_w.resize(R * H);
      for (std::size_t k = 0; k < R * H; ++k) {
        const std::size_t o = model.out_w_offset() + k;
        out_w[k] = model.params[o] + a * d1[o] + b * d2[o];
      }
      for (std::size_t r = 0; r < R; ++r) {
        const std::size_t o = model.out_b_offset() + r;
        out_b[r] = model.params[o] + a * d1[o] + b * d2[o];
      }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& pp = parts[i];
      if (!mlp) {
        for (std::size_t r = 0; r < R; ++r) z.values[r] = pp.base[r] + a * pp.d1[r] + b * pp.d2[r];
      } else {
        for (std::size_t h = 0; h < H; ++h) hidden[h] = std::tanh(pp.base[h] + a * pp.d1[h] + b * pp.d2[h]);
        for (std::size_t r = 0; r < R; ++r) {
          double s = out_b[r];
          for (std::size_t h = 0; h < H; ++h) s += out_w[r * H + h] * hidden[h];
          z.values[r] = s;
        }
      }
      const auto& s = samples[i];
      const std::span<const Logits> teachers =
          obj.lambda == 0.0 ? std::span<const Logits>{} : std::span<const Logits>(s.teacher_logits);
      total += combined_loss(z, s.hard_label, teachers, obj.lambda, obj.temperature, obj.loss).combined;
    }
    return total / static_cast<double>(samples.size());
  });
  g.warnings = std::move(warnings);
  g.metadata = {{"arch", std::string(to_string(model.arch))},
                {"half_width", opts.half_width},
                {"resolution", opts.resolution},
                {"direction_seed", opts.direction_seed},
                {"lambda", obj.lambda},
                {"temperature", obj.temperature},
                {"samples", samples.size()},
                {"normalization", "filter-wise (per parameter row)"}};
  return g;
}

}  // namespace mtd
