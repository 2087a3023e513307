#pragma once

// Seeded nonlinear VAR generator with a known summary graph. Used as the
// bundled sample dataset and throughout the tests.
//
//   x[t,i] = a_i * x[t-1,i] + sum_{j in pa(i), j != i} c_ji * phi(x[t-1,j]) + eta[t,i]
//
// phi is tanh (or identity for the linear variant); graph(j, i) = 1 marks j -> i
// and the diagonal is always set.

#include "tsbench/data.hpp"

#include <algorithm>
#include <numeric>

namespace tsbench {

enum class NoiseKind { gaussian, bimodal, none };

struct SyntheticVarSpec {
  std::size_t n_vars = 10;
  std::size_t length = 2000;
  std::size_t n_samples = 1;  // length is per sample
  std::size_t cross_edges = 7;
  double self_min = 0.3, self_max = 0.6;
  double cross_min = 0.6, cross_max = 1.0;
  bool linear = false;
  NoiseKind noise = NoiseKind::bimodal;
  double noise_scale = 0.3;
  std::size_t burn_in = 100;
  std::uint64_t seed = 0;
};

struct SyntheticVar {
  TimeSeriesDataset data;
  Eigen::MatrixXi graph;  // graph(j, i) = 1 iff j -> i
  Matrix self_coef;       // N x 1
  Matrix cross_coef;      // N x N, cross_coef(j, i) = c_ji (zero where no edge)
};

inline double draw_noise(NoiseKind kind, double scale, Rng& rng) {
  switch (kind) {
    case NoiseKind::none: return 0.0;
    case NoiseKind::gaussian: return scale * standard_normal(rng);
    case NoiseKind::bimodal: {
      // Equal mixture of N(+-0.8, 0.35^2); unit-ish variance before scaling.
      const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
      return scale * (0.8 * sign + 0.35 * standard_normal(rng));
    }
  }
  return 0.0;
}

inline SyntheticVar make_synthetic_var(const SyntheticVarSpec& spec) {
  const auto N = spec.n_vars;
  require(N >= 2, "synthetic VAR needs at least two variables");
  require(spec.cross_edges <= N * (N - 1), "too many cross edges requested");
  Rng rng(spec.seed);
  SyntheticVar out;
  out.graph = Eigen::MatrixXi::Identity(N, N);
  out.self_coef.resize(N, 1);
  out.cross_coef = Matrix::Zero(N, N);
  for (std::size_t i = 0; i < N; ++i)
    out.self_coef(i, 0) = spec.self_min + (spec.self_max - spec.self_min) * uniform01(rng);

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t i = 0; i < N; ++i)
      if (i != j) pairs.emplace_back(j, i);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  for (std::size_t e = 0; e < spec.cross_edges; ++e) {
    auto [j, i] = pairs[e];
    const double mag = spec.cross_min + (spec.cross_max - spec.cross_min) * uniform01(rng);
    out.cross_coef(j, i) = uniform01(rng) < 0.5 ? -mag : mag;
    out.graph(j, i) = 1;
  }

  const auto L = spec.length;
  const auto S = std::max<std::size_t>(1, spec.n_samples);
  out.data.values.resize(L * S, N);
  for (std::size_t s = 0; s < S; ++s) {
    Vector x = Vector::Zero(N);
    for (std::size_t i = 0; i < N; ++i) x(i) = standard_normal(rng);
    for (std::size_t t = 0; t < spec.burn_in + L; ++t) {
      Vector phi = spec.linear ? x : Vector(x.array().tanh());
      Vector next = out.self_coef.col(0).cwiseProduct(x) + out.cross_coef.transpose() * phi;
      for (std::size_t i = 0; i < N; ++i) next(i) += draw_noise(spec.noise, spec.noise_scale, rng);
      x = next;
      if (t >= spec.burn_in) out.data.values.row(s * L + t - spec.burn_in) = x.transpose();
    }
    out.data.sample_boundaries.push_back({s * L, (s + 1) * L});
  }
  for (std::size_t i = 0; i < N; ++i) out.data.names.push_back("x" + std::to_string(i + 1));
  return out;
}

/// Noise-free rotation system: every pair of variables oscillates with a fixed
/// angle, so the exact one-step map is linear and realizable.
inline TimeSeriesDataset make_rotation_system(std::size_t n_pairs, std::size_t length, std::uint64_t seed) {
  Rng rng(seed);
  const auto N = 2 * n_pairs;
  TimeSeriesDataset ds;
  ds.values.resize(length, N);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const double theta = 0.2 + 0.5 * uniform01(rng);
    const double phase = 6.283185307179586 * uniform01(rng);
    for (std::size_t t = 0; t < length; ++t) {
      ds.values(t, 2 * p) = std::cos(theta * t + phase);
      ds.values(t, 2 * p + 1) = std::sin(theta * t + phase);
    }
  }
  for (std::size_t i = 0; i < N; ++i) ds.names.push_back("r" + std::to_string(i + 1));
  ds.sample_boundaries = {{0, length}};
  return ds;
}

}  // namespace tsbench
