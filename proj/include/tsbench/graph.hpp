#pragma once

// Hypothesized causal graph extraction: Shapley importance of each input
// series for each output, sparsity thresholding, and distance-prior graphs.

#include "tsbench/cdnn.hpp"
#include "tsbench/io.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace tsbench {

/// Maps a batch of flattened inputs (rows x B) to outputs (outputs x B).
using BatchFunction = std::function<Matrix(const Matrix&)>;

struct ShapleyEstimate {
  Matrix value;  // groups x outputs, signed Shapley values
  Matrix se;     // Monte-Carlo standard error of each entry
};

/// Permutation-sampling Shapley values for one input `x` against reference
/// `ref`. Row r of the input belongs to group r % n_groups (time-major
/// windows). Every permutation telescopes to f(x) - f(ref), so efficiency
/// holds exactly for each sample.
inline ShapleyEstimate shapley_values(const BatchFunction& f, const Vector& x, const Vector& ref,
                                      std::size_t n_groups, std::size_t permutations, Rng& rng) {
  require(permutations >= 2, "Shapley estimation needs mc_samples >= 2");
  require_shape(x.size() == ref.size() && x.size() % static_cast<Eigen::Index>(n_groups) == 0,
                "input and reference must be flattened windows over the same groups");
  const auto G = static_cast<Eigen::Index>(n_groups);
  const auto P = static_cast<Eigen::Index>(permutations);
  std::vector<std::vector<Eigen::Index>> perms(permutations);
  Matrix batch(x.size(), (G + 1) * P);
  std::vector<Eigen::Index> order(n_groups);
  for (Eigen::Index p = 0; p < P; ++p) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    perms[static_cast<std::size_t>(p)] = order;
    Vector cur = ref;
    batch.col(p * (G + 1)) = cur;
    for (Eigen::Index k = 0; k < G; ++k) {
      for (Eigen::Index r = order[static_cast<std::size_t>(k)]; r < x.size(); r += G) cur(r) = x(r);
      batch.col(p * (G + 1) + k + 1) = cur;
    }
  }
  const Matrix out = f(batch);
  const auto O = out.rows();
  auto marginal = [&](Eigen::Index p, Eigen::Index k) -> Eigen::RowVectorXd {
    return (out.col(p * (G + 1) + k + 1) - out.col(p * (G + 1) + k)).transpose();
  };
  ShapleyEstimate est;
  const double n = static_cast<double>(P);
  est.value = Matrix::Zero(G, O);
  for (Eigen::Index p = 0; p < P; ++p)
    for (Eigen::Index k = 0; k < G; ++k) est.value.row(perms[static_cast<std::size_t>(p)][static_cast<std::size_t>(k)]) += marginal(p, k);
  est.value /= n;
  Matrix var = Matrix::Zero(G, O);
  for (Eigen::Index p = 0; p < P; ++p) {
    for (Eigen::Index k = 0; k < G; ++k) {
      const auto j = perms[static_cast<std::size_t>(p)][static_cast<std::size_t>(k)];
      var.row(j) += (marginal(p, k) - est.value.row(j)).cwiseAbs2();
    }
  }
  var /= n - 1.0;
  est.se = (var / n).cwiseSqrt();
  return est;
}

struct ImportanceMatrix {
  Matrix phi;  // phi(j, i): importance of series j for output i
  Matrix se;   // standard error of phi from the per-window Monte-Carlo errors
  std::size_t windows = 0;
  std::size_t mc_samples = 0;
};

struct ShapleyConfig {
  std::size_t explained = 64;
  std::size_t background = 512;
  std::size_t mc_samples = 128;
  std::uint64_t seed = 0;
};

/// Mean absolute Shapley value over `explained` windows (inputs x W), with the
/// mean of `background` windows as the absent-feature reference.
inline ImportanceMatrix shapley_importance(const BatchFunction& f, std::size_t n_groups, const Matrix& background,
                                           const Matrix& explained, std::size_t mc_samples, std::uint64_t seed) {
  require_shape(background.cols() > 0 && explained.cols() > 0, "background and explained sets must be nonempty");
  require_shape(background.rows() == explained.rows(), "background and explained windows differ in size");
  const Vector ref = background.rowwise().mean();
  ImportanceMatrix out;
  out.windows = static_cast<std::size_t>(explained.cols());
  out.mc_samples = mc_samples;
  Matrix var_sum;
  for (Eigen::Index w = 0; w < explained.cols(); ++w) {
    Rng rng(derive_seed(seed, 0x5A, w));
    auto est = shapley_values(f, explained.col(w), ref, n_groups, mc_samples, rng);
    if (w == 0) {
      out.phi = Matrix::Zero(est.value.rows(), est.value.cols());
      var_sum = out.phi;
    }
    out.phi += est.value.cwiseAbs();
    var_sum += est.se.cwiseAbs2();
  }
  const double W = static_cast<double>(explained.cols());
  out.phi /= W;
  out.se = var_sum.cwiseSqrt() / W;
  if (!out.phi.allFinite()) throw NumericError("non-finite Shapley importance");
  return out;
}

/// Importance of the CDNN's input series. `mask` defaults to all ones.
inline ImportanceMatrix shapley_importance(const CdnnModel& model, const Matrix& series,
                                           const std::vector<IndexRange>& background_ranges,
                                           const std::vector<IndexRange>& explained_ranges, const ShapleyConfig& cfg,
                                           const AdjacencyMask* mask = nullptr) {
  const auto N = static_cast<Eigen::Index>(model.n_vars());
  const AdjacencyMask m = mask ? *mask : full_mask(N);
  auto pick = [&](const std::vector<IndexRange>& ranges, std::size_t cap, std::uint64_t stream) {
    auto targets = window_targets(ranges, model.window());
    require_shape(!targets.empty(), "no admissible windows for Shapley analysis");
    Rng rng(derive_seed(cfg.seed, stream));
    std::shuffle(targets.begin(), targets.end(), rng);
    if (targets.size() > cap) targets.resize(cap);
    std::sort(targets.begin(), targets.end());
    return gather_windows(series, targets, model.window());
  };
  const Matrix background = pick(background_ranges, cfg.background, 1);
  const Matrix explained = pick(explained_ranges, cfg.explained, 2);
  return shapley_importance([&](const Matrix& x) { return model.forward(x, m); }, model.n_vars(), background,
                            explained, cfg.mc_samples, cfg.seed);
}

inline constexpr double kDefaultSparsity = 0.15;

struct Hcg {
  AdjacencyMask h;
  double sigma_requested = 0.0;
  double sigma_achieved = 0.0;
  double gamma = 0.0;
  std::string source;  // "shap" or "prior"

  io::json metadata() const {
    return {{"source", source},
            {"sigma_requested", sigma_requested},
            {"sigma_achieved", sigma_achieved},
            {"gamma", gamma}};
  }
};

inline double density(const AdjacencyMask& h) {
  return static_cast<double>(h.count()) / static_cast<double>(h.size());
}

/// h_ji = 1 iff phi_ji > gamma, where gamma is the (k+1)-th largest of the
/// pooled entries and k = round(sigma N^2); ties at gamma stay 0.
inline Hcg threshold_by_sparsity(const Matrix& phi, double sigma) {
  require(sigma > 0.0 && sigma < 1.0 + 1e-12, "sparsity must be in (0, 1]");
  require_shape(phi.rows() == phi.cols() && phi.size() > 0, "importance matrix must be square");
  if (!phi.allFinite()) throw NumericError("importance matrix has non-finite entries");
  if (phi.maxCoeff() == phi.minCoeff()) {
    throw DegenerateError("all importance values are equal; use a prior graph (prior_distances) instead");
  }
  const auto total = static_cast<std::size_t>(phi.size());
  const auto k = static_cast<std::size_t>(std::llround(sigma * static_cast<double>(total)));
  Hcg out;
  out.source = "shap";
  out.sigma_requested = sigma;
  if (k >= total) {
    out.gamma = -std::numeric_limits<double>::infinity();
    out.h = AdjacencyMask::Ones(phi.rows(), phi.cols());
  } else {
    std::vector<double> v(phi.data(), phi.data() + phi.size());
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), std::greater<>());
    out.gamma = v[k];
    out.h = (phi.array() > out.gamma).cast<int>();
  }
  out.sigma_achieved = density(out.h);
  return out;
}

/// h_ij = 1 iff dist(i, j) <= sigma_dist; the diagonal is always 1.
inline Hcg prior_graph(const Matrix& dist, double sigma_dist) {
  require_shape(dist.rows() == dist.cols() && dist.rows() >= 1, "distance matrix must be square");
  require(sigma_dist >= 0.0, "distance threshold must be nonnegative");
  if (!dist.allFinite() || (dist.array() < 0.0).any()) throw UsageError("distances must be finite and nonnegative");
  for (Eigen::Index i = 0; i < dist.rows(); ++i) {
    if (dist(i, i) != 0.0) throw UsageError("distance matrix must have a zero diagonal");
    for (Eigen::Index j = 0; j < i; ++j) {
      if (dist(i, j) != dist(j, i)) {
        throw UsageError("distance matrix is not symmetric at (" + std::to_string(i + 1) + ", " +
                         std::to_string(j + 1) + ")");
      }
    }
  }
  Hcg out;
  out.source = "prior";
  out.h = (dist.array() <= sigma_dist).cast<int>();
  out.h.diagonal().setOnes();
  out.gamma = sigma_dist;
  out.sigma_achieved = density(out.h);
  out.sigma_requested = out.sigma_achieved;
  return out;
}

}  // namespace tsbench
