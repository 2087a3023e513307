#pragma once

// Fidelity of generated series: discriminative score, unbiased RBF MMD,
// cross-correlation score, and a 2-D PCA projection for plotting.

#include "tsbench/data.hpp"
#include "tsbench/io.hpp"
#include "tsbench/metrics.hpp"
#include "tsbench/nn.hpp"

#include <Eigen/Eigenvalues>

namespace tsbench {

/// Non-overlapping length-`w` windows of the first `channels` columns inside
/// each range, flattened time-major; one row per window.
inline Matrix feature_windows(const Matrix& values, const std::vector<IndexRange>& ranges, std::size_t channels,
                              std::size_t w = 5) {
  require(w >= 1, "feature window length must be >= 1");
  require_shape(channels >= 1 && static_cast<Eigen::Index>(channels) <= values.cols(),
                "feature channel count exceeds data width");
  std::size_t count = 0;
  for (const auto& r : ranges) count += r.size() / w;
  const auto C = static_cast<Eigen::Index>(channels);
  Matrix out(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(w) * C);
  Eigen::Index row = 0;
  for (const auto& r : ranges) {
    for (std::size_t t = r.begin; t + w <= r.end; t += w, ++row) {
      for (std::size_t s = 0; s < w; ++s)
        out.row(row).segment(static_cast<Eigen::Index>(s) * C, C) = values.row(t + s).head(C);
    }
  }
  return out;
}

inline Matrix feature_windows(const TimeSeriesDataset& ds, std::size_t channels, std::size_t w = 5) {
  auto ranges = ds.sample_boundaries;
  if (ranges.empty()) ranges = {{0, ds.length()}};
  return feature_windows(ds.values, ranges, channels, w);
}

// ---- discriminative score ------------------------------------------------

struct DiscriminatorConfig {
  std::size_t hidden = 8;
  std::size_t layers = 2;
  std::size_t epochs = 30;
  std::size_t batch = 16;
  double lr = 1e-4;
  double test_fraction = 0.2;
  double max_imbalance = 10.0;
  std::size_t repeats = 1;  // independently seeded classifiers, scores averaged
  std::uint64_t seed = 0;

  io::json to_json() const {
    return {{"hidden", hidden}, {"layers", layers},   {"epochs", epochs},
            {"batch", batch},   {"lr", lr},           {"test_fraction", test_fraction}, {"max_imbalance", max_imbalance},
            {"repeats", repeats}, {"seed", seed}};
  }
};

namespace detail {

inline double discriminator_run(const Matrix& real, const Matrix& gen, std::size_t channels,
                                const DiscriminatorConfig& cfg, std::uint64_t seed) {
  require_shape(real.rows() >= 2 && gen.rows() >= 2, "discriminator needs at least two windows per class");
  require_shape(real.cols() == gen.cols(), "real and generated windows differ in size");
  require_shape(channels >= 1 && real.cols() % static_cast<Eigen::Index>(channels) == 0,
                "window width is not a multiple of the channel count");
  const double ratio = static_cast<double>(std::max(real.rows(), gen.rows())) /
                       static_cast<double>(std::min(real.rows(), gen.rows()));
  if (ratio > cfg.max_imbalance) {
    throw UsageError("class imbalance " + io::format_double(ratio) + ":1 exceeds " +
                     io::format_double(cfg.max_imbalance) + ":1");
  }
  const auto C = static_cast<Eigen::Index>(channels);
  const auto steps = real.cols() / C;
  Rng rng(derive_seed(seed, 0xD15C));

  // Balance by subsampling the larger class, then a stratified split.
  auto pick = [&](Eigen::Index n, Eigen::Index keep) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(keep));
    return idx;
  };
  const auto per_class = std::min(real.rows(), gen.rows());
  const auto n_test = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::llround(cfg.test_fraction * static_cast<double>(per_class))));
  require_shape(per_class - n_test >= 1, "too few windows for a train/test split");
  struct Example {
    const Matrix* src;
    Eigen::Index row;
    int label;
  };
  std::vector<Example> train, test;
  for (int label = 0; label < 2; ++label) {
    const Matrix& src = label ? gen : real;
    auto idx = pick(src.rows(), per_class);
    for (Eigen::Index k = 0; k < per_class; ++k)
      (k < n_test ? test : train).push_back({&src, idx[static_cast<std::size_t>(k)], label});
  }

  nn::ParamStore store(seed);
  Rng init(derive_seed(seed, 0x1A17));
  nn::LSTM lstm(store, "disc", {channels, cfg.hidden, cfg.layers}, init);
  nn::Dense head(store, "disc.out", static_cast<Eigen::Index>(cfg.hidden), 1, init);
  nn::AdamState adam(store.pointers(), {cfg.lr});

  auto sequence = [&](const std::vector<Example>& ex, std::size_t a, std::size_t b) {
    std::vector<Matrix> seq(static_cast<std::size_t>(steps), Matrix(C, static_cast<Eigen::Index>(b - a)));
    for (std::size_t k = a; k < b; ++k)
      for (Eigen::Index s = 0; s < steps; ++s)
        seq[static_cast<std::size_t>(s)].col(static_cast<Eigen::Index>(k - a)) =
            ex[k].src->row(ex[k].row).segment(s * C, C).transpose();
    return seq;
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t a = 0; a < train.size(); a += cfg.batch) {
      const std::size_t b = std::min(train.size(), a + cfg.batch);
      store.zero_grad();
      nn::LSTM::Cache cache;
      Matrix h = lstm.forward(sequence(train, a, b), &cache);
      Matrix logit = head.forward(h);
      Matrix dlogit(1, logit.cols());
      for (Eigen::Index k = 0; k < logit.cols(); ++k) {
        const double p = 1.0 / (1.0 + std::exp(-logit(0, k)));
        dlogit(0, k) = (p - train[a + static_cast<std::size_t>(k)].label) / static_cast<double>(b - a);
      }
      lstm.backward(head.backward(dlogit, h), cache);
      adam.step();
    }
  }

  Matrix logit = head.forward(lstm.forward(sequence(test, 0, test.size())));
  std::vector<int> labels;
  std::vector<double> scores;
  for (std::size_t k = 0; k < test.size(); ++k) {
    labels.push_back(test[k].label);
    scores.push_back(logit(0, static_cast<Eigen::Index>(k)));
  }
  return std::abs(auroc(labels, scores) - 0.5);
}

}  // namespace detail

/// |AUROC - 0.5| of a recurrent classifier separating real from generated
/// windows (rows of length w * channels), on a held-out split; the mean over
/// `cfg.repeats` seeds.
inline double discriminative_score(const Matrix& real, const Matrix& gen, std::size_t channels,
                                   const DiscriminatorConfig& cfg) {
  require(cfg.repeats >= 1, "discriminator repeats must be >= 1");
  double sum = 0.0;
  for (std::size_t r = 0; r < cfg.repeats; ++r)
    sum += detail::discriminator_run(real, gen, channels, cfg, r == 0 ? cfg.seed : derive_seed(cfg.seed, 0x4E9, r));
  return sum / static_cast<double>(cfg.repeats);
}

// ---- MMD -------------------------------------------------------------------

struct MmdResult {
  double mmd2 = 0.0;
  double bandwidth = 0.0;
};

inline double median_pairwise_distance(const Matrix& pooled) {
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Eigen::Index a = 0; a < pooled.rows(); ++a)
    for (Eigen::Index b = a + 1; b < pooled.rows(); ++b) d.push_back((pooled.row(a) - pooled.row(b)).norm());
  require_shape(!d.empty(), "median heuristic needs at least two points");
  const auto mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  double med = d[mid];
  if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid)));
  return med;
}

/// Unbiased MMD^2 with K(x, y) = exp(-|x - y|^2 / (2 h^2)). h is the median
/// pooled pairwise distance unless `bandwidth` > 0.
inline MmdResult mmd_rbf(const Matrix& x, const Matrix& y, double bandwidth = 0.0) {
  require_shape(x.rows() >= 2 && y.rows() >= 2, "MMD needs at least two vectors per set");
  require_shape(x.cols() == y.cols(), "MMD sets differ in dimension");
  MmdResult r;
  if (bandwidth > 0.0) {
    r.bandwidth = bandwidth;
  } else {
    Matrix pooled(x.rows() + y.rows(), x.cols());
    pooled << x, y;
    r.bandwidth = median_pairwise_distance(pooled);
    if (!(r.bandwidth > 0.0)) throw DegenerateError("median pairwise distance is zero; MMD bandwidth undefined");
  }
  const double g = 1.0 / (2.0 * r.bandwidth * r.bandwidth);
  auto sq = [](const Matrix& a, const Matrix& b) -> Matrix {
    Matrix d = (-2.0 * a * b.transpose()).colwise() + a.rowwise().squaredNorm();
    d.rowwise() += b.rowwise().squaredNorm().transpose();
    return d.cwiseMax(0.0);
  };
  const double n = static_cast<double>(x.rows()), m = static_cast<double>(y.rows());
  auto self_sum = [&](const Matrix& a) {
    Matrix k = (-g * sq(a, a).array()).exp().matrix();
    return k.sum() - k.diagonal().sum();
  };
  const double kxy = (-g * sq(x, y).array()).exp().sum();
  r.mmd2 = self_sum(x) / (n * (n - 1)) - 2.0 * kxy / (n * m) + self_sum(y) / (m * (m - 1));
  return r;
}

/// Random subset of at most `cap` rows, order preserved.
inline Matrix subsample_rows(const Matrix& m, std::size_t cap, std::uint64_t seed) {
  if (static_cast<std::size_t>(m.rows()) <= cap) return m;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(m.rows()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  Matrix out(static_cast<Eigen::Index>(cap), m.cols());
  for (std::size_t k = 0; k < cap; ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(idx[k]);
  return out;
}

// ---- cross-correlation -----------------------------------------------------

inline Matrix pearson_matrix(const Matrix& values, const std::vector<std::string>& names = {}) {
  require_shape(values.rows() >= 2, "correlation needs at least two rows");
  Matrix c = values.rowwise() - values.colwise().mean();
  Vector sd = c.colwise().norm().transpose();
  for (Eigen::Index i = 0; i < sd.size(); ++i) {
    if (!(sd(i) > 0.0)) {
      const auto label = static_cast<std::size_t>(i) < names.size() ? names[static_cast<std::size_t>(i)]
                                                                   : "channel " + std::to_string(i + 1);
      throw DegenerateError("correlation undefined: " + label + " is constant");
    }
  }
  Matrix corr = (c.transpose() * c).array() / (sd * sd.transpose()).array();
  corr.diagonal().setOnes();
  return corr;
}

/// sum_ij |corr_real_ij - corr_gen_ij| over channels (columns).
inline double cross_correlation_score(const Matrix& real, const Matrix& gen, const std::vector<std::string>& names = {}) {
  require_shape(real.cols() == gen.cols(), "real and generated channel counts differ");
  return (pearson_matrix(real, names) - pearson_matrix(gen, names)).cwiseAbs().sum();
}

/// Independently permutes the rows of every column.
inline Matrix shuffle_channels(const Matrix& values, std::uint64_t seed) {
  Matrix out = values;
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    Rng rng(derive_seed(seed, c));
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(values.rows()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    for (Eigen::Index r = 0; r < values.rows(); ++r) out(r, c) = values(idx[static_cast<std::size_t>(r)], c);
  }
  return out;
}

// ---- PCA -------------------------------------------------------------------

struct PcaProjection {
  Matrix real;              // n x 2
  Matrix gen;               // m x 2
  Matrix components;        // d x 2
  Vector explained_ratio;   // all components, descending
};

/// PCA fitted on the pooled rows; each component's sign is fixed so that its
/// largest-magnitude loading is positive.
inline PcaProjection pca_project(const Matrix& real, const Matrix& gen) {
  require_shape(real.cols() == gen.cols(), "PCA sets differ in dimension");
  require_shape(real.rows() + gen.rows() >= 3, "PCA needs at least three vectors");
  Matrix pooled(real.rows() + gen.rows(), real.cols());
  pooled << real, gen;
  const Eigen::RowVectorXd mean = pooled.colwise().mean();
  Matrix centered = pooled.rowwise() - mean;
  Matrix cov = centered.transpose() * centered / static_cast<double>(pooled.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  Vector vals = eig.eigenvalues().reverse().cwiseMax(0.0);
  Matrix vecs = eig.eigenvectors().rowwise().reverse();
  const double total = vals.sum();
  if (vals.size() < 2 || !(total > 0.0) || vals(1) <= 1e-12 * total) {
    throw DegenerateError("pooled feature vectors have rank < 2; PCA projection undefined");
  }
  PcaProjection p;
  p.components = vecs.leftCols(2);
  for (Eigen::Index k = 0; k < 2; ++k) {
    Eigen::Index at;
    p.components.col(k).cwiseAbs().maxCoeff(&at);
    if (p.components(at, k) < 0) p.components.col(k) *= -1.0;
  }
  p.explained_ratio = vals / total;
  p.real = (real.rowwise() - mean) * p.components;
  p.gen = (gen.rowwise() - mean) * p.components;
  return p;
}

// ---- report ----------------------------------------------------------------

struct FidelityConfig {
  std::size_t window = 5;
  std::size_t mmd_max_points = 1000;
  DiscriminatorConfig discriminator;
  std::uint64_t seed = 0;
};

struct FidelityReport {
  double discriminative = 0.0;
  double mmd2 = 0.0;
  double mmd_bandwidth = 0.0;
  double cross_correlation = 0.0;
  std::size_t real_windows = 0;
  std::size_t gen_windows = 0;
  FidelityConfig config;

  io::json to_json() const {
    return {{"discriminative_score", discriminative},
            {"mmd2", mmd2},
            {"mmd_bandwidth", mmd_bandwidth},
            {"mmd_bandwidth_policy", "median"},
            {"cross_correlation_score", cross_correlation},
            {"real_windows", real_windows},
            {"generated_windows", gen_windows},
            {"window", config.window},
            {"mmd_max_points", config.mmd_max_points},
            {"discriminator", config.discriminator.to_json()},
            {"seed", config.seed}};
  }
};

/// All three metrics on the first N channels of `real` and `gen`.
inline FidelityReport fidelity_report(const TimeSeriesDataset& real, const TimeSeriesDataset& gen,
                                      const FidelityConfig& cfg) {
  const auto N = real.n_vars();
  require_shape(gen.n_vars() >= N, "generated data has fewer channels than the real data");
  FidelityReport r;
  r.config = cfg;
  Matrix fr = feature_windows(real, N, cfg.window), fg = feature_windows(gen, N, cfg.window);
  r.real_windows = static_cast<std::size_t>(fr.rows());
  r.gen_windows = static_cast<std::size_t>(fg.rows());
  auto dcfg = cfg.discriminator;
  dcfg.seed = derive_seed(cfg.seed, 1);
  r.discriminative = discriminative_score(fr, fg, N, dcfg);
  auto m = mmd_rbf(subsample_rows(fr, cfg.mmd_max_points, derive_seed(cfg.seed, 2)),
                   subsample_rows(fg, cfg.mmd_max_points, derive_seed(cfg.seed, 3)));
  r.mmd2 = m.mmd2;
  r.mmd_bandwidth = m.bandwidth;
  r.cross_correlation = cross_correlation_score(real.values, gen.values.leftCols(static_cast<Eigen::Index>(N)), real.names);
  return r;
}

}  // namespace tsbench
