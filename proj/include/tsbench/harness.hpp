#pragma once

// Scoring of candidate causal graphs against a benchmark's HCG, plus two
// simple lagged-dependence baselines that exercise the scoring loop.

#include "tsbench/data.hpp"
#include "tsbench/io.hpp"
#include "tsbench/metrics.hpp"

#include <Eigen/Cholesky>

namespace tsbench {

struct CandidateGraph {
  Matrix scores;  // N x N, entry (j, i) = confidence in j -> i
  std::string method;
  bool ridge_fallback = false;
};

struct ScoreReport {
  double auroc = 0.0;
  double auprc = 0.0;
  std::vector<CurvePoint> points;
  Matrix mask;  // 1 where the entry was scored
  bool exclude_diagonal = false;
  std::string method;

  io::json to_json() const {
    io::json pts = io::json::array();
    for (const auto& p : points) {
      pts.push_back({{"threshold", p.threshold},
                     {"tpr", p.tpr},
                     {"fpr", p.fpr},
                     {"precision", p.precision},
                     {"recall", p.recall}});
    }
    io::json m = io::json::array();
    for (Eigen::Index r = 0; r < mask.rows(); ++r) {
      std::vector<int> row;
      for (Eigen::Index c = 0; c < mask.cols(); ++c) row.push_back(mask(r, c) != 0.0);
      m.push_back(row);
    }
    return {{"method", method},  {"auroc", auroc}, {"auprc", auprc}, {"exclude_diagonal", exclude_diagonal},
            {"curve", pts},      {"mask", m}};
  }
};

/// AUROC/AUPRC of `candidate` against the binary graph `h`, both N x N.
inline ScoreReport evaluate(const Matrix& candidate, const Matrix& h, bool exclude_diagonal = false,
                            const std::string& method = "candidate") {
  require_shape(h.rows() == h.cols(), "ground-truth graph must be square");
  require_shape(candidate.rows() == h.rows() && candidate.cols() == h.cols(),
                "candidate is " + std::to_string(candidate.rows()) + "x" + std::to_string(candidate.cols()) +
                    " but the benchmark has " + std::to_string(h.rows()) + " variables");
  if (!all_finite(candidate)) throw NumericError("candidate graph has non-finite entries");
  ScoreReport r;
  r.method = method;
  r.exclude_diagonal = exclude_diagonal;
  r.mask = Matrix::Ones(h.rows(), h.cols());
  std::vector<int> labels;
  std::vector<double> scores;
  for (Eigen::Index j = 0; j < h.rows(); ++j) {
    for (Eigen::Index i = 0; i < h.cols(); ++i) {
      if (exclude_diagonal && i == j) {
        r.mask(j, i) = 0.0;
        continue;
      }
      require_shape(h(j, i) == 0.0 || h(j, i) == 1.0, "ground-truth graph must be binary");
      labels.push_back(h(j, i) != 0.0);
      scores.push_back(candidate(j, i));
    }
  }
  r.auroc = auroc(labels, scores);
  r.points = curve_points(labels, scores);
  r.auprc = auprc(labels, scores);
  return r;
}

// ---- baselines -------------------------------------------------------------

struct BaselineOptions {
  std::size_t max_lag = 2;
  std::size_t n_real = 0;          // leading channels scored; 0 means all
  bool include_residual = false;   // condition on channels beyond n_real
};

namespace detail {

inline std::vector<IndexRange> sample_ranges(const TimeSeriesDataset& ds) {
  if (ds.sample_boundaries.empty()) return {{0, ds.length()}};
  return ds.sample_boundaries;
}

/// Per-sample demeaned copy of the first `channels` columns.
inline Matrix demeaned(const TimeSeriesDataset& ds, Eigen::Index channels) {
  Matrix v = ds.values.leftCols(channels);
  for (const auto& r : sample_ranges(ds)) {
    auto block = v.middleRows(static_cast<Eigen::Index>(r.begin), static_cast<Eigen::Index>(r.size()));
    block.rowwise() -= block.colwise().mean();
  }
  return v;
}

inline Eigen::Index resolve_real(const TimeSeriesDataset& ds, const BaselineOptions& opt) {
  const auto total = static_cast<Eigen::Index>(ds.n_vars());
  const auto n = opt.n_real == 0 ? total : static_cast<Eigen::Index>(opt.n_real);
  require_shape(n >= 1 && n <= total, "scored channel count exceeds dataset width");
  require(opt.max_lag >= 1, "max_lag must be >= 1");
  if (ds.has_missing()) throw UsageError("baselines need complete data; impute first");
  return n;
}

}  // namespace detail

/// Conditional linear Granger scores log(RSS_restricted / RSS_unrestricted).
/// The unrestricted model of channel i regresses on lags 1..max_lag of every
/// visible channel; the restricted one drops the lags of j.
inline CandidateGraph baseline_granger(const TimeSeriesDataset& ds, const BaselineOptions& opt = {}) {
  const auto N = detail::resolve_real(ds, opt);
  const auto C = opt.include_residual ? static_cast<Eigen::Index>(ds.n_vars()) : N;
  const auto L = static_cast<Eigen::Index>(opt.max_lag);
  const Matrix v = detail::demeaned(ds, C);

  std::size_t rows = 0;
  for (const auto& r : detail::sample_ranges(ds)) rows += r.size() > opt.max_lag ? r.size() - opt.max_lag : 0;
  require_shape(rows > static_cast<std::size_t>(C * L), "too few rows for the Granger regression");

  // Design columns ordered (lag l, channel c) -> l * C + c.
  Matrix X(static_cast<Eigen::Index>(rows), C * L);
  Matrix Y(static_cast<Eigen::Index>(rows), N);
  Eigen::Index row = 0;
  for (const auto& r : detail::sample_ranges(ds)) {
    for (std::size_t t = r.begin + opt.max_lag; t < r.end; ++t, ++row) {
      for (Eigen::Index l = 0; l < L; ++l) X.row(row).segment(l * C, C) = v.row(static_cast<Eigen::Index>(t) - l - 1);
      Y.row(row) = v.row(static_cast<Eigen::Index>(t)).head(N);
    }
  }
  const Matrix G = X.transpose() * X;
  const Matrix XY = X.transpose() * Y;

  CandidateGraph out{Matrix::Zero(N, N), "granger", false};
  auto rss = [&](const std::vector<Eigen::Index>& cols, Eigen::Index i) {
    const auto k = static_cast<Eigen::Index>(cols.size());
    Matrix g(k, k);
    Vector b(k);
    for (Eigen::Index a = 0; a < k; ++a) {
      b(a) = XY(cols[a], i);
      for (Eigen::Index c = 0; c < k; ++c) g(a, c) = G(cols[a], cols[c]);
    }
    Eigen::LDLT<Matrix> ldlt(g);
    const double scale = std::max(g.diagonal().maxCoeff(), 1e-300);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-12 * scale) {
      out.ridge_fallback = true;
      ldlt.compute(g + 1e-6 * Matrix::Identity(k, k));
    }
    const Vector w = ldlt.solve(b);
    return std::max((Y.col(i) - X(Eigen::all, cols) * w).squaredNorm(), 0.0);
  };

  std::vector<Eigen::Index> all(static_cast<std::size_t>(C * L));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  for (Eigen::Index i = 0; i < N; ++i) {
    const double full = rss(all, i);
    for (Eigen::Index j = 0; j < N; ++j) {
      std::vector<Eigen::Index> keep;
      for (auto c : all)
        if (c % C != j) keep.push_back(c);
      const double restricted = rss(keep, i);
      out.scores(j, i) = restricted <= 0.0 ? 0.0 : std::log(restricted / std::max(full, 1e-300));
    }
  }
  if (out.ridge_fallback) warn("granger: singular design, used ridge 1e-6");
  return out;
}

/// Max over lags 1..max_lag of |corr(x_j[t - l], x_i[t])|, pairs taken
/// within samples after per-sample demeaning.
inline CandidateGraph baseline_crosscorr(const TimeSeriesDataset& ds, const BaselineOptions& opt = {}) {
  const auto N = detail::resolve_real(ds, opt);
  const Matrix v = detail::demeaned(ds, N);
  const auto ranges = detail::sample_ranges(ds);
  CandidateGraph out{Matrix::Zero(N, N), "crosscorr", false};
  for (std::size_t l = 1; l <= opt.max_lag; ++l) {
    std::size_t rows = 0;
    for (const auto& r : ranges) rows += r.size() > l ? r.size() - l : 0;
    require_shape(rows >= 2, "too few rows for lag " + std::to_string(l));
    Matrix past(static_cast<Eigen::Index>(rows), N), now(static_cast<Eigen::Index>(rows), N);
    Eigen::Index row = 0;
    for (const auto& r : ranges) {
      if (r.size() <= l) continue;
      const auto n = static_cast<Eigen::Index>(r.size() - l);
      past.middleRows(row, n) = v.middleRows(static_cast<Eigen::Index>(r.begin), n);
      now.middleRows(row, n) = v.middleRows(static_cast<Eigen::Index>(r.begin + l), n);
      row += n;
    }
    past.rowwise() -= past.colwise().mean();
    now.rowwise() -= now.colwise().mean();
    const Vector sp = past.colwise().norm(), sn = now.colwise().norm();
    for (Eigen::Index c = 0; c < N; ++c) {
      if (sp(c) <= 0.0 || sn(c) <= 0.0) {
        const auto name = static_cast<std::size_t>(c) < ds.names.size() ? ds.names[static_cast<std::size_t>(c)]
                                                                           : std::to_string(c);
        throw DegenerateError("channel '" + name + "' is constant; correlation undefined");
      }
    }
    const Matrix corr = (past.transpose() * now).array() / (sp * sn.transpose()).array();
    out.scores = out.scores.cwiseMax(corr.cwiseAbs());
  }
  return out;
}

}  // namespace tsbench
