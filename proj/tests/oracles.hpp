#pragma once

// Brute-force reference implementations used as test oracles.

#include "tsbench/graph.hpp"

#include <algorithm>
#include <vector>

namespace tsbench::testing {

/// Fraction of (positive, negative) pairs ranked correctly, ties counting 1/2.
inline double pairwise_auroc(const std::vector<int>& y, const std::vector<double>& s) {
  double wins = 0, pairs = 0;
  for (std::size_t p = 0; p < y.size(); ++p) {
    if (!y[p]) continue;
    for (std::size_t n = 0; n < y.size(); ++n) {
      if (y[n]) continue;
      pairs += 1;
      wins += s[p] > s[n] ? 1.0 : (s[p] == s[n] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

/// Average precision: mean over positives of the precision obtained when
/// predicting everything scored at least as high as that positive.
inline double per_positive_ap(const std::vector<int>& y, const std::vector<double>& s) {
  double sum = 0, npos = 0;
  for (std::size_t p = 0; p < y.size(); ++p) {
    if (!y[p]) continue;
    npos += 1;
    double tp = 0, all = 0;
    for (std::size_t k = 0; k < y.size(); ++k) {
      if (s[k] >= s[p]) {
        all += 1;
        tp += y[k];
      }
    }
    sum += tp / all;
  }
  return sum / npos;
}

/// Direct expansion of the unbiased MMD^2 estimator, one kernel evaluation at a time.
inline double brute_force_mmd2(const Matrix& x, const Matrix& y, double h) {
  auto k = [&](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return std::exp(-(a - b).squaredNorm() / (2 * h * h));
  };
  const auto n = x.rows(), m = y.rows();
  double sxx = 0, sxy = 0, syy = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) sxx += k(x.row(i), x.row(j));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) sxy += k(x.row(i), y.row(j));
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (i != j) syy += k(y.row(i), y.row(j));
  return sxx / (n * (n - 1.0)) - 2 * sxy / (double(n) * m) + syy / (m * (m - 1.0));
}

inline double brute_force_median(const Matrix& p) {
  std::vector<double> d;
  for (Eigen::Index a = 0; a < p.rows(); ++a)
    for (Eigen::Index b = a + 1; b < p.rows(); ++b) d.push_back((p.row(a) - p.row(b)).norm());
  std::sort(d.begin(), d.end());
  const auto n = d.size();
  return n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
}

inline double factorial(int n) { return n <= 1 ? 1.0 : n * factorial(n - 1); }

/// Exact Shapley values by enumerating all 2^G coalitions. Row r of the input
/// belongs to group r % G.
inline Matrix exact_shapley(const BatchFunction& f, const Vector& x, const Vector& ref, int G) {
  auto value = [&](unsigned set) {
    Vector v = ref;
    for (Eigen::Index r = 0; r < x.size(); ++r)
      if (set & (1u << (r % G))) v(r) = x(r);
    return Vector(f(v).col(0));
  };
  const Eigen::Index O = f(Matrix(x)).rows();
  Matrix phi = Matrix::Zero(G, O);
  for (int j = 0; j < G; ++j) {
    for (unsigned s = 0; s < (1u << G); ++s) {
      if (s & (1u << j)) continue;
      const int size = __builtin_popcount(s);
      const double w = factorial(size) * factorial(G - size - 1) / factorial(G);
      phi.row(j) += w * (value(s | (1u << j)) - value(s)).transpose();
    }
  }
  return phi;
}

}  // namespace tsbench::testing
