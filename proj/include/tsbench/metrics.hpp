#pragma once

// Ranking metrics over binary labels and real-valued scores.

#include "tsbench/common.hpp"

#include <algorithm>
#include <numeric>

namespace tsbench {

struct CurvePoint {
  double threshold;
  double tpr;
  double fpr;
  double precision;
  double recall;
};

namespace detail {

inline void check_labels(const std::vector<int>& labels, const std::vector<double>& scores) {
  require_shape(labels.size() == scores.size(), "labels and scores differ in length");
  std::size_t pos = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    require_shape(labels[k] == 0 || labels[k] == 1, "labels must be 0 or 1");
    if (!std::isfinite(scores[k])) throw NumericError("non-finite score");
    pos += static_cast<std::size_t>(labels[k]);
  }
  if (pos == 0 || pos == labels.size()) {
    throw MetricUndefined("AUROC/AUPRC undefined: labels are all " + std::string(pos == 0 ? "negative" : "positive"));
  }
}

/// Indices sorted by descending score.
inline std::vector<std::size_t> by_score_desc(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace detail

/// Mann-Whitney AUROC with midranks for ties.
inline double auroc(const std::vector<int>& labels, const std::vector<double>& scores) {
  detail::check_labels(labels, scores);
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0, pos = 0.0;
  for (std::size_t a = 0; a < idx.size();) {
    std::size_t b = a;
    while (b < idx.size() && scores[idx[b]] == scores[idx[a]]) ++b;
    const double mid = 0.5 * static_cast<double>(a + 1 + b);  // mean of ranks a+1..b
    for (std::size_t k = a; k < b; ++k) {
      if (labels[idx[k]]) {
        rank_sum += mid;
        pos += 1.0;
      }
    }
    a = b;
  }
  const double neg = static_cast<double>(labels.size()) - pos;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

/// Operating points at every distinct score threshold (predict 1 iff score >=
/// threshold), from the highest threshold down.
inline std::vector<CurvePoint> curve_points(const std::vector<int>& labels, const std::vector<double>& scores) {
  detail::check_labels(labels, scores);
  const auto idx = detail::by_score_desc(scores);
  const double P = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double N = static_cast<double>(labels.size()) - P;
  std::vector<CurvePoint> out;
  double tp = 0, fp = 0;
  for (std::size_t a = 0; a < idx.size();) {
    std::size_t b = a;
    while (b < idx.size() && scores[idx[b]] == scores[idx[a]]) {
      (labels[idx[b]] ? tp : fp) += 1.0;
      ++b;
    }
    out.push_back({scores[idx[a]], tp / P, fp / N, tp / (tp + fp), tp / P});
    a = b;
  }
  return out;
}

/// Step-wise average precision: sum over thresholds of (R_k - R_{k-1}) P_k.
inline double auprc(const std::vector<int>& labels, const std::vector<double>& scores) {
  double area = 0.0, prev_recall = 0.0;
  for (const auto& p : curve_points(labels, scores)) {
    area += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return area;
}

}  // namespace tsbench
