#pragma once

// Dataset loading, cleaning, normalization, splitting and windowing.
//
// On disk a dataset is a CSV of values (header = variable names) plus an
// optional JSON sidecar with "names", "sample_boundaries", "norm_mean" and
// "norm_std".

#include "tsbench/common.hpp"
#include "tsbench/io.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

namespace tsbench {

struct NormStats {
  Vector mean;
  Vector std;
};

struct TimeSeriesDataset {
  Matrix values;  // T x N
  std::vector<std::string> names;
  std::vector<IndexRange> sample_boundaries;
  std::optional<NormStats> norm;
  // True where the source cell was empty. Empty matrix once imputed.
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> missing;

  std::size_t length() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t n_vars() const { return static_cast<std::size_t>(values.cols()); }
  bool has_missing() const { return missing.size() > 0 && missing.any(); }

  void validate() const {
    require_shape(values.rows() >= 1, "dataset must have at least one row");
    require_shape(values.cols() >= 2, "dataset must have at least two variables");
    require_shape(names.size() == n_vars(), "names/columns mismatch");
    std::size_t expect = 0;
    for (const auto& r : sample_boundaries) {
      require_shape(r.begin == expect && r.end > r.begin,
                    "sample_boundaries must partition [0, T) in order");
      expect = r.end;
    }
    require_shape(expect == length(), "sample_boundaries must cover [0, T)");
    if (!has_missing() && !values.allFinite()) {
      throw NumericError("dataset contains non-finite values");
    }
  }
};

struct LoadOptions {
  // Sidecar JSON; when unset, "<csv stem>.json" next to the CSV is used if present.
  std::optional<io::fs::path> sidecar;
};

inline void apply_sidecar(TimeSeriesDataset& ds, const io::json& j) {
  if (j.contains("names")) {
    auto names = j.at("names").get<std::vector<std::string>>();
    require_shape(names.size() == ds.n_vars(), "sidecar names do not match CSV columns");
    ds.names = std::move(names);
  }
  if (j.contains("sample_boundaries")) {
    ds.sample_boundaries.clear();
    for (const auto& r : j.at("sample_boundaries")) {
      ds.sample_boundaries.push_back({r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()});
    }
  }
  if (j.contains("norm_mean") && j.contains("norm_std")) {
    auto m = j.at("norm_mean").get<std::vector<double>>();
    auto s = j.at("norm_std").get<std::vector<double>>();
    require_shape(m.size() == ds.n_vars() && s.size() == ds.n_vars(),
                  "sidecar norm stats do not match CSV columns");
    ds.norm = NormStats{Eigen::Map<Vector>(m.data(), m.size()),
                        Eigen::Map<Vector>(s.data(), s.size())};
  }
}

inline TimeSeriesDataset load_csv(const io::fs::path& path, const LoadOptions& options = {}) {
  auto table = io::read_csv(path);
  if (table.header.size() < 2) {
    throw ShapeError(path.string() + ": need at least 2 columns, found " +
                     std::to_string(table.header.size()));
  }
  if (table.values.rows() < 1) throw ShapeError(path.string() + ": no data rows");
  TimeSeriesDataset ds;
  ds.values = std::move(table.values);
  ds.names = std::move(table.header);
  ds.missing = ds.values.array().isNaN();
  if (!ds.missing.any()) ds.missing.resize(0, 0);
  ds.sample_boundaries = {{0, ds.length()}};

  io::fs::path sidecar = options.sidecar ? *options.sidecar : io::fs::path(path).replace_extension(".json");
  if (options.sidecar || io::fs::exists(sidecar)) apply_sidecar(ds, io::read_json(sidecar));
  ds.validate();
  return ds;
}

inline io::json sidecar_json(const TimeSeriesDataset& ds) {
  io::json j;
  j["names"] = ds.names;
  io::json bounds = io::json::array();
  for (const auto& r : ds.sample_boundaries) bounds.push_back({r.begin, r.end});
  j["sample_boundaries"] = bounds;
  if (ds.norm) {
    j["norm_mean"] = std::vector<double>(ds.norm->mean.data(), ds.norm->mean.data() + ds.norm->mean.size());
    j["norm_std"] = std::vector<double>(ds.norm->std.data(), ds.norm->std.data() + ds.norm->std.size());
  }
  return j;
}

/// Writes `<path>` (values) and `<path stem>.json` (sidecar).
inline void save_dataset(const io::fs::path& path, const TimeSeriesDataset& ds) {
  io::write_csv(path, ds.names, ds.values);
  io::write_json(io::fs::path(path).replace_extension(".json"), sidecar_json(ds));
}

/// Fills each missing cell with the value at the temporally nearest observed
/// index of the same variable (earlier index wins ties). Search stays within
/// the cell's sample range when that range has any observation.
inline TimeSeriesDataset impute_nearest(TimeSeriesDataset ds) {
  if (!ds.has_missing()) {
    ds.missing.resize(0, 0);
    return ds;
  }
  const auto T = ds.length();
  for (std::size_t c = 0; c < ds.n_vars(); ++c) {
    if (ds.missing.col(c).all()) {
      throw DegenerateError("variable '" + ds.names[c] + "' is entirely missing; cannot impute");
    }
  }
  auto fill = [&](std::size_t c, std::size_t lo, std::size_t hi) {
    // prev[t] / next[t]: nearest observed index at or before / at or after t.
    constexpr auto none = static_cast<std::size_t>(-1);
    std::vector<std::size_t> prev(hi - lo, none), next(hi - lo, none);
    std::size_t last = none;
    for (std::size_t t = lo; t < hi; ++t) {
      if (!ds.missing(t, c)) last = t;
      prev[t - lo] = last;
    }
    last = none;
    for (std::size_t t = hi; t-- > lo;) {
      if (!ds.missing(t, c)) last = t;
      next[t - lo] = last;
    }
    for (std::size_t t = lo; t < hi; ++t) {
      if (!ds.missing(t, c) || !std::isnan(ds.values(t, c))) continue;
      auto p = prev[t - lo], n = next[t - lo];
      std::size_t src;
      if (p == none) src = n;
      else if (n == none) src = p;
      else src = (t - p <= n - t) ? p : n;
      ds.values(t, c) = ds.values(src, c);
    }
  };
  for (std::size_t c = 0; c < ds.n_vars(); ++c) {
    for (const auto& r : ds.sample_boundaries) {
      bool any_observed = false;
      for (std::size_t t = r.begin; t < r.end && !any_observed; ++t) any_observed = !ds.missing(t, c);
      if (any_observed) fill(c, r.begin, r.end);
    }
    // Ranges with no observation of this variable fall back to the whole series.
    for (std::size_t t = 0; t < T; ++t) {
      if (ds.missing(t, c) && std::isnan(ds.values(t, c))) {
        fill(c, 0, T);
        break;
      }
    }
  }
  ds.missing.resize(0, 0);
  return ds;
}

struct SplitSpec {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
  std::uint64_t seed = 0;

  void validate() const {
    require(train > 0 && val > 0 && test > 0, "split fractions must be positive");
    require(std::abs(train + val + test - 1.0) < 1e-9, "split fractions must sum to 1");
  }
};

struct SplitRanges {
  std::vector<IndexRange> train, val, test;
};

/// A single-sample dataset is cut chronologically. With several samples,
/// whole samples are shuffled (by seed) and assigned to splits by fraction,
/// so no window ever straddles two splits.
inline SplitRanges split_ranges(const TimeSeriesDataset& ds, const SplitSpec& spec) {
  spec.validate();
  SplitRanges out;
  const auto& samples = ds.sample_boundaries;
  if (samples.size() < 3) {
    for (const auto& r : samples) {
      const auto n = r.size();
      auto a = r.begin + static_cast<std::size_t>(std::llround(spec.train * n));
      auto b = a + static_cast<std::size_t>(std::llround(spec.val * n));
      b = std::min(b, r.end);
      if (a > r.begin) out.train.push_back({r.begin, a});
      if (b > a) out.val.push_back({a, b});
      if (r.end > b) out.test.push_back({b, r.end});
    }
    return out;
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = samples.size();
  auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.train * n)));
  auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(spec.val * n)));
  n_train = std::min(n_train, n - 2);
  n_val = std::min(n_val, n - n_train - 1);
  for (std::size_t k = 0; k < n; ++k) {
    auto& dst = k < n_train ? out.train : (k < n_train + n_val ? out.val : out.test);
    dst.push_back(samples[order[k]]);
  }
  for (auto* v : {&out.train, &out.val, &out.test}) {
    std::sort(v->begin(), v->end(), [](auto& x, auto& y) { return x.begin < y.begin; });
  }
  return out;
}

/// Standardizes every variable with mean/std computed over `stats_rows`
/// (all rows when empty). Rejects zero-variance variables.
inline TimeSeriesDataset normalize(TimeSeriesDataset ds, const std::vector<IndexRange>& stats_rows = {}) {
  if (ds.norm) throw UsageError("dataset is already normalized");
  if (ds.has_missing()) throw UsageError("impute missing values before normalizing");
  std::vector<IndexRange> rows = stats_rows.empty() ? std::vector<IndexRange>{{0, ds.length()}} : stats_rows;
  const auto N = ds.n_vars();
  Vector mean = Vector::Zero(N), sq = Vector::Zero(N);
  std::size_t count = 0;
  for (const auto& r : rows) {
    require_shape(r.end <= ds.length(), "stats range out of bounds");
    auto block = ds.values.middleRows(r.begin, r.size());
    mean += block.colwise().sum().transpose();
    count += r.size();
  }
  require_shape(count >= 2, "need at least two rows to compute normalization statistics");
  mean /= static_cast<double>(count);
  for (const auto& r : rows) {
    auto block = ds.values.middleRows(r.begin, r.size());
    sq += (block.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
  }
  Vector sd = (sq / static_cast<double>(count)).cwiseSqrt();
  for (std::size_t c = 0; c < N; ++c) {
    if (!(sd(c) > 1e-12 * std::max(1.0, std::abs(mean(c))))) {
      throw DegenerateError("variable '" + ds.names[c] + "' has zero variance");
    }
  }
  ds.values = (ds.values.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
  ds.norm = NormStats{mean, sd};
  return ds;
}

inline Matrix denormalize_values(const Matrix& values, const NormStats& stats) {
  require_shape(values.cols() == stats.mean.size(), "denormalize: column count mismatch");
  return (values.array().rowwise() * stats.std.transpose().array()).rowwise() +
         stats.mean.transpose().array();
}

inline TimeSeriesDataset denormalize(TimeSeriesDataset ds) {
  if (!ds.norm) throw UsageError("dataset has no normalization statistics");
  ds.values = denormalize_values(ds.values, *ds.norm);
  ds.norm.reset();
  return ds;
}

/// Lagged regressors and one-step targets.
///
/// `inputs` is (window * N) x W: column w holds window w flattened
/// time-major, i.e. row `s * N + i` is variable i at lag (window - s).
/// `targets` is N x W; `target_rows[w]` is the dataset row being predicted.
struct WindowBatch {
  std::size_t window = 0;
  std::size_t n_vars = 0;
  Matrix inputs;
  Matrix targets;
  std::vector<std::size_t> target_rows;

  std::size_t size() const { return target_rows.size(); }
};

inline void flatten_window(const Matrix& values, std::size_t first_row, std::size_t window,
                           Eigen::Ref<Vector> out) {
  const auto N = values.cols();
  for (std::size_t s = 0; s < window; ++s) {
    out.segment(static_cast<Eigen::Index>(s) * N, N) = values.row(first_row + s).transpose();
  }
}

/// Admissible target rows t: [t - window, t) and t lie in one range.
inline std::vector<std::size_t> window_targets(const std::vector<IndexRange>& ranges, std::size_t window,
                                               std::size_t horizon = 1) {
  require(window >= 1, "window must be >= 1");
  std::vector<std::size_t> out;
  for (const auto& r : ranges) {
    if (r.size() < window + horizon) continue;
    for (std::size_t t = r.begin + window; t + horizon <= r.end; ++t) out.push_back(t);
  }
  return out;
}

inline WindowBatch make_windows(const TimeSeriesDataset& ds, std::size_t window,
                                const std::vector<IndexRange>& ranges_in = {}) {
  require(window >= 1, "window must be >= 1");
  const auto& ranges = ranges_in.empty() ? ds.sample_boundaries : ranges_in;
  std::size_t skipped = 0;
  for (const auto& r : ranges) {
    if (r.size() < window + 1) {
      ++skipped;
      warn("sample [" + std::to_string(r.begin) + ", " + std::to_string(r.end) +
           ") shorter than window+1; skipped");
    }
  }
  if (skipped == ranges.size()) throw ShapeError("every sample is shorter than window+1");
  WindowBatch b;
  b.window = window;
  b.n_vars = ds.n_vars();
  b.target_rows = window_targets(ranges, window);
  const auto W = b.target_rows.size();
  b.inputs.resize(static_cast<Eigen::Index>(window * b.n_vars), W);
  b.targets.resize(b.n_vars, W);
  for (std::size_t w = 0; w < W; ++w) {
    const auto t = b.target_rows[w];
    flatten_window(ds.values, t - window, window, b.inputs.col(w));
    b.targets.col(w) = ds.values.row(t).transpose();
  }
  return b;
}

}  // namespace tsbench
