#pragma once

// Benchmark synthesis. The fitted model is split into a causal term (inputs
// masked by H) and a residual term (full minus causal); generation rolls
// out
//
//   x_t = causal(x_{t-tau:t-1}) + xr_{t-1} + eta_t
//
// where xr_{t-1} is the residual of the window ending at row t-1, stored at
// that row of the residual channels. Everything runs in normalized space.

#include "tsbench/cdnn.hpp"
#include "tsbench/flow.hpp"
#include "tsbench/io.hpp"

#include <cstdio>

namespace tsbench {

/// [[H, J], [I, 0]] over (x_1..x_N, xr_1..xr_N), entry (j, i) meaning j -> i.
inline AdjacencyMask build_acg(const AdjacencyMask& h) {
  validate_binary(h, h.rows(), "HCG");
  const auto N = h.rows();
  AdjacencyMask a = AdjacencyMask::Zero(2 * N, 2 * N);
  a.topLeftCorner(N, N) = h;
  a.topRightCorner(N, N).setOnes();
  a.bottomLeftCorner(N, N).setIdentity();
  return a;
}

/// What the generator needs from a fitted model: forward(inputs, mask) over
/// flattened time-major windows, returning N x B predictions.
struct Predictor {
  std::size_t n_vars = 0;
  std::size_t window = 0;
  std::function<Matrix(const Matrix&, const AdjacencyMask&)> forward;
};

inline Predictor predictor(const CdnnModel& model) {
  return {model.n_vars(), model.window(),
          [&model](const Matrix& x, const AdjacencyMask& m) { return model.forward(x, m); }};
}

struct SplitTerms {
  Matrix causal;    // N x B
  Matrix residual;  // N x B
};

/// Causal term = forward with mask H; residual = full-history forward - causal.
inline SplitTerms split_step(const Predictor& model, const AdjacencyMask& h, const Matrix& inputs) {
  SplitTerms t;
  t.causal = model.forward(inputs, h);
  t.residual = model.forward(inputs, full_mask(h.rows())) - t.causal;
  return t;
}

inline SplitTerms split_step(const CdnnModel& model, const AdjacencyMask& h, const Matrix& inputs) {
  return split_step(predictor(model), h, inputs);
}

enum class Variant { full, gaussian_noise, no_noise, fit_masked, hcg_only };

inline const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::full, Variant::gaussian_noise, Variant::no_noise,
                                      Variant::fit_masked, Variant::hcg_only};
  return v;
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::gaussian_noise: return "gaussian_noise";
    case Variant::no_noise: return "no_noise";
    case Variant::fit_masked: return "fit_masked";
    case Variant::hcg_only: return "hcg_only";
  }
  return "full";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : all_variants())
    if (to_string(v) == s) return v;
  throw UsageError("unknown variant '" + s + "' (full, gaussian_noise, no_noise, fit_masked, hcg_only)");
}

/// Variants without a residual term emit only the N series channels.
inline bool has_residual_channels(Variant v) { return v != Variant::fit_masked && v != Variant::hcg_only; }

struct GeneratorConfig {
  std::size_t samples = 500;
  std::size_t length = 40;
  std::uint64_t seed = 0;
};

struct GeneratedBenchmark {
  std::vector<Matrix> samples;  // each length x C, C = 2N or N
  AdjacencyMask acg;
  AdjacencyMask hcg;
  std::vector<std::string> names;  // the N series names
  std::vector<std::size_t> initial_rows;
  Variant variant = Variant::full;
  io::json provenance = io::json::object();

  std::size_t n_vars() const { return names.size(); }
  bool residual_channels() const { return !samples.empty() && samples.front().cols() == 2 * static_cast<Eigen::Index>(n_vars()); }

  std::vector<std::string> channel_names() const {
    std::vector<std::string> out;
    const bool r = residual_channels();
    for (std::size_t i = 0; i < n_vars(); ++i) out.push_back("x_" + std::to_string(i + 1));
    if (r)
      for (std::size_t i = 0; i < n_vars(); ++i) out.push_back("xr_" + std::to_string(i + 1));
    return out;
  }

  /// Series channels of every sample, as a multi-sample dataset.
  TimeSeriesDataset series_dataset(bool include_residual = false) const {
    TimeSeriesDataset ds;
    const auto N = static_cast<Eigen::Index>(n_vars());
    const auto C = include_residual && residual_channels() ? 2 * N : N;
    std::size_t rows = 0;
    for (const auto& s : samples) rows += static_cast<std::size_t>(s.rows());
    ds.values.resize(static_cast<Eigen::Index>(rows), C);
    std::size_t at = 0;
    for (const auto& s : samples) {
      ds.values.middleRows(static_cast<Eigen::Index>(at), s.rows()) = s.leftCols(C);
      ds.sample_boundaries.push_back({at, at + static_cast<std::size_t>(s.rows())});
      at += static_cast<std::size_t>(s.rows());
    }
    auto all = channel_names();
    ds.names.assign(all.begin(), all.begin() + C);
    return ds;
  }
};

/// Start rows of every real window lying inside one sample range.
inline std::vector<std::size_t> initial_window_candidates(const std::vector<IndexRange>& ranges, std::size_t window) {
  std::vector<std::size_t> out;
  for (const auto& r : ranges)
    if (r.size() >= window)
      for (std::size_t t = r.begin; t + window <= r.end; ++t) out.push_back(t);
  return out;
}

/// Per-sample initial windows: a shuffled pass over all candidates, then
/// uniform draws with replacement once they run out.
inline std::vector<std::size_t> draw_initial_rows(const std::vector<IndexRange>& ranges, std::size_t window,
                                                  std::size_t count, std::uint64_t seed) {
  auto cand = initial_window_candidates(ranges, window);
  if (cand.empty()) {
    throw ShapeError("real data has no stretch of " + std::to_string(window) + " rows inside one sample");
  }
  Rng rng(derive_seed(seed, 0x1417));
  std::shuffle(cand.begin(), cand.end(), rng);
  std::vector<std::size_t> out;
  std::uniform_int_distribution<std::size_t> pick(0, cand.size() - 1);
  for (std::size_t s = 0; s < count; ++s) out.push_back(s < cand.size() ? cand[s] : cand[pick(rng)]);
  return out;
}

/// Core rollout shared by all variants. `noise` may be null (no noise term);
/// with `residual_term` false the residual is neither added nor emitted.
inline GeneratedBenchmark generate(const Predictor& model, const NoiseFlowSet* noise, const AdjacencyMask& h,
                                   const TimeSeriesDataset& real, const GeneratorConfig& cfg, bool residual_term) {
  require(cfg.samples >= 1 && cfg.length >= 1, "generation needs samples >= 1 and length >= 1");
  const auto N = static_cast<Eigen::Index>(model.n_vars);
  require_shape(real.values.cols() == N, "real data width does not match the model");
  validate_binary(h, N, "HCG");
  if (noise) require_shape(noise->size() == model.n_vars, "one noise flow per variable is required");
  const auto tau = model.window;
  const auto S = static_cast<Eigen::Index>(cfg.samples);
  const auto L = static_cast<Eigen::Index>(cfg.length);

  auto ranges = real.sample_boundaries;
  if (ranges.empty()) ranges = {{0, real.length()}};
  GeneratedBenchmark out;
  out.initial_rows = draw_initial_rows(ranges, tau, cfg.samples, cfg.seed);
  out.hcg = h;
  out.acg = residual_term ? build_acg(h) : h;
  out.names = real.names;
  out.samples.assign(cfg.samples, Matrix::Zero(L, residual_term ? 2 * N : N));

  Matrix x(static_cast<Eigen::Index>(tau) * N, S);
  std::vector<Rng> rngs;
  for (Eigen::Index s = 0; s < S; ++s) {
    flatten_window(real.values, out.initial_rows[static_cast<std::size_t>(s)], tau, x.col(s));
    rngs.emplace_back(derive_seed(cfg.seed, 0x6E, s));
  }
  for (Eigen::Index t = 0; t <= L; ++t) {
    SplitTerms terms;
    if (residual_term) {
      terms = split_step(model, h, x);
      if (t > 0)
        for (Eigen::Index s = 0; s < S; ++s) out.samples[static_cast<std::size_t>(s)].block(t - 1, N, 1, N) = terms.residual.col(s).transpose();
    } else {
      if (t == L) break;
      terms.causal = model.forward(x, h);
    }
    if (t == L) break;
    Matrix next = terms.causal;
    if (residual_term) next += terms.residual;
    if (noise)
      for (Eigen::Index s = 0; s < S; ++s) next.col(s) += noise->draw(rngs[static_cast<std::size_t>(s)]);
    for (Eigen::Index s = 0; s < S; ++s) out.samples[static_cast<std::size_t>(s)].block(t, 0, 1, N) = next.col(s).transpose();
    slide_windows(x, next);
  }
  for (const auto& m : out.samples)
    if (!m.allFinite()) throw NumericError("generation produced non-finite values");
  return out;
}

inline GeneratedBenchmark generate(const CdnnModel& model, const NoiseFlowSet* noise, const AdjacencyMask& h,
                                   const TimeSeriesDataset& real, const GeneratorConfig& cfg, bool residual_term) {
  return generate(predictor(model), noise, h, real, cfg, residual_term);
}

inline GeneratedBenchmark generate_dataset(const CdnnModel& model, const NoiseFlowSet& flows, const AdjacencyMask& h,
                                           const TimeSeriesDataset& real, const GeneratorConfig& cfg) {
  auto b = generate(model, &flows, h, real, cfg, true);
  b.variant = Variant::full;
  return b;
}

inline GeneratedBenchmark generate_hcg_only(const CdnnModel& model, const NoiseFlowSet& flows, const AdjacencyMask& h,
                                            const TimeSeriesDataset& real, const GeneratorConfig& cfg) {
  auto b = generate(model, &flows, h, real, cfg, false);
  b.variant = Variant::hcg_only;
  return b;
}

/// Affine flows with the per-variable mean and std of `resid`.
inline NoiseFlowSet moment_matched_gaussian(const Matrix& resid) {
  NoiseFlowSet set;
  for (Eigen::Index i = 0; i < resid.cols(); ++i) {
    const double m = resid.col(i).mean();
    const double sd = std::sqrt((resid.col(i).array() - m).square().mean());
    if (!(sd > 0.0)) throw DegenerateError("residuals of variable " + std::to_string(i + 1) + " are constant");
    auto f = Flow1D::affine(sd, m);
    f.gaussian_fallback = true;
    set.flows.push_back(std::move(f));
  }
  return set;
}

/// Variant grid entry. `gaussian` is the moment-matched set for
/// gaussian_noise; `masked_model`/`masked_flows` are the H-masked refit for
/// fit_masked. Unused arguments may be null.
inline GeneratedBenchmark generate_variant(Variant v, const CdnnModel& model, const NoiseFlowSet& flows,
                                           const AdjacencyMask& h, const TimeSeriesDataset& real,
                                           const GeneratorConfig& cfg, const NoiseFlowSet* gaussian = nullptr,
                                           const CdnnModel* masked_model = nullptr,
                                           const NoiseFlowSet* masked_flows = nullptr) {
  GeneratedBenchmark b;
  switch (v) {
    case Variant::full: b = generate(model, &flows, h, real, cfg, true); break;
    case Variant::gaussian_noise:
      require(gaussian != nullptr, "gaussian_noise variant needs moment-matched noise");
      b = generate(model, gaussian, h, real, cfg, true);
      break;
    case Variant::no_noise: b = generate(model, nullptr, h, real, cfg, true); break;
    case Variant::hcg_only: b = generate(model, &flows, h, real, cfg, false); break;
    case Variant::fit_masked:
      require(masked_model != nullptr && masked_flows != nullptr, "fit_masked variant needs the masked refit");
      b = generate(*masked_model, masked_flows, h, real, cfg, false);
      break;
  }
  b.variant = v;
  return b;
}

/// Undo normalization: series channels get mean and std, residual channels
/// (an additive term) only the std.
inline GeneratedBenchmark denormalize(GeneratedBenchmark b, const NormStats& stats) {
  const auto N = static_cast<Eigen::Index>(b.n_vars());
  for (auto& m : b.samples) {
    m.leftCols(N) = denormalize_values(m.leftCols(N), stats);
    if (m.cols() == 2 * N) m.rightCols(N) = m.rightCols(N) * stats.std.asDiagonal();
  }
  return b;
}

// ---- bundle IO ----------------------------------------------------------

inline std::string sample_file_name(std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04zu.csv", s);
  return buf;
}

inline void write_bundle(const io::fs::path& dir, const GeneratedBenchmark& b) {
  io::fs::create_directories(dir);
  const auto header = b.channel_names();
  for (std::size_t s = 0; s < b.samples.size(); ++s) io::write_csv(dir / sample_file_name(s), header, b.samples[s]);
  std::vector<std::string> acg_names = header;
  io::write_labeled_matrix(dir / "acg.csv", acg_names, b.acg.cast<double>());
  io::write_labeled_matrix(dir / "hcg.csv", b.names, b.hcg.cast<double>());
  io::json manifest = b.provenance;
  manifest["variant"] = to_string(b.variant);
  manifest["samples"] = b.samples.size();
  manifest["length"] = b.samples.empty() ? 0 : b.samples.front().rows();
  manifest["n_vars"] = b.n_vars();
  manifest["names"] = b.names;
  manifest["residual_channels"] = b.residual_channels();
  manifest["initial_rows"] = b.initial_rows;
  io::write_json(dir / "manifest.json", manifest);
}

inline AdjacencyMask to_mask(const Matrix& m, const std::string& what) {
  if ((m.array() != 0.0 && m.array() != 1.0).any()) throw ShapeError(what + " must be binary");
  return m.cast<int>();
}

inline GeneratedBenchmark read_bundle(const io::fs::path& dir) {
  if (!io::fs::exists(dir / "manifest.json")) throw UsageError("no benchmark bundle at " + dir.string());
  auto manifest = io::read_json(dir / "manifest.json");
  GeneratedBenchmark b;
  b.variant = parse_variant(manifest.at("variant").get<std::string>());
  b.names = manifest.at("names").get<std::vector<std::string>>();
  b.initial_rows = manifest.at("initial_rows").get<std::vector<std::size_t>>();
  b.provenance = manifest;
  const auto S = manifest.at("samples").get<std::size_t>();
  const auto C = (manifest.at("residual_channels").get<bool>() ? 2 : 1) * b.names.size();
  for (std::size_t s = 0; s < S; ++s) {
    auto table = io::read_csv(dir / sample_file_name(s));
    if (table.values.cols() != static_cast<Eigen::Index>(C)) throw ShapeError(sample_file_name(s) + ": wrong channel count");
    if (!table.values.allFinite()) throw ParseError(sample_file_name(s) + ": missing or non-finite value");
    b.samples.push_back(std::move(table.values));
  }
  b.hcg = to_mask(io::read_labeled_matrix(dir / "hcg.csv").values, "hcg.csv");
  b.acg = to_mask(io::read_labeled_matrix(dir / "acg.csv").values, "acg.csv");
  return b;
}

}  // namespace tsbench
