#pragma once

// One-dimensional normalizing flows for the additive noise of each variable.
//
// Layers are parameterized in the normalizing direction g = T^-1 (noise ->
// base), so log-density and its gradients are closed form. Sampling applies
// T = g^-1 layer by layer; affine layers invert exactly, tanh layers by
// bisection. The default stack is affine, tanh, affine, tanh, affine.
//
//   affine: z = (x - m) * exp(-s)
//   tanh:   z = x + sum_k a_k tanh(b_k x + c_k),  b_k = exp(beta_k),
//           a_k = 0.99 tanh(alpha_k) / (K b_k)
//
// The tanh layer has slope 1 + sum_k a_k b_k sech^2(.) in (0.01, 1.99), so it
// is strictly increasing for every parameter value and optimization needs no
// projection step.

#include "tsbench/cdnn.hpp"
#include "tsbench/nn.hpp"

#include <algorithm>
#include <numbers>

namespace tsbench {

struct FlowConfig {
  std::size_t layers = 5;
  std::size_t hidden = 8;  // tanh units per nonlinear layer
  std::size_t iterations = 400;
  double lr = 1e-2;
  double holdout = 0.2;
  std::size_t min_samples = 100;
  std::uint64_t seed = 0;

  void validate() const {
    require(layers >= 1, "flow needs at least one layer");
    require(hidden >= 1, "flow hidden width must be >= 1");
    require(holdout > 0.0 && holdout < 1.0, "flow holdout fraction must be in (0, 1)");
    require(lr > 0.0, "flow learning rate must be positive");
  }
};

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

class Flow1D {
 public:
  static constexpr double kSlopeCap = 0.99;

  Flow1D() : Flow1D(1, 1) {}

  /// Identity flow with the given layer layout (even positions affine).
  Flow1D(std::size_t layers, std::size_t hidden, std::uint64_t seed = 0) : store_(seed), hidden_(hidden) {
    Rng rng(seed);
    for (std::size_t l = 0; l < layers; ++l) {
      if (is_affine(l)) {
        store_.add(name(l), 2, 1);
      } else {
        auto& p = store_.add(name(l), static_cast<Eigen::Index>(hidden), 3);
        // alpha = 0 keeps the layer an exact identity at start; spread the
        // kinks so the units are not symmetric.
        for (Eigen::Index k = 0; k < p.value.rows(); ++k) {
          p.value(k, 1) = 0.5 * (uniform01(rng) - 0.5);
          p.value(k, 2) = 4.0 * (uniform01(rng) - 0.5);
        }
      }
    }
  }

  Flow1D(Flow1D&&) = default;
  Flow1D& operator=(Flow1D&&) = default;

  Flow1D clone() const {
    Flow1D out(n_layers(), hidden_, store_.seed());
    for (auto& [n, p] : store_.items()) out.store_.at(n).value = p.value;
    out.gaussian_fallback = gaussian_fallback;
    out.heldout_nll = heldout_nll;
    return out;
  }

  static Flow1D affine(double scale, double shift) {
    require(scale > 0.0, "affine flow scale must be positive");
    Flow1D f(1, 1);
    f.set_affine(0, scale, shift);
    return f;
  }

  std::size_t n_layers() const {
    std::size_t n = 0;
    while (store_.contains(name(n))) ++n;
    return n;
  }
  std::size_t hidden() const { return hidden_; }
  static bool is_affine(std::size_t l) { return l % 2 == 0; }

  /// Sets layer l so that T maps u -> scale * u + shift on that layer.
  void set_affine(std::size_t l, double scale, double shift) {
    require(is_affine(l), "layer " + std::to_string(l) + " is not affine");
    auto& v = store_.at(name(l)).value;
    v(0, 0) = std::log(scale);
    v(1, 0) = shift;
  }

  /// T^-1: noise value -> base value.
  double inverse(double x) const {
    for (std::size_t l = 0, L = n_layers(); l < L; ++l) x = layer_forward(l, x);
    return x;
  }

  /// d T^-1 / d x.
  double inverse_derivative(double x) const {
    double d = 1.0;
    for (std::size_t l = 0, L = n_layers(); l < L; ++l) {
      d *= layer_slope(l, x);
      x = layer_forward(l, x);
    }
    return d;
  }

  /// T: base value -> noise value.
  double forward(double u) const {
    for (std::size_t l = n_layers(); l-- > 0;) u = layer_inverse(l, u);
    return u;
  }

  double log_density(double x) const {
    double logdet = 0.0;
    for (std::size_t l = 0, L = n_layers(); l < L; ++l) {
      logdet += std::log(layer_slope(l, x));
      x = layer_forward(l, x);
    }
    return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi) + logdet;
  }

  double cdf(double x) const { return standard_normal_cdf(inverse(x)); }

  std::vector<double> sample(std::size_t count, std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<double> out(count);
    for (auto& v : out) v = forward(standard_normal(rng));
    return out;
  }

  /// Mean negative log-likelihood over `x`; when `grad` is set, accumulates its
  /// gradient into the parameter store.
  double nll(const Vector& x, bool grad = false) {
    const auto L = n_layers();
    const double n = static_cast<double>(x.size());
    std::vector<Eigen::ArrayXd> acts{x.array()};
    Eigen::ArrayXd logdet = Eigen::ArrayXd::Zero(x.size());
    for (std::size_t l = 0; l < L; ++l) {
      Eigen::ArrayXd slope(x.size()), z(x.size());
      for (Eigen::Index t = 0; t < x.size(); ++t) {
        slope(t) = layer_slope(l, acts.back()(t));
        z(t) = layer_forward(l, acts.back()(t));
      }
      logdet += slope.log();
      acts.push_back(std::move(z));
    }
    const Eigen::ArrayXd& u = acts.back();
    const double value = (0.5 * u.square() - logdet).mean() + 0.5 * std::log(2.0 * std::numbers::pi);
    if (!grad) return value;

    Eigen::ArrayXd gz = u / n;  // d loss / d z at the top
    for (std::size_t l = L; l-- > 0;) {
      const Eigen::ArrayXd& xin = acts[l];
      auto& p = store_.at(name(l));
      if (is_affine(l)) {
        const double inv = std::exp(-p.value(0, 0));
        p.grad(0, 0) += -(gz * acts[l + 1]).sum() + 1.0;  // -log slope = s per sample, averaged
        p.grad(1, 0) += -(gz * inv).sum();
        gz *= inv;
        continue;
      }
      const auto K = p.value.rows();
      Eigen::ArrayXd gx = gz;
      Eigen::ArrayXd slope = Eigen::ArrayXd::Ones(xin.size());
      Eigen::ArrayXd dslope_dx = Eigen::ArrayXd::Zero(xin.size());
      std::vector<Eigen::ArrayXd> ts;
      for (Eigen::Index k = 0; k < K; ++k) {
        const double w = unit_weight(p.value(k, 0));
        const double b = std::exp(p.value(k, 1));
        Eigen::ArrayXd t = (b * xin + p.value(k, 2)).tanh();
        Eigen::ArrayXd sech2 = 1.0 - t.square();
        slope += w * sech2;
        dslope_dx += w * (-2.0 * t) * sech2 * b;
        ts.push_back(std::move(t));
      }
      // Per-sample weight of the -log slope term.
      const Eigen::ArrayXd gs = -1.0 / (slope * n);
      for (Eigen::Index k = 0; k < K; ++k) {
        const double alpha = p.value(k, 0);
        const double w = unit_weight(alpha);
        const double dw = kSlopeCap * (1.0 - std::tanh(alpha) * std::tanh(alpha)) / static_cast<double>(K);
        const double b = std::exp(p.value(k, 1));
        const double a = w / b;
        const Eigen::ArrayXd& t = ts[static_cast<std::size_t>(k)];
        const Eigen::ArrayXd sech2 = 1.0 - t.square();
        const Eigen::ArrayXd dz_dc = a * sech2;
        const Eigen::ArrayXd dz_dbeta = -a * t + w * sech2 * xin;
        const Eigen::ArrayXd dz_dalpha = dw * t / b;
        const Eigen::ArrayXd ds_dc = w * (-2.0 * t) * sech2;
        const Eigen::ArrayXd ds_dbeta = ds_dc * xin * b;
        const Eigen::ArrayXd ds_dalpha = dw * sech2;
        p.grad(k, 0) += (gz * dz_dalpha + gs * ds_dalpha).sum();
        p.grad(k, 1) += (gz * dz_dbeta + gs * ds_dbeta).sum();
        p.grad(k, 2) += (gz * dz_dc + gs * ds_dc).sum();
      }
      gz = gx * slope + gs * dslope_dx;
    }
    return value;
  }

  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }

  bool gaussian_fallback = false;
  double heldout_nll = std::numeric_limits<double>::quiet_NaN();

 private:
  static std::string name(std::size_t l) { return "l" + std::to_string(l) + (is_affine(l) ? ".affine" : ".tanh"); }

  double unit_weight(double alpha) const {
    return kSlopeCap * std::tanh(alpha) / static_cast<double>(hidden_);
  }

  double layer_forward(std::size_t l, double x) const {
    const auto& v = store_.at(name(l)).value;
    if (is_affine(l)) return (x - v(1, 0)) * std::exp(-v(0, 0));
    double z = x;
    for (Eigen::Index k = 0; k < v.rows(); ++k) {
      const double b = std::exp(v(k, 1));
      z += unit_weight(v(k, 0)) / b * std::tanh(b * x + v(k, 2));
    }
    return z;
  }

  double layer_slope(std::size_t l, double x) const {
    const auto& v = store_.at(name(l)).value;
    if (is_affine(l)) return std::exp(-v(0, 0));
    double d = 1.0;
    for (Eigen::Index k = 0; k < v.rows(); ++k) {
      const double t = std::tanh(std::exp(v(k, 1)) * x + v(k, 2));
      d += unit_weight(v(k, 0)) * (1.0 - t * t);
    }
    return d;
  }

  double layer_inverse(std::size_t l, double z) const {
    const auto& v = store_.at(name(l)).value;
    if (is_affine(l)) return z * std::exp(v(0, 0)) + v(1, 0);
    // |z - x| <= sum_k |a_k|, which brackets the root.
    double reach = 0.0;
    for (Eigen::Index k = 0; k < v.rows(); ++k) reach += std::abs(unit_weight(v(k, 0))) / std::exp(v(k, 1));
    double lo = z - reach - 1e-12, hi = z + reach + 1e-12;
    while (hi - lo > 1e-10 * std::max(1.0, std::abs(z))) {
      const double mid = 0.5 * (lo + hi);
      if (mid == lo || mid == hi) break;
      (layer_forward(l, mid) < z ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  nn::ParamStore store_;
  std::size_t hidden_ = 1;
};

inline double gaussian_nll(const Vector& x, double mean, double sd) {
  return 0.5 * std::log(2.0 * std::numbers::pi * sd * sd) + 0.5 * ((x.array() - mean) / sd).square().mean();
}

/// Maximum-likelihood fit on a seeded (1 - holdout) share of `samples`. The
/// parameters with the best held-out NLL are kept. Too few samples or a
/// diverging objective yield a Gaussian fit (affine layer only) flagged in
/// `gaussian_fallback`.
inline Flow1D fit_flow(const Vector& samples, const FlowConfig& cfg) {
  cfg.validate();
  require_shape(samples.size() >= 2, "flow fit needs at least two samples");
  if (!samples.allFinite()) throw NumericError("non-finite residual passed to flow fit");
  Flow1D flow(cfg.layers, cfg.hidden, cfg.seed);

  const double mean = samples.mean();
  double sd = std::sqrt((samples.array() - mean).square().mean());
  if (!(sd > 0.0)) throw DegenerateError("residuals have zero variance");
  flow.set_affine(0, sd, mean);

  auto fallback = [&](const std::string& why) {
    warn("flow fit falls back to Gaussian: " + why);
    Flow1D g(cfg.layers, cfg.hidden, cfg.seed);
    g.set_affine(0, sd, mean);
    g.gaussian_fallback = true;
    g.heldout_nll = gaussian_nll(samples, mean, sd);
    return g;
  };
  if (static_cast<std::size_t>(samples.size()) < cfg.min_samples) {
    return fallback(std::to_string(samples.size()) + " samples < " + std::to_string(cfg.min_samples));
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(samples.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(derive_seed(cfg.seed, 0xF10));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_hold = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::llround(cfg.holdout * static_cast<double>(samples.size()))));
  Vector held(n_hold), train(samples.size() - n_hold);
  for (Eigen::Index k = 0; k < samples.size(); ++k) {
    const double v = samples(order[static_cast<std::size_t>(k)]);
    if (k < n_hold) held(k) = v;
    else train(k - n_hold) = v;
  }

  nn::AdamState adam(flow.params().pointers(), {cfg.lr});
  Flow1D best = flow.clone();
  double best_nll = flow.nll(held);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    flow.params().zero_grad();
    const double loss = flow.nll(train, true);
    if (!std::isfinite(loss)) return fallback("non-finite training NLL at iteration " + std::to_string(it));
    try {
      adam.step();
    } catch (const NumericError& e) {
      return fallback(e.what());
    }
    const double h = flow.nll(held);
    if (!std::isfinite(h)) return fallback("non-finite held-out NLL at iteration " + std::to_string(it));
    if (h < best_nll) {
      best_nll = h;
      best = flow.clone();
    }
  }
  best.heldout_nll = best_nll;
  return best;
}

/// One flow per variable, fitted and sampled independently.
struct NoiseFlowSet {
  std::vector<Flow1D> flows;

  std::size_t size() const { return flows.size(); }

  /// One draw per variable from seeded stream `rng`.
  Vector draw(Rng& rng) const {
    Vector v(static_cast<Eigen::Index>(flows.size()));
    for (std::size_t i = 0; i < flows.size(); ++i) v(static_cast<Eigen::Index>(i)) = flows[i].forward(standard_normal(rng));
    return v;
  }

  void save(const io::fs::path& dir) const {
    io::json meta = io::json::array();
    for (std::size_t i = 0; i < flows.size(); ++i) {
      const auto& f = flows[i];
      meta.push_back({{"layers", f.n_layers()},
                      {"hidden", f.hidden()},
                      {"gaussian_fallback", f.gaussian_fallback},
                      {"heldout_nll", f.heldout_nll}});
      nn::save_params(dir, "flow_" + std::to_string(i), f.params(), meta.back());
    }
    io::write_json(dir / "flows.json", {{"count", flows.size()}, {"flows", meta}});
  }

  static NoiseFlowSet load(const io::fs::path& dir) {
    auto manifest = io::read_json(dir / "flows.json");
    NoiseFlowSet set;
    const auto count = manifest.at("count").get<std::size_t>();
    for (std::size_t i = 0; i < count; ++i) {
      const auto& m = manifest.at("flows").at(i);
      const auto name = "flow_" + std::to_string(i);
      Flow1D f(m.at("layers").get<std::size_t>(), m.at("hidden").get<std::size_t>(),
               nn::read_manifest(dir, name).at("seed").get<std::uint64_t>());
      nn::load_params(dir, name, f.params());
      f.gaussian_fallback = m.at("gaussian_fallback").get<bool>();
      f.heldout_nll = m.at("heldout_nll").is_number() ? m.at("heldout_nll").get<double>()
                                                      : std::numeric_limits<double>::quiet_NaN();
      set.flows.push_back(std::move(f));
    }
    return set;
  }
};

/// x - f(X, 1) on every admissible window of `ranges`; one row per window.
inline Matrix residuals(const CdnnModel& model, const Matrix& series, const std::vector<IndexRange>& ranges) {
  auto targets = window_targets(ranges, model.window());
  require_shape(!targets.empty(), "no admissible windows for residuals");
  Matrix out(static_cast<Eigen::Index>(targets.size()), static_cast<Eigen::Index>(model.n_vars()));
  const auto mask = full_mask(static_cast<Eigen::Index>(model.n_vars()));
  constexpr std::size_t chunk = 512;
  for (std::size_t a = 0; a < targets.size(); a += chunk) {
    std::vector<std::size_t> part(targets.begin() + a, targets.begin() + std::min(targets.size(), a + chunk));
    Matrix pred = model.forward(gather_windows(series, part, model.window()), mask);
    out.middleRows(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(part.size())) =
        (gather_rows(series, part) - pred).transpose();
  }
  return out;
}

inline NoiseFlowSet fit_flows(const Matrix& resid, const FlowConfig& cfg) {
  NoiseFlowSet set;
  for (Eigen::Index i = 0; i < resid.cols(); ++i) {
    FlowConfig c = cfg;
    c.seed = derive_seed(cfg.seed, 0xF1, i);
    set.flows.push_back(fit_flow(resid.col(i), c));
  }
  return set;
}

}  // namespace tsbench
