#include "tsbench/flow.hpp"
#include "tsbench/synthetic.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

namespace tsbench {
namespace {

const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// A flow with non-trivial parameters in every layer.
Flow1D scrambled_flow(std::uint64_t seed) {
  Flow1D f(5, 4, seed);
  Rng rng(seed + 100);
  for (auto& [name, p] : f.params().items())
    for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value(k) += uniform01(rng) * 2.0 - 1.0;
  return f;
}

Vector draw(std::size_t n, std::uint64_t seed, NoiseKind kind = NoiseKind::gaussian, double scale = 1.0) {
  Rng rng(seed);
  Vector v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = draw_noise(kind, scale, rng);
  return v;
}

double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double F = cdf(xs[k]);
    d = std::max({d, std::abs(F - k / n), std::abs(F - (k + 1) / n)});
  }
  return d;
}

TEST(LogDensity, IdentityAtZero) {
  Flow1D f(5, 8);
  EXPECT_NEAR(f.log_density(0.0), -kLogSqrt2Pi, 1e-15);
}

TEST(LogDensity, AffineScaleTwoSubtractsLogTwo) {
  auto f = Flow1D::affine(2.0, 0.0);
  EXPECT_NEAR(f.log_density(0.0), -kLogSqrt2Pi - std::log(2.0), 1e-15);
}

TEST(LogDensity, IntegratesToOne) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto f = scrambled_flow(seed);
    // Spread of the flow, from its quantiles.
    const double lo = f.forward(-10.0), hi = f.forward(10.0);
    const int n = 20000;
    const double h = (hi - lo) / n;
    double total = 0.0;
    for (int k = 0; k <= n; ++k) total += (k == 0 || k == n ? 0.5 : 1.0) * std::exp(f.log_density(lo + k * h));
    total *= h;
    EXPECT_GT(total, 0.99) << seed;
    EXPECT_LT(total, 1.01) << seed;
  }
}

TEST(Invertibility, RoundTripOverWideGrid) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto f = scrambled_flow(seed);
    auto s = f.sample(2000, seed);
    const double m = std::accumulate(s.begin(), s.end(), 0.0) / s.size();
    double var = 0.0;
    for (double v : s) var += (v - m) * (v - m);
    const double sd = std::sqrt(var / s.size());
    for (int k = 0; k < 1000; ++k) {
      const double x = m - 8 * sd + 16 * sd * k / 999.0;
      EXPECT_NEAR(f.forward(f.inverse(x)), x, 1e-8);
    }
  }
}

TEST(Invertibility, EveryLayerStaysMonotone) {
  // Extreme raw tanh-layer parameters still give a positive slope.
  Flow1D f(3, 2);
  f.params().at("l1.tanh").value << 40.0, 5.0, -3.0, -40.0, 2.0, 1.0;
  double prev = -std::numeric_limits<double>::infinity();
  for (int k = -500; k <= 500; ++k) {
    const double y = f.inverse(k * 0.01);
    EXPECT_GT(y, prev);
    prev = y;
    EXPECT_GT(f.inverse_derivative(k * 0.01), 0.0);
  }
}

TEST(Jacobian, MatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto f = scrambled_flow(seed);
    for (double x : {-3.0, -1.1, -0.2, 0.0, 0.4, 1.7, 3.5}) {
      const double h = 1e-5;
      const double num = (f.inverse(x + h) - f.inverse(x - h)) / (2 * h);
      EXPECT_NEAR(f.inverse_derivative(x) / num, 1.0, 1e-5) << "seed " << seed << " x " << x;
    }
  }
}

TEST(GradientCheck, NllAgainstFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto f = scrambled_flow(seed);
    Vector x = draw(50, seed, NoiseKind::bimodal, 1.5);
    f.params().zero_grad();
    f.nll(x, true);
    for (auto& [name, p] : f.params().items()) {
      Matrix num = testing::numeric_gradient(p.value, [&] { return f.nll(x); });
      EXPECT_LT(testing::max_relative_error(p.grad, num), 1e-4) << name << " seed " << seed;
    }
  }
}

TEST(Sample, IdentityFlowIsStandardNormal) {
  Flow1D f(5, 8);
  auto s = f.sample(10000, 3);
  EXPECT_LT(ks_statistic(s, standard_normal_cdf), 0.05);
}

TEST(Sample, AffineFlowMatchesMoments) {
  auto f = Flow1D::affine(2.5, -1.0);
  auto s = f.sample(20000, 4);
  Eigen::Map<Vector> v(s.data(), static_cast<Eigen::Index>(s.size()));
  EXPECT_NEAR(v.mean(), -1.0, 0.05);
  EXPECT_NEAR(std::sqrt((v.array() - v.mean()).square().mean()), 2.5, 0.05);
}

TEST(Sample, DeterministicGivenSeed) {
  auto f = scrambled_flow(1);
  EXPECT_EQ(f.sample(100, 9), f.sample(100, 9));
  EXPECT_NE(f.sample(100, 9), f.sample(100, 10));
}

TEST(Sample, EmpiricalCdfMatchesFittedFlow) {
  FlowConfig cfg;
  auto fit = fit_flow(draw(3000, 5, NoiseKind::bimodal, 1.0), cfg);
  auto s = fit.sample(10000, 6);
  EXPECT_LT(ks_statistic(s, [&](double x) { return fit.cdf(x); }), 0.03);
}

TEST(FitFlow, StandardNormalReachesAnalyticEntropy) {
  FlowConfig cfg;
  auto f = fit_flow(draw(5000, 7), cfg);
  EXPECT_FALSE(f.gaussian_fallback);
  // Held-out NLL is a finite-sample estimate; compare on fresh draws too.
  const double entropy = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
  EXPECT_NEAR(f.heldout_nll, entropy, 0.05);
  EXPECT_NEAR(f.nll(draw(20000, 8)), entropy, 0.05);
}

TEST(FitFlow, MixtureBeatsSingleGaussian) {
  FlowConfig cfg;
  Vector x = draw(4000, 11, NoiseKind::bimodal, 1.0);
  auto f = fit_flow(x, cfg);
  Vector fresh = draw(20000, 12, NoiseKind::bimodal, 1.0);
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().mean());
  const double gauss = gaussian_nll(fresh, mean, sd);
  const double flow = f.nll(fresh);
  EXPECT_LT(flow, gauss - 0.05) << "flow " << flow << " gaussian " << gauss;
}

TEST(FitFlow, DefaultStackHasFiveLayers) {
  FlowConfig cfg;
  cfg.iterations = 2;
  auto f = fit_flow(draw(200, 1), cfg);
  EXPECT_EQ(f.n_layers(), 5u);
  EXPECT_EQ(f.hidden(), 8u);
}

TEST(FitFlow, FewSamplesFallBackToGaussian) {
  warnings_enabled() = false;
  FlowConfig cfg;
  Vector x = draw(50, 2, NoiseKind::gaussian, 3.0);
  auto f = fit_flow(x, cfg);
  warnings_enabled() = true;
  EXPECT_TRUE(f.gaussian_fallback);
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().mean());
  for (double v : {-2.0, 0.0, 1.0}) {
    const double z = (v - mean) / sd;
    EXPECT_NEAR(f.log_density(v), -0.5 * z * z - kLogSqrt2Pi - std::log(sd), 1e-12);
  }
}

TEST(FitFlow, DivergenceFallsBackToGaussian) {
  warnings_enabled() = false;
  FlowConfig cfg;
  cfg.lr = 1e6;
  cfg.iterations = 50;
  Vector x = draw(500, 3, NoiseKind::bimodal, 1.0);
  auto f = fit_flow(x, cfg);
  warnings_enabled() = true;
  ASSERT_TRUE(f.gaussian_fallback);
  EXPECT_NEAR(f.heldout_nll, gaussian_nll(x, x.mean(), std::sqrt((x.array() - x.mean()).square().mean())), 1e-12);
}

TEST(FitFlow, ConstantResidualsRejected) {
  EXPECT_THROW(fit_flow(Vector::Constant(300, 1.0), {}), DegenerateError);
}

TEST(Residuals, PerfectModelOnNoiselessDataIsZero) {
  CdnnConfig c;
  c.n_vars = 3;
  c.window = 4;
  c.backbone = Backbone::mlp;
  c.enc_hidden = 4;
  c.dec_hidden = 4;
  CdnnModel m(c);
  for (auto* p : m.parameters()) p->value.setZero();
  auto r = residuals(m, Matrix::Zero(30, 3), {{0, 30}});
  EXPECT_EQ(r.rows(), 26);  // one per window
  EXPECT_EQ(r, Matrix::Zero(26, 3));
}

TEST(Residuals, LinearFitRecoversNoiseScale) {
  SyntheticVarSpec spec;
  spec.n_vars = 3;
  spec.length = 1500;
  spec.cross_edges = 2;
  spec.linear = true;
  spec.noise = NoiseKind::gaussian;
  spec.noise_scale = 0.1;
  spec.cross_min = 0.2;
  spec.cross_max = 0.3;
  auto sim = make_synthetic_var(spec);
  auto split = split_ranges(sim.data, {});
  CdnnConfig c;
  c.n_vars = 3;
  c.window = 2;
  c.backbone = Backbone::mlp;
  c.enc_layers = 1;
  c.enc_hidden = 16;
  c.dec_layers = 2;
  c.dec_hidden = 16;
  CdnnModel m(c);
  TrainConfig tc;
  tc.epochs = 40;
  tc.lr = 3e-3;
  tc.plan.enabled = false;
  tc.plan.rollout = 1;
  // Raw (unnormalized) units so the residual scale is directly comparable.
  fit_prediction_model(m, sim.data.values, split.train, split.val, tc);
  auto r = residuals(m, sim.data.values, split.train);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const double sd = std::sqrt((r.col(i).array() - r.col(i).mean()).square().mean());
    EXPECT_NEAR(sd, 0.1, 0.02) << i;
  }
}

TEST(NoiseFlowSet, FlowsAreIndependentPerVariable) {
  Matrix r(600, 2);
  r.col(0) = draw(600, 1);
  r.col(1) = draw(600, 2, NoiseKind::bimodal, 2.0);
  FlowConfig cfg;
  cfg.iterations = 50;
  auto both = fit_flows(r, cfg);
  Matrix changed = r;
  changed.col(1) = draw(600, 3, NoiseKind::gaussian, 5.0);
  auto other = fit_flows(changed, cfg);
  for (auto& [name, p] : both.flows[0].params().items())
    EXPECT_EQ(p.value, other.flows[0].params().at(name).value) << name;
}

TEST(NoiseFlowSet, SaveLoadRoundTrip) {
  auto dir = testing::scratch_dir("flows");
  NoiseFlowSet set;
  set.flows.push_back(scrambled_flow(1));
  set.flows.push_back(scrambled_flow(2));
  set.flows[1].gaussian_fallback = true;
  set.flows[1].heldout_nll = 1.25;
  set.save(dir);
  auto back = NoiseFlowSet::load(dir);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_TRUE(back.flows[1].gaussian_fallback);
  EXPECT_EQ(back.flows[1].heldout_nll, 1.25);
  for (double x : {-1.0, 0.3, 2.0}) EXPECT_EQ(back.flows[0].log_density(x), set.flows[0].log_density(x));
  Rng a(5), b(5);
  EXPECT_EQ(back.draw(a), set.draw(b));
}

}  // namespace
}  // namespace tsbench
