#include "tsbench/graph.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

namespace tsbench {
namespace {

using testing::random_matrix;
using testing::exact_shapley;

CdnnModel small_model(std::size_t n, std::uint64_t seed) {
  CdnnConfig c;
  c.n_vars = n;
  c.window = 3;
  c.backbone = Backbone::mlp;
  c.enc_layers = 2;
  c.enc_hidden = 8;
  c.dec_layers = 2;
  c.dec_hidden = 8;
  c.seed = seed;
  return CdnnModel(c);
}

TEST(Shapley, AdditiveGameIsExactForEveryPermutation) {
  // f_0 = sin(x_1) + x_2^2 per lag, f_1 = 3 x_0; reference = background mean.
  auto f = [](const Matrix& x) {
    Matrix out(2, x.cols());
    for (Eigen::Index b = 0; b < x.cols(); ++b) {
      double g = 0, h = 0;
      for (Eigen::Index s = 0; s < x.rows() / 4; ++s) {
        g += std::sin(x(s * 4 + 1, b)) + x(s * 4 + 2, b) * x(s * 4 + 2, b);
        h += 3 * x(s * 4 + 0, b);
      }
      out(0, b) = g;
      out(1, b) = h;
    }
    return out;
  };
  Rng rng(1);
  Vector x = random_matrix(12, 1, rng).col(0), ref = random_matrix(12, 1, rng).col(0);
  auto est = shapley_values(f, x, ref, 4, 16, rng);
  Matrix exact = exact_shapley(f, x, ref, 4);
  EXPECT_LT((est.value - exact).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(est.se.maxCoeff(), 1e-12);
  double g_term = 0.0;
  for (int s = 0; s < 3; ++s) g_term += std::sin(x(s * 4 + 1)) - std::sin(ref(s * 4 + 1));
  EXPECT_NEAR(exact(1, 0), g_term, 1e-12);
  EXPECT_EQ(exact(3, 0), 0.0);
}

// Over many (window, group, output) entries of random networks at N = 4,
// the sampled estimate lies within 2 standard errors of the exact value at
// the rate expected of an unbiased, roughly normal estimator.
TEST(Shapley, SampledMatchesBruteForceWithinTwoStandardErrors) {
  std::size_t within = 0, total = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto model = small_model(4, seed);
    BatchFunction f = [&](const Matrix& x) { return model.forward(x); };
    Rng rng(seed + 50);
    for (int w = 0; w < 5; ++w) {
      Vector x = random_matrix(12, 1, rng, 1.5).col(0), ref = random_matrix(12, 1, rng, 0.3).col(0);
      auto est = shapley_values(f, x, ref, 4, 200, rng);
      Matrix exact = exact_shapley(f, x, ref, 4);
      for (Eigen::Index k = 0; k < exact.size(); ++k) {
        const double z = std::abs(est.value(k) - exact(k)) / std::max(est.se(k), 1e-15);
        worst = std::max(worst, z);
        within += z <= 2.0;
        ++total;
      }
    }
  }
  EXPECT_GE(static_cast<double>(within) / total, 0.9) << within << " / " << total;
  EXPECT_LT(worst, 5.0);
}

TEST(Shapley, EfficiencyHoldsPerWindow) {
  auto model = small_model(5, 3);
  BatchFunction f = [&](const Matrix& x) { return model.forward(x); };
  Rng rng(4);
  for (int w = 0; w < 20; ++w) {
    Vector x = random_matrix(15, 1, rng).col(0), ref = random_matrix(15, 1, rng).col(0);
    auto est = shapley_values(f, x, ref, 5, 8, rng);
    Vector total = est.value.colwise().sum().transpose();
    Vector expect = f(x).col(0) - f(ref).col(0);
    EXPECT_LT((total - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Shapley, MaskedSeriesGetsZeroImportance) {
  auto model = small_model(4, 7);
  // Output i only sees series 0 (and itself for i = 0).
  AdjacencyMask a = AdjacencyMask::Zero(4, 4);
  a.row(0).setOnes();
  Rng rng(2);
  Matrix series = random_matrix(200, 4, rng);
  ShapleyConfig cfg;
  cfg.explained = 16;
  cfg.mc_samples = 16;
  auto imp = shapley_importance(model, series, {{0, 100}}, {{100, 200}}, cfg, &a);
  for (Eigen::Index i = 0; i < 4; ++i) {
    ASSERT_GT(imp.phi(0, i), 0.0);
    for (Eigen::Index j = 1; j < 4; ++j) {
      EXPECT_LT(imp.phi(j, i), 0.05 * imp.phi(0, i));
      EXPECT_EQ(imp.phi(j, i), 0.0);
    }
  }
}

TEST(Shapley, DeterministicAndValidated) {
  auto model = small_model(3, 1);
  Rng rng(1);
  Matrix series = random_matrix(100, 3, rng);
  ShapleyConfig cfg;
  cfg.explained = 8;
  cfg.mc_samples = 4;
  auto a = shapley_importance(model, series, {{0, 100}}, {{0, 100}}, cfg);
  auto b = shapley_importance(model, series, {{0, 100}}, {{0, 100}}, cfg);
  EXPECT_EQ(a.phi, b.phi);
  EXPECT_EQ(a.windows, 8u);
  cfg.mc_samples = 1;
  EXPECT_THROW(shapley_importance(model, series, {{0, 100}}, {{0, 100}}, cfg), UsageError);
}

TEST(Threshold, TopThreeOfNine) {
  Matrix phi(3, 3);
  phi << 9, 1, 2, 3, 8, 4, 5, 6, 7;
  auto h = threshold_by_sparsity(phi, 1.0 / 3.0);
  AdjacencyMask want = AdjacencyMask::Zero(3, 3);
  want(0, 0) = want(1, 1) = want(2, 2) = 1;
  EXPECT_EQ(h.h, want);
  EXPECT_EQ(h.gamma, 6.0);
  EXPECT_DOUBLE_EQ(h.sigma_achieved, 1.0 / 3.0);
}

TEST(Threshold, FullSparsityGivesAllOnes) {
  Rng rng(1);
  auto h = threshold_by_sparsity(random_matrix(4, 4, rng), 1.0);
  EXPECT_EQ(h.h, AdjacencyMask::Ones(4, 4));
}

TEST(Threshold, TiesAtGammaAreExcluded) {
  Matrix phi(2, 2);
  phi << 3, 1, 1, 1;
  auto h = threshold_by_sparsity(phi, 0.5);
  EXPECT_EQ(h.h.count(), 1);
}

TEST(Threshold, SparsityContractOnRandomImportance) {
  Rng rng(11);
  for (int N : {5, 10, 20}) {
    for (double sigma : {kDefaultSparsity, 0.05, 0.3, 0.5, 0.77}) {
      for (int trial = 0; trial < 20; ++trial) {
        Matrix phi = random_matrix(N, N, rng).cwiseAbs();
        auto h = threshold_by_sparsity(phi, sigma);
        EXPECT_LE(std::abs(h.sigma_achieved - sigma), 1.0 / (N * N)) << N << " " << sigma;
        // Every selected entry outranks every unselected one.
        double min_on = 1e300, max_off = -1e300;
        for (Eigen::Index k = 0; k < phi.size(); ++k) (h.h(k) ? min_on : max_off) = h.h(k) ? std::min(min_on, phi(k)) : std::max(max_off, phi(k));
        EXPECT_GT(min_on, max_off);
      }
    }
  }
}

TEST(Threshold, DefaultSparsityIsFifteenPercent) { EXPECT_EQ(kDefaultSparsity, 0.15); }

TEST(Threshold, AllEqualImportanceSuggestsPrior) {
  try {
    threshold_by_sparsity(Matrix::Constant(3, 3, 0.5), 0.15);
    FAIL();
  } catch (const DegenerateError& e) {
    EXPECT_NE(std::string(e.what()).find("prior"), std::string::npos);
  }
  EXPECT_THROW(threshold_by_sparsity(Matrix::Ones(3, 3), 0.0), UsageError);
}

TEST(PriorGraph, CollinearPoints) {
  Vector pos(3);
  pos << 0, 30, 80;
  Matrix d(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) d(i, j) = std::abs(pos(i) - pos(j));
  auto h = prior_graph(d, 40.0);
  AdjacencyMask want(3, 3);
  want << 1, 1, 0, 1, 1, 0, 0, 0, 1;
  EXPECT_EQ(h.h, want);
  EXPECT_EQ(h.source, "prior");
}

TEST(PriorGraph, ZeroThresholdIsIdentity) {
  Matrix d = Matrix::Constant(4, 4, 10.0);
  d.diagonal().setZero();
  EXPECT_EQ(prior_graph(d, 0.0).h, AdjacencyMask::Identity(4, 4));
}

TEST(PriorGraph, SymmetricOnRandomDistances) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix p = random_matrix(8, 2, rng, 30.0);
    Matrix d(8, 8);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) d(i, j) = (p.row(i) - p.row(j)).norm();
    auto h = prior_graph(d, 40.0);
    EXPECT_EQ(h.h, AdjacencyMask(h.h.transpose()));
  }
}

TEST(PriorGraph, AsymmetricDistancesRejected) {
  Matrix d = Matrix::Zero(3, 3);
  d(0, 1) = 1.0;
  d(1, 0) = 2.0;
  EXPECT_THROW(prior_graph(d, 1.0), UsageError);
}

}  // namespace
}  // namespace tsbench
