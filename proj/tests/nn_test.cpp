#include "tsbench/nn.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

namespace tsbench::nn {
namespace {

using testing::max_relative_error;
using testing::numeric_gradient;
using testing::random_matrix;

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

TEST(Mlp, IdentityLinearLayer) {
  ParamStore store;
  Rng rng(1);
  MLP mlp(store, "m", {3, 3, 3, 1}, rng);
  store.at("m.l0.w").value = Matrix::Identity(3, 3);
  store.at("m.l0.b").value.setZero();
  Matrix x = Matrix::Random(3, 4);
  EXPECT_EQ(mlp.forward(x), x);
}

TEST(Mlp, ZeroWeightsGiveBias) {
  ParamStore store;
  Rng rng(1);
  MLP mlp(store, "m", {4, 5, 2, 3}, rng);
  for (auto& [name, p] : store.items()) p.value.setZero();
  store.at("m.l2.b").value << 0.25, -1.5;
  Matrix y = mlp.forward(Matrix::Random(4, 6));
  for (int c = 0; c < 6; ++c) {
    EXPECT_EQ(y(0, c), 0.25);
    EXPECT_EQ(y(1, c), -1.5);
  }
}

TEST(Mlp, MatchesScalarEvaluation) {
  ParamStore store(11);
  Rng rng(11);
  MLP mlp(store, "m", {3, 4, 2, 2}, rng);
  Matrix x(3, 1);
  x << 0.3, -1.2, 0.7;
  const auto& w0 = store.at("m.l0.w").value;
  const auto& b0 = store.at("m.l0.b").value;
  const auto& w1 = store.at("m.l1.w").value;
  const auto& b1 = store.at("m.l1.b").value;
  double hidden[4];
  for (int j = 0; j < 4; ++j) {
    double acc = b0(j, 0);
    for (int k = 0; k < 3; ++k) acc += w0(j, k) * x(k, 0);
    hidden[j] = std::tanh(acc);
  }
  Matrix y = mlp.forward(x);
  for (int o = 0; o < 2; ++o) {
    double acc = b1(o, 0);
    for (int j = 0; j < 4; ++j) acc += w1(o, j) * hidden[j];
    EXPECT_NEAR(y(o, 0), acc, 1e-14);
  }
}

TEST(Mlp, ShapeMismatchNamesLayer) {
  ParamStore store;
  Rng rng(1);
  MLP mlp(store, "m", {3, 4, 1, 2}, rng);
  try {
    mlp.forward(Matrix::Zero(2, 1));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
  }
}

TEST(Lstm, ZeroEverythingGivesZeroHidden) {
  ParamStore store;
  Rng rng(1);
  LSTM lstm(store, "r", {3, 5, 2}, rng);
  for (auto& [name, p] : store.items()) p.value.setZero();
  std::vector<Matrix> seq(4, Matrix::Zero(3, 2));
  // o = 0.5, g = 0 => c stays 0 => h = 0.
  EXPECT_EQ(lstm.forward(seq), Matrix::Zero(5, 2));
}

TEST(Lstm, SingleStepMatchesGateEquations) {
  ParamStore store;
  Rng rng(5);
  LSTM lstm(store, "r", {2, 3, 1}, rng);
  Matrix x(2, 1);
  x << 0.4, -0.9;
  const auto& wx = store.at("r.l0.wx").value;
  const auto& b = store.at("r.l0.b").value;
  Matrix h = lstm.forward({x});
  for (int k = 0; k < 3; ++k) {
    auto pre = [&](int gate) { return wx(gate * 3 + k, 0) * x(0, 0) + wx(gate * 3 + k, 1) * x(1, 0) + b(gate * 3 + k, 0); };
    const double i = sig(pre(0)), g = std::tanh(pre(2)), o = sig(pre(3));
    const double c = i * g;  // f * c_prev vanishes
    EXPECT_NEAR(h(k, 0), o * std::tanh(c), 1e-14);
  }
}

TEST(Lstm, ReferenceSizedConfigAccepted) {
  ParamStore store;
  Rng rng(2);
  LSTM lstm(store, "r", {36, 128, 2}, rng);
  std::vector<Matrix> seq(20, Matrix::Random(36, 2));
  Matrix h = lstm.forward(seq);
  EXPECT_EQ(h.rows(), 128);
  EXPECT_TRUE(h.allFinite());
}

TEST(Backward, SquareDerivative) {
  // y = w * x with x = 1, loss = y^2 => dloss/dw = 2 w = 6 at w = 3.
  ParamStore store;
  Rng rng(0);
  MLP mlp(store, "m", {1, 1, 1, 1}, rng);
  store.at("m.l0.w").value(0, 0) = 3.0;
  store.at("m.l0.b").value(0, 0) = 0.0;
  MLP::Cache cache;
  Matrix y = mlp.forward(Matrix::Ones(1, 1), &cache);
  mlp.backward(2.0 * y, cache);
  EXPECT_DOUBLE_EQ(store.at("m.l0.w").grad(0, 0), 6.0);
}

TEST(Backward, BeforeForwardIsUsageError) {
  ParamStore store;
  Rng rng(0);
  MLP mlp(store, "m", {2, 2, 1, 2}, rng);
  MLP::Cache cache;
  EXPECT_THROW(mlp.backward(Matrix::Ones(1, 1), cache), UsageError);
  LSTM lstm(store, "r", {2, 2, 1}, rng);
  LSTM::Cache lc;
  EXPECT_THROW(lstm.backward(Matrix::Ones(2, 1), lc), UsageError);
}

TEST(Backward, UntouchedParamsHaveZeroGradient) {
  ParamStore store;
  Rng rng(0);
  MLP used(store, "used", {2, 3, 1, 2}, rng);
  MLP unused(store, "unused", {2, 3, 1, 2}, rng);
  MLP::Cache cache;
  Matrix y = used.forward(Matrix::Random(2, 5), &cache);
  used.backward(y, cache);
  for (auto& [name, p] : store.items()) {
    if (name.rfind("unused", 0) == 0) EXPECT_EQ(p.grad.cwiseAbs().maxCoeff(), 0.0) << name;
  }
}

// Loss = sum(target .* output) for a fixed random target; checks every param.
TEST(GradientCheck, MlpAgainstFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore store(seed);
    Rng rng(seed);
    MLP mlp(store, "m", {4, 6, 3, 3, seed % 2 == 0}, rng);
    Matrix x = random_matrix(4, 5, rng);
    Matrix w = random_matrix(3, 5, rng);
    auto loss = [&] { return (mlp.forward(x).array() * w.array()).sum(); };
    store.zero_grad();
    MLP::Cache cache;
    mlp.forward(x, &cache);
    Matrix dx = mlp.backward(w, cache);
    for (auto& [name, p] : store.items()) {
      Matrix num = numeric_gradient(p.value, loss);
      EXPECT_LT(max_relative_error(p.grad, num), 1e-4) << name << " seed " << seed;
    }
    Matrix num_dx = numeric_gradient(x, loss);
    EXPECT_LT(max_relative_error(dx, num_dx), 1e-4) << "input, seed " << seed;
  }
}

TEST(GradientCheck, LstmFiveStepsAgainstFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ParamStore store(seed);
    Rng rng(100 + seed);
    LSTM lstm(store, "r", {3, 4, 2}, rng);
    std::vector<Matrix> seq;
    for (int t = 0; t < 5; ++t) seq.push_back(random_matrix(3, 2, rng));
    Matrix w = random_matrix(4, 2, rng);
    auto loss = [&] { return (lstm.forward(seq).array() * w.array()).sum(); };
    store.zero_grad();
    LSTM::Cache cache;
    lstm.forward(seq, &cache);
    auto dseq = lstm.backward(w, cache);
    for (auto& [name, p] : store.items()) {
      Matrix num = numeric_gradient(p.value, loss);
      EXPECT_LT(max_relative_error(p.grad, num), 1e-4) << name << " seed " << seed;
    }
    for (int t = 0; t < 5; ++t) {
      Matrix num = numeric_gradient(seq[t], loss);
      EXPECT_LT(max_relative_error(dseq[t], num), 1e-4) << "step " << t << " seed " << seed;
    }
  }
}

TEST(Adam, ZeroGradientLeavesParamsButCountsStep) {
  ParamStore store;
  auto& p = store.add("p", 2, 2);
  p.value << 1, 2, 3, 4;
  Matrix before = p.value;
  AdamState adam(store.pointers(), {});
  adam.step();
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  ParamStore store;
  auto& p = store.add("p", 1, 3);
  p.grad << 0.5, -2.0, 1e-3;
  AdamState adam(store.pointers(), {0.01});
  adam.step();
  // Bias-corrected m/sqrt(v) = g/|g| exactly, up to eps.
  EXPECT_NEAR(p.value(0, 0), -0.01, 1e-9);
  EXPECT_NEAR(p.value(0, 1), 0.01, 1e-9);
  EXPECT_NEAR(p.value(0, 2), -0.01, 1e-7);
}

TEST(Adam, NonFiniteGradientAborts) {
  ParamStore store;
  auto& p = store.add("p", 1, 1);
  p.grad(0, 0) = std::numeric_limits<double>::infinity();
  AdamState adam(store.pointers(), {});
  EXPECT_THROW(adam.step(), NumericError);
}

TEST(Adam, DeterministicTraining) {
  auto train = [](std::uint64_t seed) {
    ParamStore store(seed);
    Rng rng(seed);
    MLP mlp(store, "m", {2, 8, 1, 2}, rng);
    Matrix x = random_matrix(2, 16, rng);
    Matrix y = x.colwise().sum();
    AdamState adam(store.pointers(), {0.01});
    for (int k = 0; k < 25; ++k) {
      store.zero_grad();
      MLP::Cache cache;
      Matrix out = mlp.forward(x, &cache);
      mlp.backward(2.0 * (out - y) / 16.0, cache);
      clip_grad_norm(store.pointers(), 5.0);
      adam.step();
    }
    std::vector<Matrix> vals;
    for (auto& [_, p] : store.items()) vals.push_back(p.value);
    return vals;
  };
  auto a = train(9), b = train(9);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k], b[k]);
}

TEST(Checkpoint, RoundTripIsExact) {
  auto dir = testing::scratch_dir("ckpt");
  ParamStore store(4);
  Rng rng(4);
  LSTM lstm(store, "r", {3, 4, 2}, rng);
  save_params(dir, "enc", store, {{"hidden", 4}});
  ParamStore other(0);
  Rng rng2(99);
  LSTM lstm2(other, "r", {3, 4, 2}, rng2);
  load_params(dir, "enc", other);
  for (auto& [name, p] : store.items()) EXPECT_EQ(p.value, other.at(name).value);
  auto manifest = read_manifest(dir, "enc");
  EXPECT_EQ(manifest.at("seed").get<int>(), 4);
  EXPECT_EQ(manifest.at("config").at("hidden").get<int>(), 4);

  ParamStore wrong;
  Rng rng3(1);
  LSTM lstm3(wrong, "r", {3, 5, 2}, rng3);
  EXPECT_THROW(load_params(dir, "enc", wrong), ShapeError);
}

}  // namespace
}  // namespace tsbench::nn
