#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "tinylr/rf_model.hpp"

using namespace tinylr;

namespace {

LabeledBatch random_batch(int d, int n, std::uint64_t seed) {
  Stream s(seed);
  LabeledBatch b;
  b.X.resize(n, d);
  b.y.resize(n);
  Eigen::VectorXd x(d);
  for (int i = 0; i < n; ++i) {
    sample_sphere(s, x);
    b.X.row(i) = x.transpose();
    b.y[i] = s.normal();
  }
  return b;
}

}  // namespace

TEST(Activation, VectorizedTanhMatchesStd) {
  Eigen::VectorXd z = Eigen::VectorXd::LinSpaced(4001, -30.0, 30.0);
  const Eigen::VectorXd ref = z.unaryExpr([](double a) { return std::tanh(a); });
  activate_inplace(ActKind::tanh, z);
  EXPECT_LE((z - ref).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Activation, ScaledErfHasUnitSlope) {
  const double h = 1e-6;
  EXPECT_NEAR((activate(ActKind::scaled_erf, h) - activate(ActKind::scaled_erf, -h)) / (2 * h), 1.0, 1e-9);
}

TEST(Features, InitIsDeterministicAndOnTheSphere) {
  const FeatureBank a = init_features(8, 32, WeightDist::sphere, 5);
  const FeatureBank b = init_features(8, 32, WeightDist::sphere, 5);
  EXPECT_TRUE((a.U.array() == b.U.array()).all());
  for (int i = 0; i < a.m(); ++i) EXPECT_NEAR(a.U.col(i).norm(), 1.0, 1e-14);
  const FeatureBank c = init_features(8, 32, WeightDist::box, 5);
  EXPECT_LE(c.U.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_THROW(init_features(0, 4, WeightDist::sphere, 1), std::invalid_argument);
}

TEST(Forward, SingleFeatureByHand) {
  FeatureBank b;
  b.U.resize(2, 1);
  b.U << 0.6, 0.8;
  RandomFeatureModel model(b, ActKind::tanh);
  model.theta[0] = 2.0;
  const Eigen::Vector2d x(1.0, 0.0);
  EXPECT_DOUBLE_EQ(forward(model, x), 2.0 * std::tanh(0.6));
  LabeledBatch batch;
  batch.X = x.transpose();
  batch.y = Eigen::VectorXd::Constant(1, 0.5);
  const LossGrad lg = loss_and_grad(model, batch);
  const double r = 2.0 * std::tanh(0.6) - 0.5;
  EXPECT_DOUBLE_EQ(lg.loss, 0.5 * r * r);
  EXPECT_DOUBLE_EQ(lg.grad[0], r * std::tanh(0.6));
}

TEST(Forward, BatchMatchesRowLoop) {
  RandomFeatureModel model(init_features(6, 50, WeightDist::sphere, 2), ActKind::tanh);
  Stream s(3);
  for (auto& t : model.theta) t = s.normal();
  const LabeledBatch b = random_batch(6, 37, 4);
  const Eigen::VectorXd f = batch_forward(model, b.X);
  for (int i = 0; i < b.X.rows(); ++i) EXPECT_NEAR(f[i], forward(model, b.X.row(i).transpose()), 1e-13);
}

TEST(Forward, ZeroThetaGivesZero) {
  const RandomFeatureModel model(init_features(4, 16, WeightDist::sphere, 1), ActKind::scaled_erf);
  const LabeledBatch b = random_batch(4, 10, 2);
  EXPECT_TRUE((batch_forward(model, b.X).array() == 0.0).all());
}

TEST(LossGrad, MatchesFiniteDifferences) {
  RandomFeatureModel model(init_features(5, 20, WeightDist::box, 7), ActKind::tanh);
  Stream s(8);
  for (auto& t : model.theta) t = s.normal();
  const LabeledBatch b = random_batch(5, 16, 9);
  const LossGrad lg = loss_and_grad(model, b);
  const double h = 1e-6;
  for (int i = 0; i < model.m(); ++i) {
    RandomFeatureModel p = model, q = model;
    p.theta[i] += h;
    q.theta[i] -= h;
    const double fd = (loss_and_grad(p, b).loss - loss_and_grad(q, b).loss) / (2 * h);
    EXPECT_NEAR(lg.grad[i], fd, 1e-8);
  }
}

TEST(FeatureBound, HoldsOnSampledInputs) {
  InputLaw law;
  law.d = 3;
  law.kind = LawKind::box;
  const double R = feature_bound(ActKind::identity, WeightDist::box, law);
  EXPECT_DOUBLE_EQ(R, 3.0);
  const FeatureBank b = init_features(3, 100, WeightDist::box, 1);
  Stream s(2);
  Eigen::VectorXd x(3);
  for (int i = 0; i < 1000; ++i) {
    sample_box(s, x);
    EXPECT_LE(featurize(b, Activation{ActKind::identity}, x).cwiseAbs().maxCoeff(), R);
  }
}

TEST(Precision, RoundingKeepsModeMantissa) {
  EXPECT_EQ(round_to(Precision::f32, 1.0 + 0x1.0p-24), 1.0);
  EXPECT_EQ(round_to(Precision::f32, 1.0 + 0x1.0p-23), 1.0 + 0x1.0p-23);
  EXPECT_EQ(round_to(Precision::f16, 1.0 + 0x1.0p-11), 1.0);
  EXPECT_EQ(round_to(Precision::f16, 1.0 + 0x1.8p-11), 1.0 + 0x1.0p-10);
  EXPECT_EQ(round_to(Precision::f16, 3.0 + 0x1.0p-10), 3.0);
  EXPECT_EQ(round_to(Precision::f64, 0.1), 0.1);
  EXPECT_EQ(machine_gap(Precision::f16), 0x1.0p-10);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  RandomFeatureModel model(init_features(7, 33, WeightDist::box, 99), ActKind::scaled_erf);
  Stream s(1);
  for (auto& t : model.theta) t = s.normal();
  std::stringstream ss;
  save_checkpoint(model, ss);
  const RandomFeatureModel back = load_checkpoint(ss);
  EXPECT_EQ(back.d(), 7);
  EXPECT_EQ(back.act.kind, ActKind::scaled_erf);
  EXPECT_EQ(back.bank.dist, WeightDist::box);
  EXPECT_TRUE((back.bank.U.array() == model.bank.U.array()).all());
  EXPECT_TRUE((back.theta.array() == model.theta.array()).all());
}

TEST(Checkpoint, TruncatedStreamThrows) {
  const RandomFeatureModel model(init_features(2, 4, WeightDist::sphere, 1), ActKind::tanh);
  std::stringstream ss;
  save_checkpoint(model, ss);
  std::string bytes = ss.str();
  bytes.pop_back();
  std::stringstream cut(bytes);
  EXPECT_THROW(load_checkpoint(cut), std::runtime_error);
}

TEST(Forward, IdentityOneFeatureByHand) {
  FeatureBank b;
  b.U = Eigen::MatrixXd::Constant(1, 1, 1.0);
  RandomFeatureModel model(b, ActKind::identity);
  model.theta[0] = 2.0;
  EXPECT_EQ(forward(model, Eigen::VectorXd::Constant(1, 0.5)), 1.0);
}

TEST(Forward, FeaturesOfOriginAndIdentity) {
  const FeatureBank b = init_features(5, 12, WeightDist::sphere, 3);
  EXPECT_TRUE((featurize(b, Activation{ActKind::tanh}, Eigen::VectorXd::Zero(5)).array() == 0.0).all());
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(5, -0.5, 0.5);
  EXPECT_TRUE((featurize(b, Activation{ActKind::identity}, x).array() == (b.U.transpose() * x).array()).all());
  EXPECT_THROW(featurize(b, Activation{ActKind::tanh}, Eigen::VectorXd::Zero(4)), std::invalid_argument);
}

TEST(Forward, LinearInTheta) {
  RandomFeatureModel model(init_features(3, 9, WeightDist::sphere, 4), ActKind::tanh);
  Stream s(5);
  for (auto& t : model.theta) t = s.normal();
  const Eigen::Vector3d x(0.0, 0.6, 0.8);
  const double f = forward(model, x);
  model.theta *= 2.0;
  EXPECT_EQ(forward(model, x), 2.0 * f);
}

TEST(LossGrad, ZeroThetaSingleSample) {
  const RandomFeatureModel model(init_features(3, 8, WeightDist::sphere, 6), ActKind::tanh);
  const LabeledBatch b = random_batch(3, 1, 7);
  const LossGrad lg = loss_and_grad(model, b);
  const Eigen::VectorXd phi = featurize(model.bank, model.act, b.X.row(0).transpose());
  EXPECT_DOUBLE_EQ(lg.loss, 0.5 * b.y[0] * b.y[0]);
  EXPECT_LE((lg.grad + b.y[0] * phi / std::sqrt(8.0)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LossGrad, DuplicatedBatchIsUnchanged) {
  RandomFeatureModel model(init_features(4, 10, WeightDist::sphere, 2), ActKind::scaled_erf);
  model.theta.setLinSpaced(-1.0, 1.0);
  const LabeledBatch b = random_batch(4, 6, 3);
  LabeledBatch bb;
  bb.X.resize(12, 4);
  bb.X << b.X, b.X;
  bb.y.resize(12);
  bb.y << b.y, b.y;
  const LossGrad a = loss_and_grad(model, b), c = loss_and_grad(model, bb);
  EXPECT_NEAR(a.loss, c.loss, 1e-15);
  EXPECT_LE((a.grad - c.grad).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LossGrad, FiniteDifferencesForEveryActivation) {
  for (ActKind k : {ActKind::identity, ActKind::tanh, ActKind::scaled_erf}) {
    RandomFeatureModel model(init_features(4, 30, WeightDist::sphere, 11), k);
    Stream s(12);
    for (auto& t : model.theta) t = s.normal();
    const LabeledBatch b = random_batch(4, 8, 13);
    const LossGrad lg = loss_and_grad(model, b);
    for (int i = 0; i < 20; ++i) {
      RandomFeatureModel p = model, q = model;
      p.theta[i] += 1e-6;
      q.theta[i] -= 1e-6;
      const double fd = (loss_and_grad(p, b).loss - loss_and_grad(q, b).loss) / 2e-6;
      EXPECT_LE(std::abs(lg.grad[i] - fd), 1e-5 * std::max(std::abs(fd), 1e-3)) << to_string(k) << " " << i;
    }
  }
}

TEST(Activation, LipschitzOnRandomPairs) {
  Stream s(14);
  for (ActKind k : {ActKind::identity, ActKind::tanh, ActKind::scaled_erf}) {
    const Activation act{k};
    for (int i = 0; i < 10000; ++i) {
      const double a = 4.0 * s.normal(), b = 4.0 * s.normal();
      EXPECT_LE(std::abs(act(a) - act(b)), act.lipschitz() * std::abs(a - b) * (1 + 1e-12) + 1e-300);
    }
  }
}

TEST(Features, WideBankColumnMeanIsSmall) {
  const int d = 8, m = 10000, n_banks = 200;
  int ok = 0;
  for (int k = 0; k < n_banks; ++k) {
    const FeatureBank b = init_features(d, m, WeightDist::sphere, 1000 + k);
    // Each coordinate of the mean has standard deviation 1/sqrt(m d).
    ok += b.U.rowwise().mean().cwiseAbs().maxCoeff() <= 4.0 / std::sqrt(double(m) * d) ? 1 : 0;
  }
  EXPECT_GE(ok, 0.99 * n_banks);
}
