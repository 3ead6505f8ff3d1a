#include <gtest/gtest.h>

#include <cmath>

#include "tinylr/analysis.hpp"
#include "tinylr/lr_bound.hpp"

using namespace tinylr;

namespace {

DataRecipe linear_recipe(int d, ActKind act, double scale = 1.0) {
  RecipeDescriptor r;
  r.id = "lin";
  r.law.d = d;
  r.basis = {"u1", "u2"};
  r.c = {scale * d, -0.5 * scale * d};
  r.feature.act = act;
  return make_recipe(r);
}

DataRecipe zero_recipe(int d) {
  RecipeDescriptor r;
  r.id = "zero";
  r.law.d = d;
  return make_recipe(r);
}

// Explicit feature matrix, one row per sample, built with scalar loops.
Eigen::MatrixXd dense_features(const FeatureBank& bank, ActKind act, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd P(X.rows(), bank.m());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < bank.m(); ++j) {
      double z = 0.0;
      for (Eigen::Index k = 0; k < X.cols(); ++k) z += bank.U(k, j) * X(i, k);
      P(i, j) = activate(act, z);
    }
  return P;
}

Eigen::MatrixXd dense_hessian(const RandomFeatureModel& model, const EvalSet& val) {
  const Eigen::MatrixXd P = dense_features(model.bank, model.act.kind, val.X);
  return P.transpose() * P / (double(model.m()) * double(val.size()));
}

}  // namespace

TEST(EtaTinyBound, FormulaExample) {
  const BoundValue b = eta_tiny_bound(0.1, 2.0, 4.0, 0.0, 32);
  EXPECT_FALSE(b.unbounded);
  EXPECT_DOUBLE_EQ(b.value, 0.0125);
}

TEST(EtaTinyBound, LimitsAndLinearity) {
  const double big_B = eta_tiny_bound(0.1, 2.0, 4.0, 7.0, 1e300).value;
  EXPECT_DOUBLE_EQ(big_B, 0.1 / (2.0 * 4.0));
  EXPECT_DOUBLE_EQ(eta_tiny_bound(0.2, 2.0, 4.0, 3.0, 8).value, 2.0 * eta_tiny_bound(0.1, 2.0, 4.0, 3.0, 8).value);
  EXPECT_DOUBLE_EQ(eta_tiny_bound(0.1, 2.0, 4.0, 8.0, 4).value, 0.1 / (2.0 * (4.0 + 2.0)));
  EXPECT_TRUE(eta_tiny_bound(0.1, 0.0, 4.0, 1.0, 4).unbounded);
  EXPECT_TRUE(eta_tiny_bound(0.1, 2.0, 0.0, 0.0, 4).unbounded);
  EXPECT_THROW(eta_tiny_bound(-0.1, 2.0, 4.0, 0.0, 4), std::invalid_argument);
  EXPECT_THROW(eta_tiny_bound(0.1, 2.0, 4.0, 0.0, 0), std::invalid_argument);
}

TEST(FloatFloor, SinglePrecisionIsTwoToMinus23) {
  const Eigen::VectorXd theta = Eigen::VectorXd::Constant(3, 0.5);
  const double f = float_floor(theta, 1.0, Precision::f32);
  EXPECT_EQ(f, 0x1.0p-23);
  EXPECT_NEAR(f, 1.19e-7, 0.005e-7);
  EXPECT_EQ(float_floor(theta, 1.0, Precision::f64) / f, 0x1.0p-29);
  EXPECT_EQ(float_floor(Eigen::VectorXd::Constant(2, -4.0), 2.0, Precision::f32), 0x1.0p-23 * 4.0 / 2.0);
  EXPECT_THROW(float_floor(theta, 0.0, Precision::f32), std::invalid_argument);
}

TEST(FloatFloor, HalfPrecisionRunBelowFloorLeavesThetaUnchanged) {
  const int d = 4, m = 16;
  const DataRecipe r = linear_recipe(d, ActKind::tanh);
  RandomFeatureModel model(init_features(d, m, WeightDist::sphere, 3), ActKind::tanh);
  Stream s(4);
  for (auto& t : model.theta) t = round_to(Precision::f16, 1.0 + s.uniform() * 0.99);
  // |grad_i| <= (|f| + |y|) max|phi| / sqrt(m), with |phi| <= 1 for tanh.
  double ymax = 0.0;
  const EvalSet probe = make_eval_set(r, 4096, Stream(5));
  ymax = probe.y.cwiseAbs().maxCoeff() * 1.5;
  const double fmax = model.theta.cwiseAbs().sum() / std::sqrt(double(m));
  const double grad_scale = (fmax + ymax) / std::sqrt(double(m));
  const double floor = float_floor(model.theta, grad_scale, Precision::f16);
  const Eigen::VectorXd before = model.theta;

  TrainConfig tc;
  tc.eta = floor / 8.0;
  tc.B = 8;
  tc.T = 100;
  tc.stream = Stream(6);
  tc.warm_start = true;
  tc.precision = Precision::f16;
  sgd_train(model, r, tc);
  EXPECT_TRUE((model.theta.array() == before.array()).all());

  // Well above the floor the same run moves theta.
  model.theta = before;
  tc.eta = 64.0 * floor;
  sgd_train(model, r, tc);
  EXPECT_FALSE((model.theta.array() == before.array()).all());
}

TEST(Hvp, MatchesDenseHessian) {
  const DataRecipe r = linear_recipe(8, ActKind::tanh);
  const EvalSet val = make_eval_set(r, 1000, Stream(1));
  const RandomFeatureModel model(init_features(8, 64, WeightDist::sphere, 2), ActKind::tanh);
  const Eigen::MatrixXd H = dense_hessian(model, val);
  Stream s(3);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd v(64);
    for (auto& x : v) x = s.normal();
    const Eigen::VectorXd ref = H * v;
    EXPECT_LE((hvp(model, val, v) - ref).norm(), 1e-10 * ref.norm());
    EXPECT_LE((hvp(model, val, 2.5 * v) - 2.5 * hvp(model, val, v)).norm(), 1e-12 * ref.norm());
  }
  EXPECT_THROW(hvp(model, val, Eigen::VectorXd::Ones(3)), std::invalid_argument);
}

TEST(Hvp, NullDirectionOfRankOneHessian) {
  const DataRecipe r = linear_recipe(3, ActKind::tanh);
  const EvalSet one = make_eval_set(r, 1, Stream(1));
  const RandomFeatureModel model(init_features(3, 10, WeightDist::sphere, 2), ActKind::tanh);
  const Eigen::VectorXd phi = featurize(model.bank, model.act, one.X.row(0).transpose());
  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(10, -1.0, 2.0);
  v -= phi * (phi.dot(v) / phi.squaredNorm());
  EXPECT_LE(hvp(model, one, v).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(PowerIteration, IdentityAndDiagonal) {
  const auto ident = [](const Eigen::VectorXd& v) -> Eigen::VectorXd { return v; };
  const PowerIterResult a = lambda_max_power_iter(ident, 5, 1e-10, 10, 1);
  EXPECT_NEAR(a.lambda, 1.0, 1e-15);
  EXPECT_EQ(a.iterations, 1);
  EXPECT_TRUE(a.converged);

  const auto diag = [](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    Eigen::VectorXd w = v;
    w[0] *= 3.0;
    return w;
  };
  const PowerIterResult b = lambda_max_power_iter(diag, 2, 1e-10, 200, 1);
  EXPECT_TRUE(b.converged);
  EXPECT_NEAR(b.lambda, 3.0, 3.0 * 1e-10);
  EXPECT_THROW(lambda_max_power_iter(diag, 2, 0.0, 10, 1), std::invalid_argument);
}

TEST(PowerIteration, UnconvergedIsFlagged) {
  const auto diag = [](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    Eigen::VectorXd w = v;
    w[0] *= 1.001;
    return w;
  };
  const PowerIterResult r = lambda_max_power_iter(diag, 2, 1e-14, 3, 1);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 3);
}

TEST(PowerIteration, MatchesDenseEigensolverAtWidth64) {
  const DataRecipe r = linear_recipe(8, ActKind::tanh);
  const EvalSet val = make_eval_set(r, 2000, Stream(7));
  const RandomFeatureModel model(init_features(8, 64, WeightDist::sphere, 8), ActKind::tanh);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense_hessian(model, val));
  const double ref = es.eigenvalues().maxCoeff();
  const PowerIterResult pr = val_lambda_max(model, val, 1e-10, 200);
  EXPECT_TRUE(pr.converged);
  EXPECT_LE(pr.iterations, 200);
  EXPECT_LE(std::abs(pr.lambda - ref), 1e-6 * ref);
  RecordProperty("iterations", pr.iterations);
}

TEST(Hessian, RayleighQuotientsAreNonNegative) {
  const DataRecipe r = linear_recipe(5, ActKind::scaled_erf);
  const EvalSet val = make_eval_set(r, 300, Stream(1));
  const RandomFeatureModel model(init_features(5, 40, WeightDist::box, 2), ActKind::scaled_erf);
  Stream s(3);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd v(40);
    for (auto& x : v) x = s.normal();
    EXPECT_GE(v.dot(hvp(model, val, v)), -1e-12);
  }
}

TEST(ProbeAlignment, ZeroTargetAtZeroThetaIsZero) {
  const DataRecipe r = zero_recipe(4);
  const EvalSet val = make_eval_set(r, 128, Stream(1));
  const RandomFeatureModel model(init_features(4, 16, WeightDist::sphere, 2), ActKind::tanh);
  const LossEstimate a = probe_alignment(model, r, val, 10, 8, Stream(3));
  EXPECT_EQ(a.estimate, 0.0);
  EXPECT_EQ(a.std_err, 0.0);
}

TEST(ProbeAlignment, SelfAlignmentIsSquaredValGradient) {
  const DataRecipe r = linear_recipe(4, ActKind::tanh);
  const EvalSet val = make_eval_set(r, 20000, Stream(1));
  RandomFeatureModel model(init_features(4, 16, WeightDist::sphere, 2), ActKind::tanh);
  model.theta.setConstant(0.2);
  const LossEstimate a = probe_alignment(model, r, val, 2000, 32, Stream(3));
  const double ref = val_gradient(model, val).squaredNorm();
  EXPECT_GT(a.estimate, 0.0);
  // The validation set is itself a sample, so allow its own error as well.
  EXPECT_NEAR(a.estimate, ref, 4.0 * a.std_err + 0.02 * ref);
}

TEST(ProbeAlignment, IdentityWidthFourMatchesDenseProducts) {
  const int d = 3, m = 4;
  const DataRecipe r = linear_recipe(d, ActKind::identity);
  const EvalSet val = make_eval_set(r, 50, Stream(1));
  RandomFeatureModel model(init_features(d, m, WeightDist::box, 2), ActKind::identity);
  model.theta << 0.3, -0.2, 0.5, 0.1;
  Stream s(4);
  const LabeledBatch b = sample_batch(r, 6, s);
  const double got = val_gradient(model, val).dot(batch_gradient(model, b));

  const Eigen::MatrixXd Pv = val.X * model.bank.U, Pb = b.X * model.bank.U;
  const double sm = std::sqrt(double(m));
  const Eigen::VectorXd gv = Pv.transpose() * (Pv * model.theta / sm - val.y) / (sm * val.size());
  const Eigen::VectorXd gb = Pb.transpose() * (Pb * model.theta / sm - b.y) / (sm * b.y.size());
  EXPECT_NEAR(got, gv.dot(gb), 1e-12 * std::max(1.0, std::abs(gv.dot(gb))));

  // The probe with a stream that yields that batch first agrees too.
  const LossEstimate a = probe_alignment(model, r, val, 1, 6, Stream(4));
  EXPECT_NEAR(a.estimate, gv.dot(gb), 1e-12 * std::max(1.0, std::abs(gv.dot(gb))));
}

TEST(GradNoise, PerSampleTraceByHandAtWidthFour) {
  const int d = 2, m = 4;
  RandomFeatureModel model(init_features(d, m, WeightDist::box, 5), ActKind::identity);
  model.theta << 1.0, -1.0, 0.5, 2.0;
  Eigen::MatrixXd X(3, d);
  X << 0.1, 0.2, -0.3, 0.4, 0.5, -0.6;
  const Eigen::Vector3d y(0.3, -0.1, 0.2);
  // g_i = (f(x_i) - y_i) phi(x_i) / sqrt(m), enumerated sample by sample.
  std::vector<Eigen::VectorXd> g;
  for (int i = 0; i < 3; ++i) {
    Eigen::VectorXd phi(m);
    for (int j = 0; j < m; ++j) phi[j] = model.bank.U(0, j) * X(i, 0) + model.bank.U(1, j) * X(i, 1);
    const double f = phi.dot(model.theta) / 2.0;
    g.push_back((f - y[i]) * phi / 2.0);
  }
  const Eigen::VectorXd mean = (g[0] + g[1] + g[2]) / 3.0;
  double tr = 0.0;
  for (const auto& v : g) tr += (v - mean).squaredNorm();
  tr /= 3.0;
  EXPECT_NEAR(per_sample_covariance_trace(model, X, y), tr, 1e-15);

  // Batches of one drawn from the three rows estimate the same trace.
  EvalSet pool{X, y};
  const NoiseStats ns = grad_noise_stats(model, pool, 1, 20000, Stream(6));
  EXPECT_NEAR(ns.sigma_g2, tr, 0.05 * tr);
  double gmax = 0.0;
  for (const auto& v : g) gmax = std::max(gmax, v.squaredNorm());
  EXPECT_NEAR(ns.G2, gmax, 1e-14 * gmax);
}

TEST(GradNoise, PointMassHasNoNoise) {
  RecipeDescriptor rd;
  rd.id = "point";
  rd.law.d = 3;
  rd.law.kind = LawKind::caps;
  rd.law.caps.push_back({1.0, Eigen::Vector3d(0, 0, 1), 0.0});
  rd.basis = {"u3"};
  rd.c = {3.0};
  const DataRecipe r = make_recipe(rd);
  RandomFeatureModel model(init_features(3, 12, WeightDist::sphere, 1), ActKind::tanh);
  model.theta.setConstant(0.1);
  const NoiseStats ns = grad_noise_stats(model, r, 16, 32, Stream(2));
  EXPECT_LE(ns.sigma_g2, 1e-28);
  EXPECT_GT(ns.G2, 0.0);
}

TEST(GradNoise, BatchVarianceScalesInverselyWithB) {
  const DataRecipe r = linear_recipe(6, ActKind::tanh);
  RandomFeatureModel model(init_features(6, 32, WeightDist::sphere, 1), ActKind::tanh);
  const NoiseStats a = grad_noise_stats(model, r, 16, 64, Stream(2));
  const NoiseStats b = grad_noise_stats(model, r, 32, 64, Stream(3));
  EXPECT_NEAR(b.batch_var / a.batch_var, 0.5, 0.25 * 0.5);
  EXPECT_THROW(grad_noise_stats(model, r, 16, 1, Stream(2)), std::invalid_argument);
  EXPECT_THROW(grad_noise_stats(model, r, 16, 7, Stream(2)), std::invalid_argument);
}

TEST(Taylor, TrivialCases) {
  TaylorStats st;
  st.a = 0.3;
  st.b = 2.0;
  st.trHSigma = 5.0;
  st.B = 4;
  EXPECT_EQ(taylor_predict(st, 0.0), 0.0);
  EXPECT_LT(taylor_predict(st, 1e-6), 0.0);
  EXPECT_DOUBLE_EQ(taylor_predict(st, 0.1), -0.03 + 0.005 * (2.0 + 1.25));
}

TEST(Taylor, PredictionMatchesOneStepSimulation) {
  const DataRecipe r = linear_recipe(6, ActKind::tanh, 0.8);
  const DataRecipe vr = linear_recipe(6, ActKind::tanh, 1.0);
  const EvalSet val = make_eval_set(vr, 4000, Stream(1));
  RandomFeatureModel model(init_features(6, 48, WeightDist::sphere, 2), ActKind::tanh);
  model.theta.setConstant(0.05);
  ProbeOptions opt;
  opt.B = 16;
  opt.n_batches = 200;
  const TaylorStats st = taylor_stats(model, r, val, opt, Stream(3));
  ASSERT_GT(st.a, 0.0);
  std::vector<double> err, ratio;
  for (double c : {1e-4, 1e-3, 1e-2}) {
    const double eta = c / st.lambda_max;
    const OneStepMeasure ms = measure_one_step(model, r, val, st, eta, opt.n_batches, Stream(3));
    err.push_back(ms.rel_error);
    ratio.push_back(std::abs(ms.measured - ms.predicted) / (eta * eta));
  }
  EXPECT_LE(err[0], 0.2);
  EXPECT_LE(err[0], err[1]);
  EXPECT_LE(err[1], err[2]);
  // Second-order agreement: the residual over eta^2 stays bounded.
  EXPECT_LE(ratio[0], 2.0 * ratio[2] + 1e-12);
}

TEST(EtaBound, MinPairGapAndRecommendation) {
  std::vector<TaylorStats> st(3);
  st[0].a = 0.5;
  st[1].a = 0.2;
  st[2].a = 0.45;
  for (auto& s : st) {
    s.lambda_max = 2.0;
    s.G2 = 4.0;
    s.B = 8;
  }
  st[1].G2 = 6.0;
  st[2].sigma_g2 = 16.0;
  const EtaBound eb = compute_eta_bound({"A", "B", "C"}, st, 1.0, 1e-7);
  EXPECT_NEAR(eb.delta_a, 0.05, 1e-15);
  EXPECT_EQ(eb.argmin_pair, (std::pair<std::string, std::string>{"A", "C"}));
  EXPECT_NEAR(eb.eta_tiny_upper, 0.05 / (2.0 * (6.0 + 2.0)), 1e-15);
  EXPECT_TRUE(eb.usable);
  EXPECT_GE(eb.recommended_eta, eb.eta_float_floor);
  EXPECT_LE(eb.recommended_eta, eb.eta_tiny_upper);
  EXPECT_EQ(eb.recipe_pairs.size(), 3u);

  // Floor above the upper limit leaves the window unusable.
  const EtaBound bad = compute_eta_bound({"A", "B", "C"}, st, 1.0, 1.0);
  EXPECT_FALSE(bad.usable);

  // The rule of thumb caps the recommendation at the standard eta over 30.
  const EtaBound small = compute_eta_bound({"A", "B", "C"}, st, 0.03, 1e-9);
  EXPECT_DOUBLE_EQ(small.recommended_eta, 0.001);
  EXPECT_THROW(compute_eta_bound({"A"}, {st[0]}, 1.0, 0.0), std::invalid_argument);
}

TEST(EtaBound, RecommendationLiesInWindowForRandomInputs) {
  Stream s(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TaylorStats> st(4);
    for (auto& t : st) {
      t.a = s.normal();
      t.lambda_max = s.uniform();
      t.G2 = s.uniform();
      t.sigma_g2 = s.uniform();
      t.B = 16;
    }
    const double floor = 1e-6 * s.uniform();
    const EtaBound eb = compute_eta_bound({"a", "b", "c", "d"}, st, s.uniform(), floor);
    if (!eb.usable) continue;
    EXPECT_GE(eb.recommended_eta, eb.eta_float_floor);
    EXPECT_LE(eb.recommended_eta, eb.eta_tiny_upper);
  }
}

TEST(Probe, PooledStatsAverageAlignmentAndMaxNoise) {
  TaylorStats a, b;
  a.a = 1.0;
  b.a = 3.0;
  a.a_se = 0.3;
  b.a_se = 0.4;
  a.G2 = 2.0;
  b.G2 = 5.0;
  a.lambda_max = 7.0;
  b.lambda_max = 1.0;
  const TaylorStats p = pool_stats({a, b});
  EXPECT_EQ(p.a, 2.0);
  EXPECT_NEAR(p.a_se, 0.25, 1e-15);
  EXPECT_EQ(p.G2, 5.0);
  EXPECT_EQ(p.lambda_max, 7.0);
}
