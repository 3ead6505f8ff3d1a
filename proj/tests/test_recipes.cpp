#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "tinylr/quadrature.hpp"
#include "tinylr/recipes.hpp"

using namespace tinylr;

namespace {

RecipeDescriptor sphere_recipe(int d, ActKind act, std::vector<std::string> basis, std::vector<double> c) {
  RecipeDescriptor r;
  r.id = "r";
  r.law.d = d;
  r.basis = std::move(basis);
  r.c = std::move(c);
  r.feature.act = act;
  return r;
}

// Plain Monte Carlo over u for E[sigma(u.x) nu(u)].
std::pair<double, double> mc_target(const DataRecipe& r, const Eigen::VectorXd& x, long n, std::uint64_t seed) {
  Stream s(seed);
  Eigen::VectorXd u(x.size());
  double sum = 0.0, sum2 = 0.0;
  for (long i = 0; i < n; ++i) {
    sample_weight(r.feature().wdist, s, u);
    const double v = activate(r.feature().act, u.dot(x)) * r.coeff()(u);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  return {mean, std::sqrt((sum2 / n - mean * mean) / n)};
}

}  // namespace

TEST(Quadrature, GegenbauerIntegratesPolynomialsExactly) {
  // t = <u, e> on the sphere in R^5: E[t^2] = 1/5, E[t^4] = 3/35.
  const QuadRule q = sphere_projection_rule(5, 16);
  double m0 = 0, m1 = 0, m2 = 0, m4 = 0;
  for (std::size_t i = 0; i < q.t.size(); ++i) {
    m0 += q.w[i];
    m1 += q.w[i] * q.t[i];
    m2 += q.w[i] * q.t[i] * q.t[i];
    m4 += q.w[i] * std::pow(q.t[i], 4);
  }
  EXPECT_NEAR(m0, 1.0, 1e-14);
  EXPECT_NEAR(m1, 0.0, 1e-15);
  EXPECT_NEAR(m2, 1.0 / 5, 1e-14);
  EXPECT_NEAR(m4, 3.0 / 35, 1e-14);
}

TEST(Quadrature, CapAreaFraction) {
  EXPECT_NEAR(cap_area_fraction(3, std::numbers::pi / 2), 0.5, 1e-12);
  EXPECT_NEAR(cap_area_fraction(3, 1.0), (1 - std::cos(1.0)) / 2, 1e-12);
  EXPECT_DOUBLE_EQ(cap_area_fraction(2, 0.5), 0.5 / std::numbers::pi);
  EXPECT_EQ(cap_area_fraction(8, std::numbers::pi), 1.0);
}

TEST(Sampling, CapDrawsStayInsideTheCap) {
  Stream s(9);
  const Eigen::VectorXd c = Eigen::VectorXd::Unit(8, 1);
  Eigen::VectorXd x(8);
  double max_angle = 0.0;
  for (int i = 0; i < 20000; ++i) {
    sample_cap(s, c, 0.5, x);
    EXPECT_NEAR(x.norm(), 1.0, 1e-12);
    max_angle = std::max(max_angle, std::acos(std::clamp(x.dot(c), -1.0, 1.0)));
  }
  EXPECT_LE(max_angle, 0.5 + 1e-12);
  EXPECT_GT(max_angle, 0.45);
}

TEST(Sampling, CapPolarAngleMatchesAreaLaw) {
  // P(angle <= w) must equal cap_area_fraction(d, w) / cap_area_fraction(d, width).
  Stream s(10);
  const int d = 8, n = 40000;
  const double width = 1.2, half = 0.9;
  const Eigen::VectorXd c = Eigen::VectorXd::Unit(d, 0);
  Eigen::VectorXd x(d);
  int inside = 0;
  for (int i = 0; i < n; ++i) {
    sample_cap(s, c, width, x);
    inside += std::acos(std::clamp(x[0], -1.0, 1.0)) <= half;
  }
  const double p = cap_area_fraction(d, half) / cap_area_fraction(d, width);
  EXPECT_NEAR(static_cast<double>(inside) / n, p, 4.0 * std::sqrt(p * (1 - p) / n));
}

TEST(Sampling, SphereSecondMomentIsIsotropic) {
  const int d = 4, n = 100000;
  Stream s(12);
  Eigen::VectorXd u(d);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < n; ++i) {
    sample_sphere(s, u);
    M += u * u.transpose();
  }
  M /= n;
  const Eigen::MatrixXd ref = Eigen::MatrixXd::Identity(d, d) / d;
  EXPECT_LE((M - ref).cwiseAbs().maxCoeff(), 5e-3);
}

TEST(MakeRecipe, ZeroCoefficientsGiveZeroTarget) {
  const DataRecipe r = make_recipe(sphere_recipe(3, ActKind::tanh, {"u1", "u2*u3"}, {0.0, 0.0}));
  Stream s(1);
  const LabeledBatch b = sample_batch(r, 1, s);
  EXPECT_EQ(b.y[0], 0.0);
  Eigen::VectorXd x(3);
  for (int i = 0; i < 100; ++i) {
    r.sample_input(s, x);
    EXPECT_EQ(r.target_value(x), 0.0);
  }
}

TEST(MakeRecipe, IdentityClosedForm) {
  const int d = 5;
  const DataRecipe r = make_recipe(sphere_recipe(d, ActKind::identity, {"u1"}, {double(d)}));
  Eigen::VectorXd x(d);
  x << 0.3, 0.4, 0.5, 0.5, 0.5;
  EXPECT_NEAR(r.target_value(x), 0.3, 1e-15);
}

TEST(MakeRecipe, TanhTargetMatchesMonteCarlo) {
  // d = 2, nu(u) = u1, x = (0.5, 0) lies inside the ball, so use the box law.
  RecipeDescriptor spec = sphere_recipe(2, ActKind::tanh, {"u1"}, {1.0});
  spec.law.kind = LawKind::box;
  const DataRecipe r = make_recipe(spec);
  Eigen::VectorXd x(2);
  x << 0.5, 0.0;
  const auto [mc, se] = mc_target(r, x, 1000000, 77);
  EXPECT_NEAR(r.target_value(x), mc, 3.0 * se);
}

TEST(MakeRecipe, TanhSphereTargetMatchesMonteCarlo) {
  const DataRecipe r = make_recipe(sphere_recipe(8, ActKind::tanh, {"u2", "u3*u3", "1"}, {2.0, 1.5, 0.25}));
  Stream s(4);
  Eigen::VectorXd x(8);
  for (int i = 0; i < 3; ++i) {
    r.sample_input(s, x);
    const auto [mc, se] = mc_target(r, x, 1000000, 100 + i);
    EXPECT_NEAR(r.target_value(x), mc, 3.0 * se);
  }
}

TEST(MakeRecipe, Errors) {
  RecipeDescriptor bad = sphere_recipe(2, ActKind::tanh, {"u1", "u2"}, {1.0});
  EXPECT_THROW(make_recipe(bad), std::invalid_argument);
  bad = sphere_recipe(2, ActKind::tanh, {"u3"}, {1.0});
  EXPECT_THROW(make_recipe(bad), std::invalid_argument);
  bad = sphere_recipe(2, ActKind::tanh, {"u1"}, {INFINITY});
  EXPECT_THROW(make_recipe(bad), std::invalid_argument);
  bad = sphere_recipe(2, ActKind::tanh, {"u1"}, {1.0});
  bad.label_noise = 0.1;
  EXPECT_THROW(make_recipe(bad), std::invalid_argument);
  const DataRecipe r = make_recipe(sphere_recipe(2, ActKind::tanh, {"u1"}, {1.0}));
  EXPECT_THROW(r.target_value(Eigen::Vector2d(0.5, 0.0)), std::domain_error);
}

TEST(SampleBatch, ClonedStreamsGiveIdenticalBatches) {
  const DataRecipe r = make_recipe(sphere_recipe(4, ActKind::tanh, {"u1"}, {1.0}));
  Stream a(3);
  for (int i = 0; i < 7; ++i) a.normal();
  Stream b = a;
  const LabeledBatch x = sample_batch(r, 64, a), y = sample_batch(r, 64, b);
  EXPECT_TRUE((x.X.array() == y.X.array()).all());
  EXPECT_TRUE((x.y.array() == y.y.array()).all());
}

TEST(SampleBatch, LabelMeanOfOddTargetIsZero) {
  const int d = 3, n = 100000;
  const DataRecipe r = make_recipe(sphere_recipe(d, ActKind::identity, {"u1"}, {double(d)}));
  Stream s(8);
  const LabeledBatch b = sample_batch(r, n, s);
  // Var(x1) = 1/d on the sphere.
  EXPECT_NEAR(b.y.mean(), 0.0, 3.0 * std::sqrt(1.0 / d / n));
}

TEST(SampleBatch, LabelsEqualTargetsExactly) {
  RecipeDescriptor spec = sphere_recipe(8, ActKind::tanh, {"u2", "u4"}, {1.0, -0.5});
  spec.law.kind = LawKind::caps;
  spec.law.caps = {{0.5, {}, std::numbers::pi},
                   {0.5, Eigen::VectorXd::Unit(8, 1), 0.5}};
  const DataRecipe r = make_recipe(spec);
  Stream s(21);
  const LabeledBatch b = sample_batch(r, 10000, s);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < b.size(); ++i)
    worst = std::max(worst, std::abs(b.y[i] - r.target_value(b.X.row(i).transpose())));
  EXPECT_EQ(worst, 0.0);
}

TEST(SampleBatch, IdentityRecipeWeightMoments) {
  // The identity target is 1/d times nu's linear part, which relies on E[u u^T] = I/d.
  const DataRecipe r = make_recipe(sphere_recipe(3, ActKind::identity, {"u1", "u2"}, {1.0, 2.0}));
  Eigen::Vector3d x(0.6, 0.0, 0.8);
  const auto [mc, se] = mc_target(r, x, 400000, 5);
  EXPECT_NEAR(r.target_value(x), mc, 3.0 * se);
  EXPECT_NEAR(r.target_value(x), 0.6 / 3.0, 1e-15);
}

TEST(Json, RoundTrip) {
  const nlohmann::json j = nlohmann::json::parse(R"({
    "id": "A",
    "input_law": {"d": 3, "kind": "caps", "components": [
      {"weight": 0.5, "width": 3.14159265358979},
      {"weight": 0.5, "width": 0.5, "center": [0, 1, 0]}]},
    "coeff": {"basis": ["u1", "u2*u3"], "c": [1.0, 2.0]}
  })");
  const RecipeDescriptor r = recipe_from_json(j);
  EXPECT_EQ(r.id, "A");
  EXPECT_EQ(r.law.kind, LawKind::caps);
  ASSERT_EQ(r.law.caps.size(), 2u);
  EXPECT_EQ(r.law.caps[1].center[1], 1.0);
  const RecipeDescriptor back = recipe_from_json(recipe_to_json(r));
  EXPECT_EQ(recipe_to_json(back), recipe_to_json(r));
}

TEST(WellBehaved, ZeroTargetPasses) {
  const DataRecipe r = make_recipe(sphere_recipe(3, ActKind::tanh, {"u1"}, {0.0}));
  // The tanh kernel is analytic, so its Gram spectrum decays geometrically
  // and drops below the 1e-10 tolerance once the grid passes ~24 points.
  const WellBehavedReport rep = validate_well_behaved(r, r, 16);
  EXPECT_GT(rep.gram_lambda_min, kDegenerateTol);
  EXPECT_TRUE(validate_well_behaved(r, r, 64).degenerate);
  EXPECT_TRUE(rep.full_support);
  EXPECT_TRUE(rep.nu_bounded);
  EXPECT_FALSE(rep.degenerate);
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.compatibility, "assumed, not checkable");
}

TEST(WellBehaved, PointMassFailsFullSupport) {
  RecipeDescriptor spec = sphere_recipe(3, ActKind::tanh, {"u1"}, {1.0});
  spec.law.kind = LawKind::caps;
  spec.law.caps = {{1.0, Eigen::VectorXd::Unit(3, 0), 0.0}};
  const DataRecipe r = make_recipe(spec);
  const WellBehavedReport rep = validate_well_behaved(r, r, 32);
  EXPECT_FALSE(rep.full_support);
  EXPECT_FALSE(rep.passed);
}

TEST(WellBehaved, IdentityKernelGram) {
  // K(x, x') = x.x'/d has rank d, so a 64-point Gram is singular and must be
  // flagged; its positive eigenvalues divided by grid_n concentrate at 1/d^2.
  const int d = 4;
  const DataRecipe r = make_recipe(sphere_recipe(d, ActKind::identity, {"u1"}, {1.0}));
  const WellBehavedReport rep = validate_well_behaved(r, r, 64);
  EXPECT_TRUE(rep.degenerate);
  EXPECT_FALSE(rep.passed);
  EXPECT_NEAR(rep.gram_lambda_max, 1.0 / (d * d), 0.8 / (d * d));
  EXPECT_NEAR(rep.gram_lambda_pos, 1.0 / (d * d), 0.8 / (d * d));
  EXPECT_THROW(validate_well_behaved(r, r, 8), std::invalid_argument);
}
