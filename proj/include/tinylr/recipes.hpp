#pragma once
// Synthetic data recipes: an input law on a compact set plus a bounded
// coefficient function nu, labelled by f*(x) = E_u[s(<u,x>) nu(u)].

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tinylr/activation.hpp"
#include "tinylr/kernel.hpp"
#include "tinylr/quadrature.hpp"
#include "tinylr/rng.hpp"
#include "tinylr/sampling.hpp"

namespace tinylr {

using json = nlohmann::json;

enum class LawKind : int { sphere = 0, box = 1, caps = 2 };

struct CapComponent {
  double weight = 1.0;
  Eigen::VectorXd center;
  double width = std::numbers::pi;
};

struct InputLaw {
  int d = 1;
  LawKind kind = LawKind::sphere;
  std::vector<CapComponent> caps;  // only for LawKind::caps

  bool on_box() const { return kind == LawKind::box; }
};

// The weight law and activation that define f* through the nu-integral.
struct FeatureLaw {
  ActKind act = ActKind::tanh;
  WeightDist wdist = WeightDist::sphere;
  int n_u = 1 << 16;  // quasi-Monte Carlo draws when no 1-D rule applies
  std::uint64_t quad_seed = 0x71756164ULL;
  int gauss_nodes = 64;
};

// nu(u) = c0 + <c1, u> + u^T C u with C symmetric.
struct CoefficientFunction {
  std::vector<std::string> basis;
  std::vector<double> c;
  double c0 = 0.0;
  Eigen::VectorXd c1;
  Eigen::MatrixXd C;

  double operator()(const Eigen::VectorXd& u) const { return c0 + c1.dot(u) + u.dot(C * u); }

  // |u_k| <= 1 on both weight supports, so the coefficients bound nu.
  double sup_bound() const {
    double b = std::abs(c0) + c1.cwiseAbs().sum();
    for (Eigen::Index i = 0; i < C.rows(); ++i)
      for (Eigen::Index j = 0; j < C.cols(); ++j) b += std::abs(C(i, j));
    return b;
  }
  bool is_zero() const { return c0 == 0.0 && c1.isZero(0.0) && C.isZero(0.0); }
};

struct RecipeDescriptor {
  std::string id;
  InputLaw law;
  std::vector<std::string> basis;
  std::vector<double> c;
  FeatureLaw feature;
  double label_noise = 0.0;
};

struct LabeledBatch {
  Eigen::MatrixXd X;  // n x d
  Eigen::VectorXd y;
  Eigen::Index size() const { return y.size(); }
};

namespace detail {

// Parses "1", "u3", "u2*u5" (coordinates are 1-based).
inline void add_basis_term(CoefficientFunction& f, const std::string& name, double c, int d) {
  auto coord = [&](const std::string& s) {
    if (s.size() < 2 || s[0] != 'u') throw std::invalid_argument("bad basis term: " + name);
    std::size_t pos = 0;
    const int k = std::stoi(s.substr(1), &pos);
    if (pos + 1 != s.size() || k < 1 || k > d)
      throw std::invalid_argument("basis coordinate out of range: " + name);
    return k - 1;
  };
  if (name == "1") {
    f.c0 += c;
    return;
  }
  const auto star = name.find('*');
  if (star == std::string::npos) {
    f.c1[coord(name)] += c;
    return;
  }
  const int k = coord(name.substr(0, star)), l = coord(name.substr(star + 1));
  if (k == l) {
    f.C(k, k) += c;
  } else {
    f.C(k, l) += 0.5 * c;
    f.C(l, k) += 0.5 * c;
  }
}

}  // namespace detail

class DataRecipe {
 public:
  const std::string& id() const { return id_; }
  const InputLaw& law() const { return law_; }
  const CoefficientFunction& coeff() const { return coeff_; }
  const FeatureLaw& feature() const { return feature_; }
  int dim() const { return law_.d; }

  bool in_domain(const Eigen::VectorXd& x) const {
    if (x.size() != law_.d) return false;
    if (law_.on_box()) return (x.array().abs() <= 1.0 + 1e-12).all();
    return std::abs(x.norm() - 1.0) <= 1e-9;
  }

  double target_value(const Eigen::VectorXd& x) const {
    if (!in_domain(x)) throw std::domain_error("target_value: point outside the input space of " + id_);
    return eval_target(x);
  }

  // Targets for every row of X; identical to per-row target_value.
  Eigen::VectorXd target_values(const Eigen::MatrixXd& X) const {
    Eigen::VectorXd y(X.rows());
    Eigen::VectorXd x(law_.d);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      x = X.row(i).transpose();
      y[i] = eval_target(x);
    }
    return y;
  }

  template <class V>
  void sample_input(Stream& s, V&& out) const {
    switch (law_.kind) {
      case LawKind::sphere: sample_sphere(s, out); return;
      case LawKind::box: sample_box(s, out); return;
      case LawKind::caps: {
        const double r = s.uniform();
        std::size_t k = 0;
        double acc = law_.caps[0].weight;
        while (r > acc && k + 1 < law_.caps.size()) acc += law_.caps[++k].weight;
        sample_cap(s, law_.caps[k].center, law_.caps[k].width, out);
        return;
      }
    }
  }

  // Density of the input law relative to the uniform law on its space.
  double relative_density(const Eigen::VectorXd& x) const {
    if (law_.kind != LawKind::caps) return 1.0;
    double p = 0.0;
    for (const auto& cap : law_.caps) {
      const double frac = cap_area_fraction(law_.d, cap.width);
      if (frac <= 0.0) continue;
      const double ang = std::acos(std::clamp(x.dot(cap.center), -1.0, 1.0));
      if (ang <= cap.width) p += cap.weight / frac;
    }
    return p;
  }

 private:
  friend DataRecipe make_recipe(const RecipeDescriptor&);

  double eval_target(const Eigen::VectorXd& x) const {
    if (coeff_.is_zero()) return 0.0;
    const int d = law_.d;
    if (feature_.act == ActKind::identity) {
      // Odd moments of a symmetric weight law vanish.
      return coord_second_moment(feature_.wdist, d) * coeff_.c1.dot(x);
    }
    if (feature_.wdist == WeightDist::sphere) {
      const double r = x.norm();
      if (r == 0.0) return 0.0;  // every supported activation is odd
      const Eigen::VectorXd xh = x / r;
      const double lin = coeff_.c1.dot(xh);
      const double quad = xh.dot(coeff_.C * xh);
      const double perp = d > 1 ? (coeff_.C.trace() - quad) / (d - 1) : 0.0;
      const std::size_t nq = rule_.t.size();
      alignas(64) double buf[256];
      for (std::size_t q = 0; q < nq; ++q) buf[q] = r * rule_.t[q];
      activate_inplace(feature_.act, buf, static_cast<Eigen::Index>(nq));
      double acc = 0.0;
      for (std::size_t q = 0; q < nq; ++q) {
        const double t = rule_.t[q];
        acc += rule_.w[q] * buf[q] * (coeff_.c0 + t * lin + t * t * quad + (1.0 - t * t) * perp);
      }
      return acc;
    }
    Eigen::VectorXd z = qmc_u_ * x;
    activate_inplace(feature_.act, z.data(), z.size());
    return z.dot(qmc_nu_) / static_cast<double>(z.size());
  }

  std::string id_;
  InputLaw law_;
  CoefficientFunction coeff_;
  FeatureLaw feature_;
  QuadRule rule_;
  Eigen::MatrixXd qmc_u_;
  Eigen::VectorXd qmc_nu_;
};

inline DataRecipe make_recipe(const RecipeDescriptor& spec) {
  const int d = spec.law.d;
  if (d < 1) throw std::invalid_argument("recipe " + spec.id + ": dimension must be positive");
  if (spec.label_noise != 0.0) throw std::invalid_argument("recipe " + spec.id + ": label noise must be zero");
  if (spec.basis.size() != spec.c.size())
    throw std::invalid_argument("recipe " + spec.id + ": basis and coefficient lengths differ");
  if (spec.feature.gauss_nodes < 2 || spec.feature.gauss_nodes > 256)
    throw std::invalid_argument("recipe " + spec.id + ": gauss_nodes must lie in [2, 256]");

  DataRecipe r;
  r.id_ = spec.id;
  r.law_ = spec.law;
  r.feature_ = spec.feature;

  if (r.law_.kind == LawKind::caps) {
    if (r.law_.caps.empty()) throw std::invalid_argument("recipe " + spec.id + ": empty cap mixture");
    double tot = 0.0;
    for (auto& cap : r.law_.caps) {
      if (!(cap.weight >= 0.0)) throw std::invalid_argument("recipe " + spec.id + ": negative mixture weight");
      if (!(cap.width >= 0.0)) throw std::invalid_argument("recipe " + spec.id + ": negative cap width");
      if (cap.center.size() == 0) {
        cap.center = Eigen::VectorXd::Unit(d, 0);
        if (cap.width < std::numbers::pi) throw std::invalid_argument("recipe " + spec.id + ": cap needs a center");
      }
      if (cap.center.size() != d) throw std::invalid_argument("recipe " + spec.id + ": cap center dimension");
      if (std::abs(cap.center.norm() - 1.0) > 1e-9)
        throw std::invalid_argument("recipe " + spec.id + ": cap center must be a unit vector");
      tot += cap.weight;
    }
    if (std::abs(tot - 1.0) > 1e-12)
      throw std::invalid_argument("recipe " + spec.id + ": mixture weights must sum to 1");
  }

  r.coeff_.basis = spec.basis;
  r.coeff_.c = spec.c;
  r.coeff_.c1 = Eigen::VectorXd::Zero(d);
  r.coeff_.C = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t j = 0; j < spec.basis.size(); ++j) {
    if (!std::isfinite(spec.c[j]))
      throw std::invalid_argument("recipe " + spec.id + ": unbounded coefficient for " + spec.basis[j]);
    detail::add_basis_term(r.coeff_, spec.basis[j], spec.c[j], d);
  }

  if (r.feature_.act != ActKind::identity) {
    if (r.feature_.wdist == WeightDist::sphere) {
      r.rule_ = sphere_projection_rule(d, r.feature_.gauss_nodes);
    } else {
      const Eigen::MatrixXd P = shifted_halton(r.feature_.n_u, d, r.feature_.quad_seed);
      r.qmc_u_ = (2.0 * P.array() - 1.0).matrix();
      r.qmc_nu_.resize(r.feature_.n_u);
      for (int j = 0; j < r.feature_.n_u; ++j) r.qmc_nu_[j] = r.coeff_(r.qmc_u_.row(j).transpose());
    }
  }
  return r;
}

inline LabeledBatch sample_batch(const DataRecipe& recipe, Eigen::Index n, Stream& stream) {
  if (n < 1) throw std::invalid_argument("sample_batch: n must be positive");
  LabeledBatch b;
  b.X.resize(n, recipe.dim());
  Eigen::VectorXd x(recipe.dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    recipe.sample_input(stream, x);
    b.X.row(i) = x.transpose();
  }
  b.y = recipe.target_values(b.X);
  return b;
}

// ---------------------------------------------------------------- JSON

inline InputLaw input_law_from_json(const json& j) {
  InputLaw law;
  law.d = j.at("d").get<int>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "sphere" || kind == "uniform-on-unit-sphere") {
    law.kind = LawKind::sphere;
  } else if (kind == "box" || kind == "uniform-on-box") {
    law.kind = LawKind::box;
  } else if (kind == "caps" || kind == "mixture-of-spherical-caps") {
    law.kind = LawKind::caps;
    for (const auto& c : j.at("components")) {
      CapComponent cap;
      cap.weight = c.at("weight").get<double>();
      cap.width = c.value("width", std::numbers::pi);
      if (c.contains("center")) {
        const auto v = c.at("center").get<std::vector<double>>();
        cap.center = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      }
      law.caps.push_back(cap);
    }
  } else {
    throw std::invalid_argument("unknown input law kind: " + kind);
  }
  return law;
}

inline json input_law_to_json(const InputLaw& law) {
  json j;
  j["d"] = law.d;
  j["kind"] = law.kind == LawKind::sphere ? "sphere" : law.kind == LawKind::box ? "box" : "caps";
  if (law.kind == LawKind::caps) {
    j["components"] = json::array();
    for (const auto& c : law.caps)
      j["components"].push_back(
          {{"weight", c.weight},
           {"width", c.width},
           {"center", std::vector<double>(c.center.data(), c.center.data() + c.center.size())}});
  }
  return j;
}

// The feature law may come from the recipe itself or from the enclosing config.
inline RecipeDescriptor recipe_from_json(const json& j, const FeatureLaw& defaults = {}) {
  RecipeDescriptor r;
  r.id = j.at("id").get<std::string>();
  r.law = input_law_from_json(j.at("input_law"));
  r.basis = j.at("coeff").at("basis").get<std::vector<std::string>>();
  r.c = j.at("coeff").at("c").get<std::vector<double>>();
  r.feature = defaults;
  if (j.contains("activation")) r.feature.act = parse_activation(j["activation"].get<std::string>());
  if (j.contains("weight_dist")) r.feature.wdist = parse_weight_dist(j["weight_dist"].get<std::string>());
  r.label_noise = j.value("label_noise", 0.0);
  return r;
}

inline json recipe_to_json(const RecipeDescriptor& r) {
  return {{"id", r.id},
          {"input_law", input_law_to_json(r.law)},
          {"coeff", {{"basis", r.basis}, {"c", r.c}}},
          {"activation", std::string(to_string(r.feature.act))},
          {"weight_dist", std::string(to_string(r.feature.wdist))}};
}

// ------------------------------------------------------- well-behavedness

struct WellBehavedReport {
  double density_min = 0.0;       // over points drawn uniformly from the input space
  bool full_support = false;
  double val_density_min = 0.0;   // recipe density at validation draws
  double gram_lambda_min = 0.0;   // smallest eigenvalue of Gram / grid_n
  double gram_lambda_pos = 0.0;   // smallest eigenvalue above 1e-10 * largest
  double gram_lambda_max = 0.0;
  bool degenerate = true;
  double nu_max = 0.0;            // analytic bound
  double nu_sampled_max = 0.0;
  bool nu_bounded = false;
  std::string compatibility = "assumed, not checkable";
  bool passed = false;

  json to_json() const {
    return {{"density_min", density_min},       {"full_support", full_support},
            {"val_density_min", val_density_min}, {"gram_lambda_min", gram_lambda_min},
            {"gram_lambda_pos", gram_lambda_pos}, {"gram_lambda_max", gram_lambda_max},
            {"degenerate", degenerate},           {"nu_max", nu_max},
            {"nu_sampled_max", nu_sampled_max},   {"nu_bounded", nu_bounded},
            {"compatibility", compatibility},     {"passed", passed}};
  }
};

inline constexpr double kDegenerateTol = 1e-10;

inline WellBehavedReport validate_well_behaved(const DataRecipe& recipe, const DataRecipe& val, int grid_n,
                                               std::uint64_t seed = 0x77656c6cULL) {
  if (grid_n < 16) throw std::invalid_argument("validate_well_behaved: grid_n must be at least 16");
  const int d = recipe.dim();
  WellBehavedReport rep;
  Stream s = Stream(seed).child(recipe.id());

  Eigen::VectorXd x(d);
  rep.density_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 4096; ++i) {
    if (recipe.law().on_box())
      sample_box(s, x);
    else
      sample_sphere(s, x);
    rep.density_min = std::min(rep.density_min, recipe.relative_density(x));
  }
  rep.full_support = rep.density_min > 0.0;

  Stream sv = s.child("val");
  rep.val_density_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 1024; ++i) {
    val.sample_input(sv, x);
    rep.val_density_min = std::min(rep.val_density_min, recipe.relative_density(x));
  }

  Stream sg = s.child("grid");
  Eigen::MatrixXd G(grid_n, d);
  for (int i = 0; i < grid_n; ++i) {
    recipe.sample_input(sg, x);
    G.row(i) = x.transpose();
  }
  KernelSpec ks;
  ks.act = recipe.feature().act;
  ks.wdist = recipe.feature().wdist;
  const KernelBank bank(ks, d);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(bank.gram(G) / grid_n, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = es.eigenvalues();
  rep.gram_lambda_min = ev[0];
  rep.gram_lambda_max = ev[ev.size() - 1];
  rep.gram_lambda_pos = rep.gram_lambda_max;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev[i] > 1e-10 * rep.gram_lambda_max) {
      rep.gram_lambda_pos = ev[i];
      break;
    }
  rep.degenerate = rep.gram_lambda_min < kDegenerateTol;

  rep.nu_max = recipe.coeff().sup_bound();
  Stream su = s.child("nu");
  Eigen::VectorXd u(d);
  for (int i = 0; i < 10000; ++i) {
    sample_weight(recipe.feature().wdist, su, u);
    rep.nu_sampled_max = std::max(rep.nu_sampled_max, std::abs(recipe.coeff()(u)));
  }
  rep.nu_bounded = std::isfinite(rep.nu_max) && rep.nu_sampled_max <= rep.nu_max * (1.0 + 1e-12);
  rep.passed = rep.full_support && !rep.degenerate && rep.nu_bounded;
  return rep;
}

}  // namespace tinylr
