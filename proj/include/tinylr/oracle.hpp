#pragma once
// Ground truth: best achievable validation losses, their gaps, the
// finite-width ridgeless optimum mu = H^+ beta and kernel floor estimates.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tinylr/kernel.hpp"
#include "tinylr/recipes.hpp"
#include "tinylr/rf_model.hpp"
#include "tinylr/trainer.hpp"

namespace tinylr {

inline KernelEstimate kernel_value(const KernelBank& bank, const Eigen::VectorXd& x, const Eigen::VectorXd& xp) {
  return bank.value(x, xp);
}

// 0.5 E_val[(f*_D(x) - y)^2] over a fixed validation sample.
inline LossEstimate best_achievable_loss(const DataRecipe& recipe, const EvalSet& val) {
  const Eigen::VectorXd f = recipe.target_values(val.X);
  return mean_and_se(0.5 * (f - val.y).array().square());
}

inline LossEstimate best_achievable_loss(const DataRecipe& recipe, const DataRecipe& val, Eigen::Index n_mc,
                                         Stream stream) {
  return best_achievable_loss(recipe, make_eval_set(val, n_mc, stream));
}

struct DeltaAB {
  double value = 0.0;
  double std_err = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;  // 95% normal interval
  bool indistinguishable = true;
};

inline constexpr double kIndistinguishableSE = 2.0;

// Best_A - best_B. Both losses are evaluated on the same validation sample,
// so the standard error comes from the per-sample differences.
inline DeltaAB delta_ab(const DataRecipe& a, const DataRecipe& b, const EvalSet& val) {
  const Eigen::ArrayXd fa = a.target_values(val.X).array() - val.y.array();
  const Eigen::ArrayXd fb = b.target_values(val.X).array() - val.y.array();
  const LossEstimate e = mean_and_se(0.5 * (fa.square() - fb.square()));
  DeltaAB out;
  out.value = e.estimate;
  out.std_err = e.std_err;
  out.ci_lo = e.estimate - 1.96 * e.std_err;
  out.ci_hi = e.estimate + 1.96 * e.std_err;
  out.indistinguishable = std::abs(e.estimate) <= kIndistinguishableSE * e.std_err;
  return out;
}

// ------------------------------------------------------------ ridgeless

struct Moments {
  Eigen::MatrixXd H;     // (1/m) E[phi phi^T]
  Eigen::VectorXd beta;  // (1/sqrt m) E[y phi]
};

inline constexpr int kMaxDenseWidth = 4096;
inline constexpr double kPinvCutoff = 1e-10;

inline Moments estimate_moments(const FeatureBank& bank, const Activation& act, const DataRecipe& recipe,
                                Eigen::Index n_mc, Stream stream) {
  const int m = bank.m();
  Moments mo;
  mo.H = Eigen::MatrixXd::Zero(m, m);
  mo.beta = Eigen::VectorXd::Zero(m);
  const Eigen::Index chunk = 2048;
  for (Eigen::Index off = 0; off < n_mc; off += chunk) {
    const Eigen::Index len = std::min(chunk, n_mc - off);
    const LabeledBatch b = sample_batch(recipe, len, stream);
    const Eigen::MatrixXd P = featurize_rows(bank, act, b.X);
    mo.H.selfadjointView<Eigen::Lower>().rankUpdate(P.transpose(), 1.0);
    mo.beta.noalias() += P.transpose() * b.y;
  }
  mo.H = mo.H.selfadjointView<Eigen::Lower>();
  mo.H /= static_cast<double>(m) * static_cast<double>(n_mc);
  mo.beta /= std::sqrt(static_cast<double>(m)) * static_cast<double>(n_mc);
  return mo;
}

// H^+ v with eigenvalues below 1e-10 of the largest treated as zero.
inline Eigen::VectorXd pinv_solve(const Eigen::MatrixXd& H, const Eigen::VectorXd& v, double cutoff = kPinvCutoff) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double top = std::max(ev.cwiseAbs().maxCoeff(), 0.0);
  Eigen::VectorXd c = es.eigenvectors().transpose() * v;
  for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = ev[i] > cutoff * top ? c[i] / ev[i] : 0.0;
  return es.eigenvectors() * c;
}

struct RidgelessResult {
  Eigen::VectorXd mu;
  Moments moments;
  double approx_error = 0.0;  // L_D(mu; U) on an independent sample
  double approx_error_se = 0.0;
};

inline RidgelessResult ridgeless_optimum(const FeatureBank& bank, const Activation& act, const DataRecipe& recipe,
                                         Eigen::Index n_mc, Stream stream, Eigen::Index n_eval = 0) {
  const int m = bank.m();
  if (m > kMaxDenseWidth) throw std::invalid_argument("ridgeless_optimum: width above the dense cap of 4096");
  if (n_mc < m) throw std::invalid_argument("ridgeless_optimum: n_mc < m leaves the moments under-determined");
  RidgelessResult r;
  r.moments = estimate_moments(bank, act, recipe, n_mc, stream.child("moments"));
  r.mu = pinv_solve(r.moments.H, r.moments.beta);
  RandomFeatureModel model(bank, act.kind);
  model.theta = r.mu;
  const LossEstimate e = eval_loss(model, make_eval_set(recipe, n_eval > 0 ? n_eval : n_mc, stream.child("eval")));
  r.approx_error = e.estimate;
  r.approx_error_se = e.std_err;
  return r;
}

// Exact H, beta, mu and Sigma for the identity activation with inputs
// uniform on the sphere, where the target is linear: f*(x) = <a, x>.
struct IdentityMoments {
  Eigen::MatrixXd H;
  Eigen::VectorXd beta, mu;
  Eigen::MatrixXd Sigma;  // (1/m) E[(y - f_mu)^2 phi phi^T]
  double approx_error = 0.0;
};

inline IdentityMoments exact_identity_moments(const FeatureBank& bank, const DataRecipe& recipe) {
  if (recipe.feature().act != ActKind::identity || recipe.law().kind != LawKind::sphere)
    throw std::invalid_argument("exact_identity_moments: needs identity features and sphere inputs");
  const int d = bank.d(), m = bank.m();
  const double dd = d;
  const Eigen::VectorXd a = coord_second_moment(recipe.feature().wdist, d) * recipe.coeff().c1;
  const Eigen::MatrixXd& U = bank.U;
  IdentityMoments o;
  o.H = U.transpose() * U / (m * dd);
  o.beta = U.transpose() * a / (std::sqrt(static_cast<double>(m)) * dd);
  o.mu = pinv_solve(o.H, o.beta);
  const Eigen::VectorXd v = U * o.mu / std::sqrt(static_cast<double>(m)) - a;  // residual direction
  const Eigen::MatrixXd M4 = (v.squaredNorm() * Eigen::MatrixXd::Identity(d, d) + 2.0 * v * v.transpose()) /
                             (dd * (dd + 2.0));
  o.Sigma = U.transpose() * M4 * U / m;
  o.approx_error = 0.5 * v.squaredNorm() / dd;
  return o;
}

// ------------------------------------------------------------ decay fit

struct DecayPoint {
  int m = 0;
  double mean = 0.0, std_err = 0.0;
  double val_loss = 0.0;
  bool excluded = false;
};

struct DecayFit {
  std::vector<DecayPoint> points;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
  double c1 = std::numeric_limits<double>::quiet_NaN();  // L ~ C1^2 / m
  bool fitted = false;
  std::vector<std::string> warnings;
};

inline constexpr double kQuadratureFloor = 1e-14;

inline DecayFit fit_decay(std::vector<DecayPoint> pts) {
  DecayFit f;
  double sx = 0, sy = 0, sxx = 0, sxy = 0, sc = 0;
  int n = 0;
  for (auto& p : pts) {
    if (!(p.mean >= kQuadratureFloor)) {
      p.excluded = true;
      f.warnings.push_back("width " + std::to_string(p.m) + " below the quadrature floor, excluded from the fit");
      continue;
    }
    const double x = std::log(static_cast<double>(p.m)), y = std::log(p.mean);
    sx += x, sy += y, sxx += x * x, sxy += x * y, sc += y + x;
    ++n;
  }
  f.points = std::move(pts);
  if (n >= 2) {
    f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    f.intercept = (sy - f.slope * sx) / n;
    f.c1 = std::exp(0.5 * sc / n);
    f.fitted = true;
  }
  return f;
}

struct DecayOptions {
  int n_mc_per_width = 64;  // moment samples per feature
  std::uint64_t master = 0x6465636179ULL;
  const EvalSet* val = nullptr;  // when set, also records the validation loss of mu
};

inline DecayFit approx_error_decay(const DataRecipe& recipe, const ModelSpec& ms, const std::vector<int>& widths,
                                   int seeds, const DecayOptions& opt = {}) {
  if (widths.size() < 4) throw std::invalid_argument("approx_error_decay: need at least 4 widths");
  const auto [lo, hi] = std::minmax_element(widths.begin(), widths.end());
  if (*hi < 16 * *lo) throw std::invalid_argument("approx_error_decay: widths must span at least 16x");
  if (seeds < 1) throw std::invalid_argument("approx_error_decay: seeds must be >= 1");
  std::vector<DecayPoint> pts;
  const Stream root(opt.master);
  for (int m : widths) {
    Eigen::ArrayXd errs(seeds), vals(seeds);
    for (int k = 0; k < seeds; ++k) {
      const FeatureBank bank = init_features(ms.d, m, ms.wdist, root.child("bank").child(m).child(k).key());
      const Activation act{ms.act};
      const RidgelessResult r = ridgeless_optimum(bank, act, recipe, static_cast<Eigen::Index>(opt.n_mc_per_width) * m,
                                                  root.child("mc").child(m).child(k));
      errs[k] = r.approx_error;
      if (opt.val) {
        RandomFeatureModel model(bank, ms.act);
        model.theta = r.mu;
        vals[k] = eval_loss(model, *opt.val).estimate;
      } else {
        vals[k] = std::numeric_limits<double>::quiet_NaN();
      }
    }
    const LossEstimate e = mean_and_se(errs);
    pts.push_back({m, e.estimate, e.std_err, vals.mean(), false});
  }
  return fit_decay(std::move(pts));
}

// ------------------------------------------------------------ kernel floor

struct KernelFloor {
  double lambda0 = 0.0;     // smallest eigenvalue of Gram / grid_n
  double lambda_pos = 0.0;  // smallest eigenvalue above 1e-10 of the largest
  double lambda_max = 0.0;
  bool degenerate = true;
  bool psd_ok = true;  // smallest eigenvalue >= -1e-10 * largest
};

inline KernelFloor kernel_floor_of(const Eigen::MatrixXd& gram_over_n) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram_over_n, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& ev = es.eigenvalues();
  KernelFloor k;
  k.lambda0 = ev[0];
  k.lambda_max = ev[ev.size() - 1];
  k.lambda_pos = k.lambda_max;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev[i] > 1e-10 * k.lambda_max) {
      k.lambda_pos = ev[i];
      break;
    }
  k.psd_ok = k.lambda0 >= -1e-10 * std::max(k.lambda_max, 0.0);
  k.degenerate = k.lambda0 < kDegenerateTol;
  return k;
}

inline KernelFloor kernel_min_eig(const KernelBank& bank, const Eigen::MatrixXd& grid) {
  if (grid.rows() < 32) throw std::invalid_argument("kernel_min_eig: grid_n must be at least 32");
  return kernel_floor_of(bank.gram(grid) / static_cast<double>(grid.rows()));
}

inline KernelFloor kernel_min_eig(const KernelBank& bank, const DataRecipe& law_of, int grid_n, Stream stream) {
  Eigen::MatrixXd G(grid_n, law_of.dim());
  Eigen::VectorXd x(law_of.dim());
  for (int i = 0; i < grid_n; ++i) {
    law_of.sample_input(stream, x);
    G.row(i) = x.transpose();
  }
  return kernel_min_eig(bank, G);
}

// Fraction of seeds whose dense lambda_min(H) at width m is at least half
// the kernel floor estimate.
inline double lambda_min_h_fraction(const DataRecipe& recipe, const ModelSpec& ms, int m, int seeds, double estimate,
                                    std::uint64_t master = 0x6c6d696eULL) {
  const Stream root(master);
  int ok = 0;
  for (int k = 0; k < seeds; ++k) {
    const FeatureBank bank = init_features(ms.d, m, ms.wdist, root.child("bank").child(m).child(k).key());
    const Moments mo = estimate_moments(bank, Activation{ms.act}, recipe, 64 * static_cast<Eigen::Index>(m),
                                        root.child("mc").child(m).child(k));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mo.H, Eigen::EigenvaluesOnly);
    if (es.eigenvalues()[0] >= 0.5 * estimate) ++ok;
  }
  return static_cast<double>(ok) / seeds;
}

// ------------------------------------------------------------ reports

struct OracleWidth {
  int m = 0;
  double approx_error = 0.0;
  double val_loss = 0.0;
};

struct OracleDelta {
  std::string other_id;
  DeltaAB delta;
};

struct OracleReport {
  std::string recipe_id;
  double best_loss = 0.0, std_err = 0.0;
  double lambda0 = 0.0;
  std::vector<OracleWidth> widths;
  std::vector<OracleDelta> delta;
  double c1_diagnostic = std::numeric_limits<double>::quiet_NaN();

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["recipe_id"] = recipe_id;
    j["best_loss"] = best_loss;
    j["std_err"] = std_err;
    j["lambda0"] = lambda0;
    j["widths"] = nlohmann::json::array();
    for (const auto& w : widths) j["widths"].push_back({{"m", w.m}, {"approx_error", w.approx_error}, {"val_loss", w.val_loss}});
    j["delta"] = nlohmann::json::array();
    for (const auto& d : delta)
      j["delta"].push_back({{"other_id", d.other_id}, {"value", d.delta.value}, {"ci", {d.delta.ci_lo, d.delta.ci_hi}}});
    return j;
  }
};

}  // namespace tinylr
