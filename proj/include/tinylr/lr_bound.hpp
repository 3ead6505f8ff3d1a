#pragma once
// One-step Taylor quantities for the validation loss, the Hessian spectral
// norm by power iteration on Hessian-vector products, gradient noise
// statistics and the resulting learning-rate window.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tinylr/recipes.hpp"
#include "tinylr/rf_model.hpp"
#include "tinylr/rng.hpp"
#include "tinylr/trainer.hpp"

namespace tinylr {

// Full gradient of the mean loss over a labelled set, chunked.
inline Eigen::VectorXd set_gradient(const RandomFeatureModel& model, const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& y) {
  const double s = model.inv_sqrt_m();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(model.m());
  for (Eigen::Index off = 0; off < y.size(); off += kEvalChunk) {
    const Eigen::Index len = std::min(kEvalChunk, y.size() - off);
    const Eigen::MatrixXd P = featurize_rows(model.bank, model.act, X.middleRows(off, len));
    const Eigen::VectorXd r = s * (P * model.theta) - y.segment(off, len);
    g.noalias() += P.transpose() * r;
  }
  return g * (s / static_cast<double>(y.size()));
}

inline Eigen::VectorXd val_gradient(const RandomFeatureModel& model, const EvalSet& val) {
  return set_gradient(model, val.X, val.y);
}

inline Eigen::VectorXd batch_gradient(const RandomFeatureModel& model, const LabeledBatch& b) {
  return set_gradient(model, b.X, b.y);
}

// Per-sample gradients, one row per sample: r_i phi(x_i)^T / sqrt(m).
inline Eigen::MatrixXd per_sample_gradients(const RandomFeatureModel& model, const Eigen::MatrixXd& X,
                                            const Eigen::VectorXd& y) {
  const double s = model.inv_sqrt_m();
  Eigen::MatrixXd P = featurize_rows(model.bank, model.act, X);
  const Eigen::VectorXd r = s * (P * model.theta) - y;
  return (s * r).asDiagonal() * P;
}

// Covariance trace of per-sample gradients over a fixed finite sample, with
// the empirical distribution treated as the population.
inline double per_sample_covariance_trace(const RandomFeatureModel& model, const Eigen::MatrixXd& X,
                                          const Eigen::VectorXd& y) {
  const Eigen::MatrixXd G = per_sample_gradients(model, X, y);
  const Eigen::RowVectorXd mean = G.colwise().mean();
  return (G.rowwise() - mean).squaredNorm() / static_cast<double>(G.rows());
}

// ------------------------------------------------------------ alignment

// Mean over n_batches of <grad l_val, grad l(theta; batch)>.
inline LossEstimate probe_alignment(const RandomFeatureModel& model, const DataRecipe& recipe, const EvalSet& val,
                                    int n_batches, int B, Stream stream) {
  if (n_batches < 1 || B < 1) throw std::invalid_argument("probe_alignment: need n_batches >= 1 and B >= 1");
  const Eigen::VectorXd gv = val_gradient(model, val);
  Eigen::ArrayXd a(n_batches);
  for (int k = 0; k < n_batches; ++k) a[k] = gv.dot(batch_gradient(model, sample_batch(recipe, B, stream)));
  return mean_and_se(a);
}

// ------------------------------------------------------------ Hessian

// H v with H = (1/m) mean over the validation set of phi phi^T, streamed.
inline Eigen::VectorXd hvp(const RandomFeatureModel& model, const EvalSet& val, const Eigen::VectorXd& v) {
  if (v.size() != model.m()) throw std::invalid_argument("hvp: vector length differs from the width");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(model.m());
  const Eigen::Index n = val.size();
  for (Eigen::Index off = 0; off < n; off += kEvalChunk) {
    const Eigen::Index len = std::min(kEvalChunk, n - off);
    const Eigen::MatrixXd P = featurize_rows(model.bank, model.act, val.X.middleRows(off, len));
    out.noalias() += P.transpose() * (P * v);
  }
  return out / (static_cast<double>(model.m()) * static_cast<double>(n));
}

using LinearOp = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct PowerIterResult {
  double lambda = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Converged when successive Rayleigh quotients differ by less than tol
// relative, or when the iterate is an eigenvector to that tolerance.
inline PowerIterResult lambda_max_power_iter(const LinearOp& op, int m, double tol, int max_iter,
                                             std::uint64_t seed) {
  if (!(tol > 0.0)) throw std::invalid_argument("lambda_max_power_iter: tol must be positive");
  if (m < 1 || max_iter < 1) throw std::invalid_argument("lambda_max_power_iter: need m >= 1 and max_iter >= 1");
  Stream s = Stream(seed).child("power-start");
  Eigen::VectorXd v(m);
  for (int i = 0; i < m; ++i) v[i] = s.normal();
  v.normalize();
  PowerIterResult res;
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (int it = 1; it <= max_iter; ++it) {
    const Eigen::VectorXd w = op(v);
    const double lam = v.dot(w);
    res.lambda = lam;
    res.iterations = it;
    const double scale = std::max(std::abs(lam), std::numeric_limits<double>::min());
    const double resid = (w - lam * v).norm();
    if (std::abs(lam - prev) < tol * scale || resid < tol * scale) {
      res.converged = true;
      return res;
    }
    prev = lam;
    const double nw = w.norm();
    if (nw == 0.0) {  // v sits in the null space; the top eigenvalue is 0 only if op is zero
      res.converged = true;
      return res;
    }
    v = w / nw;
  }
  return res;
}

// The validation features are computed once and reused by every product.
inline PowerIterResult val_lambda_max(const RandomFeatureModel& model, const EvalSet& val, double tol = 1e-10,
                                      int max_iter = 200, std::uint64_t seed = 0x706f776572ULL) {
  const Eigen::MatrixXd P = featurize_rows(model.bank, model.act, val.X);
  const double scale = 1.0 / (static_cast<double>(model.m()) * static_cast<double>(val.size()));
  return lambda_max_power_iter([&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return scale * (P.transpose() * (P * v)); },
                               model.m(), tol, max_iter, seed);
}

// ------------------------------------------------------------ noise

struct NoiseStats {
  double sigma_g2 = 0.0;  // per-sample covariance trace, B times the batch-gradient variance
  double G2 = 0.0;        // max squared batch-gradient norm
  Eigen::VectorXd mean_grad;
  double batch_var = 0.0;  // tr Cov of the batch gradient itself
};

template <class DrawBatch>
NoiseStats grad_noise_stats_with(const RandomFeatureModel& model, int B, int n_batches, DrawBatch&& draw) {
  if (n_batches < 2) throw std::invalid_argument("grad_noise_stats: n_batches < 2 leaves the variance undefined");
  if (n_batches < 8) throw std::invalid_argument("grad_noise_stats: n_batches must be at least 8");
  if (B < 1) throw std::invalid_argument("grad_noise_stats: B must be >= 1");
  Eigen::MatrixXd G(model.m(), n_batches);
  NoiseStats ns;
  for (int k = 0; k < n_batches; ++k) {
    G.col(k) = batch_gradient(model, draw());
    ns.G2 = std::max(ns.G2, G.col(k).squaredNorm());
  }
  ns.mean_grad = G.rowwise().mean();
  ns.batch_var = (G.colwise() - ns.mean_grad).squaredNorm() / (n_batches - 1.0);
  ns.sigma_g2 = B * ns.batch_var;
  return ns;
}

inline NoiseStats grad_noise_stats(const RandomFeatureModel& model, const DataRecipe& recipe, int B, int n_batches,
                                   Stream stream) {
  return grad_noise_stats_with(model, B, n_batches, [&] { return sample_batch(recipe, B, stream); });
}

// Batches drawn with replacement from the rows of a fixed pool.
inline NoiseStats grad_noise_stats(const RandomFeatureModel& model, const EvalSet& pool, int B, int n_batches,
                                   Stream stream) {
  return grad_noise_stats_with(model, B, n_batches, [&] {
    LabeledBatch b;
    b.X.resize(B, pool.X.cols());
    b.y.resize(B);
    for (int i = 0; i < B; ++i) {
      const auto r = static_cast<Eigen::Index>(stream.below(static_cast<std::uint64_t>(pool.size())));
      b.X.row(i) = pool.X.row(r);
      b.y[i] = pool.y[r];
    }
    return b;
  });
}

// ------------------------------------------------------------ Taylor stats

struct TaylorStats {
  double a = 0.0, a_se = 0.0;
  double b = 0.0;
  double G2 = 0.0;
  double sigma_g2 = 0.0;
  double lambda_max = 0.0;
  double trHSigma = 0.0;
  int B = 1;
  bool lambda_converged = true;

  nlohmann::json to_json() const {
    return {{"a", a},     {"a_se", a_se},         {"b", b},         {"G2", G2}, {"sigma_g2", sigma_g2},
            {"lambda_max", lambda_max}, {"trHSigma", trHSigma}, {"B", B}};
  }
};

struct ProbeOptions {
  int B = 32;
  int n_batches = 200;
  int n_hutchinson = 16;
  double power_tol = 1e-10;
  int power_max_iter = 200;
  std::uint64_t power_seed = 0x706f776572ULL;
};

// Hutchinson estimate of tr(H Sigma) with Rademacher probes, where Sigma is
// the per-sample gradient covariance over the rows of G.
inline double hutchinson_tr_h_sigma(const RandomFeatureModel& model, const EvalSet& val, const Eigen::MatrixXd& G,
                                    int n_probe, Stream stream) {
  const Eigen::RowVectorXd mean = G.colwise().mean();
  const Eigen::MatrixXd Gc = G.rowwise() - mean;
  const double n = static_cast<double>(G.rows());
  double acc = 0.0;
  Eigen::VectorXd z(model.m());
  for (int p = 0; p < n_probe; ++p) {
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = stream.below(2) ? 1.0 : -1.0;
    const Eigen::VectorXd sz = Gc.transpose() * (Gc * z) / n;
    acc += hvp(model, val, z).dot(sz);
  }
  return acc / n_probe;
}

// All statistics are taken at the model's current theta from one set of
// probe batches drawn from `stream`.
inline TaylorStats taylor_stats(const RandomFeatureModel& model, const DataRecipe& recipe, const EvalSet& val,
                                const ProbeOptions& opt, Stream stream) {
  if (opt.n_batches < 8) throw std::invalid_argument("taylor_stats: n_batches must be at least 8");
  TaylorStats st;
  st.B = opt.B;
  Stream batches = stream.child("batches");
  std::vector<LabeledBatch> drawn;
  drawn.reserve(static_cast<std::size_t>(opt.n_batches));
  for (int k = 0; k < opt.n_batches; ++k) drawn.push_back(sample_batch(recipe, opt.B, batches));

  std::size_t next = 0;
  const NoiseStats ns = grad_noise_stats_with(model, opt.B, opt.n_batches, [&] { return drawn[next++]; });
  st.G2 = ns.G2;
  st.sigma_g2 = ns.sigma_g2;

  const Eigen::VectorXd gv = val_gradient(model, val);
  Eigen::ArrayXd a(opt.n_batches);
  for (int k = 0; k < opt.n_batches; ++k) a[k] = gv.dot(batch_gradient(model, drawn[static_cast<std::size_t>(k)]));
  const LossEstimate ae = mean_and_se(a);
  st.a = ae.estimate;
  st.a_se = ae.std_err;
  st.b = ns.mean_grad.dot(hvp(model, val, ns.mean_grad));

  const PowerIterResult pr = val_lambda_max(model, val, opt.power_tol, opt.power_max_iter, opt.power_seed);
  st.lambda_max = pr.lambda;
  st.lambda_converged = pr.converged;

  Eigen::MatrixXd Gs(static_cast<Eigen::Index>(opt.n_batches) * opt.B, model.m());
  for (int k = 0; k < opt.n_batches; ++k) {
    const auto& b = drawn[static_cast<std::size_t>(k)];
    Gs.middleRows(static_cast<Eigen::Index>(k) * opt.B, opt.B) = per_sample_gradients(model, b.X, b.y);
  }
  st.trHSigma = hutchinson_tr_h_sigma(model, val, Gs, opt.n_hutchinson, stream.child("hutchinson"));
  return st;
}

// E[delta l_val] = -eta a + eta^2 / 2 (b + tr(H Sigma) / B).
inline double taylor_predict(const TaylorStats& st, double eta) {
  return -eta * st.a + 0.5 * eta * eta * (st.b + st.trHSigma / st.B);
}

// ------------------------------------------------------------ bounds

struct BoundValue {
  double value = std::numeric_limits<double>::infinity();
  bool unbounded = true;
};

// eta <= delta_a / (lambda_max (G2 + sigma_g2 / B)).
inline BoundValue eta_tiny_bound(double delta_a, double lambda_max, double G2, double sigma_g2, double B) {
  if (!(delta_a >= 0.0) || !(lambda_max >= 0.0) || !(G2 >= 0.0) || !(sigma_g2 >= 0.0) || !(B > 0.0))
    throw std::invalid_argument("eta_tiny_bound: inputs must be non-negative and B positive");
  const double den = lambda_max * (G2 + sigma_g2 / B);
  if (!(den > 0.0)) return {};
  return {delta_a / den, false};
}

// Smallest eta whose update eta * grad_scale clears the rounding gap at the
// scale of theta, max(1, |theta|_inf).
inline double float_floor(const Eigen::VectorXd& theta, double grad_scale, Precision p) {
  if (!(grad_scale > 0.0)) throw std::invalid_argument("float_floor: grad_scale must be positive");
  const double scale = std::max(1.0, theta.size() ? theta.cwiseAbs().maxCoeff() : 0.0);
  return machine_gap(p) * scale / grad_scale;
}

inline constexpr double kStandardEtaDivisor = 30.0;

struct EtaBound {
  std::vector<std::pair<std::string, std::string>> recipe_pairs;
  std::pair<std::string, std::string> argmin_pair;
  double delta_a = 0.0;
  double lambda_max = 0.0, G2 = 0.0, sigma_g2 = 0.0;
  int B = 1;
  double eta_tiny_upper = std::numeric_limits<double>::infinity();
  bool unbounded = true;
  double eta_float_floor = 0.0;
  double standard_eta = std::numeric_limits<double>::quiet_NaN();
  double recommended_eta = 0.0;
  bool usable = false;  // floor < upper

  nlohmann::json to_json() const {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [a, b] : recipe_pairs) pairs.push_back({a, b});
    return {{"recipe_pairs", pairs},
            {"delta_a", delta_a},
            {"lambda_max", lambda_max},
            {"G2", G2},
            {"sigma_g2", sigma_g2},
            {"eta_tiny_upper", unbounded ? nlohmann::json(nullptr) : nlohmann::json(eta_tiny_upper)},
            {"eta_float_floor", eta_float_floor},
            {"recommended_eta", recommended_eta}};
  }
};

// Per-recipe statistics, typically averaged over feature banks. The alignment
// gap is the smallest |a_i - a_j| over all pairs; curvature and noise terms
// take the largest value over recipes.
inline EtaBound compute_eta_bound(const std::vector<std::string>& ids, const std::vector<TaylorStats>& stats,
                                  double standard_eta, double floor) {
  if (ids.size() != stats.size() || ids.size() < 2)
    throw std::invalid_argument("compute_eta_bound: need matching ids and stats for at least two recipes");
  EtaBound eb;
  eb.B = stats.front().B;
  eb.delta_a = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    eb.lambda_max = std::max(eb.lambda_max, stats[i].lambda_max);
    eb.G2 = std::max(eb.G2, stats[i].G2);
    eb.sigma_g2 = std::max(eb.sigma_g2, stats[i].sigma_g2);
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      eb.recipe_pairs.emplace_back(ids[i], ids[j]);
      const double gap = std::abs(stats[i].a - stats[j].a);
      if (gap < eb.delta_a) {
        eb.delta_a = gap;
        eb.argmin_pair = {ids[i], ids[j]};
      }
    }
  }
  const BoundValue bv = eta_tiny_bound(eb.delta_a, eb.lambda_max, eb.G2, eb.sigma_g2, eb.B);
  eb.eta_tiny_upper = bv.value;
  eb.unbounded = bv.unbounded;
  eb.eta_float_floor = floor;
  eb.standard_eta = standard_eta;
  eb.usable = floor < eb.eta_tiny_upper;
  double rec = eb.eta_tiny_upper;
  if (std::isfinite(standard_eta)) rec = std::min(rec, standard_eta / kStandardEtaDivisor);
  eb.recommended_eta = eb.usable ? std::max(floor, rec) : eb.eta_tiny_upper;
  return eb;
}

// Component-wise mean of a and b; max of the curvature and noise terms.
inline TaylorStats pool_stats(const std::vector<TaylorStats>& v) {
  if (v.empty()) throw std::invalid_argument("pool_stats: empty input");
  TaylorStats out;
  out.B = v.front().B;
  double se2 = 0.0;
  for (const auto& s : v) {
    out.a += s.a;
    out.b += s.b;
    out.trHSigma += s.trHSigma;
    se2 += s.a_se * s.a_se;
    out.G2 = std::max(out.G2, s.G2);
    out.sigma_g2 = std::max(out.sigma_g2, s.sigma_g2);
    out.lambda_max = std::max(out.lambda_max, s.lambda_max);
    out.lambda_converged = out.lambda_converged && s.lambda_converged;
  }
  const double n = static_cast<double>(v.size());
  out.a /= n;
  out.b /= n;
  out.trHSigma /= n;
  out.a_se = std::sqrt(se2) / n;
  return out;
}

}  // namespace tinylr
