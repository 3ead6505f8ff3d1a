#pragma once
// One-pass mini-batch SGD on the second layer, Monte Carlo loss evaluation
// and learning-rate grid search.

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tinylr/recipes.hpp"
#include "tinylr/rf_model.hpp"
#include "tinylr/rng.hpp"

namespace tinylr {

inline constexpr double kDivergenceLoss = 1e12;

struct TrainConfig {
  double eta = 1e-3;
  int B = 32;
  int T = 100;
  Stream stream{0};        // sample stream; batch t is the t-th block of B draws
  int warmup = 0;          // linear warmup steps, 0 for a constant rate
  int snapshot_every = 0;  // 0 keeps only theta_0 and theta_T
  bool log_train_loss = false;
  int val_every = 0;       // 0 logs validation loss only at the end
  Precision precision = Precision::f64;
  bool warm_start = false;  // continue from model.theta instead of zero

  void validate() const {
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw std::invalid_argument("TrainConfig: eta must be finite and >= 0");
    if (B < 1) throw std::invalid_argument("TrainConfig: B must be >= 1");
    if (T < 0) throw std::invalid_argument("TrainConfig: T must be >= 0");
    if (warmup < 0 || (warmup > 0 && warmup >= T)) throw std::invalid_argument("TrainConfig: warmup must be < T");
  }
  double rate(int t) const { return warmup > 0 && t < warmup ? eta * (t + 1) / warmup : eta; }
};

// A fixed labelled sample used as the validation distribution's stand-in.
struct EvalSet {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::Index size() const { return y.size(); }
};

inline EvalSet make_eval_set(const DataRecipe& recipe, Eigen::Index n, Stream stream) {
  LabeledBatch b = sample_batch(recipe, n, stream);
  return {std::move(b.X), std::move(b.y)};
}

struct LossEstimate {
  double estimate = 0.0;
  double std_err = 0.0;
};

inline constexpr Eigen::Index kEvalChunk = 1024;

// Per-sample residuals f(x) - y over an evaluation set, computed in chunks.
inline Eigen::VectorXd residuals(const RandomFeatureModel& model, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  Eigen::VectorXd r(y.size());
  for (Eigen::Index off = 0; off < y.size(); off += kEvalChunk) {
    const Eigen::Index len = std::min(kEvalChunk, y.size() - off);
    r.segment(off, len) = batch_forward(model, X.middleRows(off, len)) - y.segment(off, len);
  }
  return r;
}

inline LossEstimate mean_and_se(const Eigen::ArrayXd& v) {
  const double n = static_cast<double>(v.size());
  const double mean = v.sum() / n;
  const double var = v.size() > 1 ? (v - mean).square().sum() / (n - 1.0) : 0.0;
  return {mean, std::sqrt(var / n)};
}

inline LossEstimate eval_loss(const RandomFeatureModel& model, const EvalSet& set) {
  const Eigen::VectorXd r = residuals(model, set.X, set.y);
  return mean_and_se(0.5 * r.array().square());
}

inline LossEstimate eval_loss(const RandomFeatureModel& model, const DataRecipe& recipe, Eigen::Index n_mc,
                              Stream stream) {
  if (n_mc < 100) throw std::invalid_argument("eval_loss: n_mc must be at least 100");
  return eval_loss(model, make_eval_set(recipe, n_mc, stream));
}

struct TrainTrajectory {
  std::vector<std::pair<int, Eigen::VectorXd>> thetas;  // (step, theta) snapshots
  std::vector<std::pair<int, double>> train_loss_log;   // batch loss before each logged step
  std::vector<std::pair<int, double>> val_loss_log;
  Eigen::VectorXd final_theta;
  Stream stream{0};  // the sample stream as it was before step 0
  bool diverged = false;
  int diverged_step = -1;
  std::uint64_t samples = 0;
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
};

// theta_{t+1} = theta_t - (eta / B) sum_b grad_b, from theta_0 = 0 unless warm
// started. A batch loss above 1e12 or a non-finite loss stops the run.
inline TrainTrajectory sgd_train(RandomFeatureModel& model, const DataRecipe& recipe, const TrainConfig& cfg,
                                 const EvalSet* val = nullptr) {
  cfg.validate();
  if (recipe.dim() != model.d()) throw std::invalid_argument("sgd_train: recipe and model dimensions differ");
  if (!cfg.warm_start) model.theta.setZero(model.m());
  TrainTrajectory tr;
  tr.stream = cfg.stream;
  Stream s = cfg.stream;
  const double sm = model.inv_sqrt_m();
  tr.thetas.emplace_back(0, model.theta);
  auto log_val = [&](int t) {
    if (val) tr.val_loss_log.emplace_back(t, eval_loss(model, *val).estimate);
  };
  if (val && cfg.val_every > 0) log_val(0);

  Eigen::MatrixXd P;
  Eigen::VectorXd r;
  for (int t = 0; t < cfg.T; ++t) {
    const LabeledBatch b = sample_batch(recipe, cfg.B, s);
    tr.samples += static_cast<std::uint64_t>(cfg.B);
    P.noalias() = b.X * model.bank.U;
    activate_inplace(model.act.kind, P);
    r.noalias() = sm * (P * model.theta);
    r -= b.y;
    const double loss = 0.5 * r.squaredNorm() / cfg.B;
    if (cfg.log_train_loss) tr.train_loss_log.emplace_back(t, loss);
    if (!std::isfinite(loss) || loss > kDivergenceLoss) {
      tr.diverged = true;
      tr.diverged_step = t;
      break;
    }
    const double step = cfg.rate(t) * sm / cfg.B;
    if (cfg.precision == Precision::f64) {
      model.theta.noalias() -= step * (P.transpose() * r);
    } else {
      const Eigen::VectorXd g = P.transpose() * r;
      for (Eigen::Index i = 0; i < g.size(); ++i)
        model.theta[i] = round_to(cfg.precision, model.theta[i] - step * g[i]);
    }
    if (cfg.snapshot_every > 0 && (t + 1) % cfg.snapshot_every == 0 && t + 1 < cfg.T)
      tr.thetas.emplace_back(t + 1, model.theta);
    if (val && cfg.val_every > 0 && (t + 1) % cfg.val_every == 0 && t + 1 < cfg.T) log_val(t + 1);
  }
  if (!tr.diverged) {
    if (cfg.T > 0) tr.thetas.emplace_back(cfg.T, model.theta);
    if (val) log_val(cfg.T);
  }
  tr.final_theta = model.theta;
  return tr;
}

// ------------------------------------------------------------ grid search

struct LrGrid {
  std::vector<double> values;

  static LrGrid log_spaced(double lo, double hi, int n) {
    if (n < 2 || !(lo > 0.0) || !(hi > lo)) throw std::invalid_argument("LrGrid: need n >= 2 and 0 < lo < hi");
    LrGrid g;
    for (int i = 0; i < n; ++i) g.values.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1)));
    g.values.back() = hi;
    return g;
  }
  void validate() const {
    if (values.empty()) throw std::invalid_argument("LrGrid: empty grid");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!(values[i] > 0.0)) throw std::invalid_argument("LrGrid: values must be positive");
      if (i > 0 && !(values[i] > values[i - 1])) throw std::invalid_argument("LrGrid: values must increase");
    }
  }
  std::string describe() const {
    std::string s = "[";
    for (std::size_t i = 0; i < values.size(); ++i) s += (i ? ", " : "") + std::to_string(values[i]);
    return s + "]";
  }
};

struct ModelSpec {
  int d = 8;
  int m = 64;
  ActKind act = ActKind::tanh;
  WeightDist wdist = WeightDist::sphere;
};

// How banks and sample streams are derived for a (eta, seed index) cell. The
// sample stream is keyed by the bits of eta, so a value added to a grid later
// sees the same stream it would have seen as part of the grid.
struct CellSeeds {
  std::function<std::uint64_t(int seed_idx)> bank_seed;
  std::function<Stream(double eta, int seed_idx)> samples;

  static CellSeeds from_master(std::uint64_t master, int m) {
    const Stream root(master);
    return {[root, m](int k) { return root.child("bank").child(static_cast<std::uint64_t>(m)).child(k).key(); },
            [root, m](double eta, int k) {
              return root.child("samples").child(static_cast<std::uint64_t>(m)).child(std::bit_cast<std::uint64_t>(eta)).child(k);
            }};
  }
};

struct GridCell {
  double eta = 0.0;
  int seed_idx = 0;
  double final_train_loss = 0.0;
  double val_loss = 0.0;
  double val_std_err = 0.0;
  bool diverged = false;
};

struct GridRow {
  double eta = 0.0;
  double mean = 0.0;  // +inf when any seed diverged
  double std_err = 0.0;
  int n_diverged = 0;
};

struct GridSearchResult {
  double eta_opt = 0.0;
  double loss_opt = 0.0;
  std::vector<GridRow> table;
  std::vector<GridCell> cells;
};

inline constexpr double kTieTol = 1e-12;

// Index of the smallest finite mean; near-ties go to the smaller eta.
inline int argmin_smaller_eta(const std::vector<GridRow>& rows) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
    if (!std::isfinite(rows[i].mean)) continue;
    if (best < 0 || rows[i].mean < rows[best].mean - kTieTol) best = i;
  }
  return best;
}

inline GridRow summarize_cells(double eta, const std::vector<GridCell>& cells) {
  GridRow row;
  row.eta = eta;
  Eigen::ArrayXd v(static_cast<Eigen::Index>(cells.size()));
  for (std::size_t k = 0; k < cells.size(); ++k) {
    v[static_cast<Eigen::Index>(k)] = cells[k].val_loss;
    row.n_diverged += cells[k].diverged ? 1 : 0;
  }
  if (row.n_diverged > 0) {
    row.mean = std::numeric_limits<double>::infinity();
    row.std_err = 0.0;
  } else {
    const LossEstimate e = mean_and_se(v);
    row.mean = e.estimate;
    row.std_err = e.std_err;
  }
  return row;
}

inline GridCell train_cell(const ModelSpec& ms, const DataRecipe& recipe, const EvalSet& val, const TrainConfig& cfg,
                           std::uint64_t bank_seed) {
  RandomFeatureModel model(init_features(ms.d, ms.m, ms.wdist, bank_seed), ms.act);
  TrainConfig c = cfg;
  c.log_train_loss = false;
  const TrainTrajectory tr = sgd_train(model, recipe, c);
  GridCell cell;
  cell.eta = cfg.eta;
  cell.diverged = tr.diverged;
  if (tr.diverged) {
    cell.val_loss = cell.final_train_loss = std::numeric_limits<double>::infinity();
    return cell;
  }
  const LossEstimate v = eval_loss(model, val);
  cell.val_loss = v.estimate;
  cell.val_std_err = v.std_err;
  // Final training loss on a fresh batch-sized sample of the recipe.
  Stream post = cfg.stream.child("final-train");
  cell.final_train_loss = eval_loss(model, make_eval_set(recipe, std::max(cfg.B, 256), post)).estimate;
  return cell;
}

inline GridSearchResult lr_grid_search(const ModelSpec& ms, const DataRecipe& recipe, const EvalSet& val,
                                       const LrGrid& grid, const TrainConfig& tmpl, int seeds, const CellSeeds& plan) {
  grid.validate();
  if (seeds < 1) throw std::invalid_argument("lr_grid_search: seeds must be >= 1");
  GridSearchResult res;
  for (int e = 0; e < static_cast<int>(grid.values.size()); ++e) {
    std::vector<GridCell> cells;
    for (int k = 0; k < seeds; ++k) {
      TrainConfig cfg = tmpl;
      cfg.eta = grid.values[e];
      cfg.stream = plan.samples(grid.values[e], k);
      GridCell c = train_cell(ms, recipe, val, cfg, plan.bank_seed(k));
      c.seed_idx = k;
      cells.push_back(c);
    }
    res.table.push_back(summarize_cells(grid.values[e], cells));
    res.cells.insert(res.cells.end(), cells.begin(), cells.end());
  }
  const int best = argmin_smaller_eta(res.table);
  if (best < 0) throw std::runtime_error("lr_grid_search: every grid point diverged on grid " + grid.describe());
  res.eta_opt = res.table[best].eta;
  res.loss_opt = res.table[best].mean;
  return res;
}

}  // namespace tinylr
