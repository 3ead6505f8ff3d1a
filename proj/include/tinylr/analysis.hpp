#pragma once
// Aggregations over a results store: proxy and target ranking tables,
// correlation against the tuned target, ranking flips, theorem sign checks,
// top-k regret, and the probe-checkpoint learning-rate bound.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tinylr/lr_bound.hpp"
#include "tinylr/metrics.hpp"
#include "tinylr/runner.hpp"

namespace tinylr {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

class SweepView {
 public:
  SweepView(const ExperimentConfig& cfg, const ResultsStore& store) : cfg_(cfg), store_(store) {
    for (const auto& r : cfg.recipes) ids_.push_back(r.id);
  }

  const std::vector<std::string>& ids() const { return ids_; }
  int seeds() const { return cfg_.seeds; }

  // Validation loss for one cell; NaN when missing, inf when diverged.
  double cell(const std::string& id, int m, double eta, int k) const {
    const auto it = store_.rows.find({id, m, eta, k});
    if (it == store_.rows.end()) return kNaN;
    return it->second.diverged ? std::numeric_limits<double>::infinity() : it->second.final_val_loss;
  }

  // recipes x seeds.
  Eigen::MatrixXd per_seed(int m, double eta) const {
    Eigen::MatrixXd M(static_cast<Eigen::Index>(ids_.size()), cfg_.seeds);
    for (std::size_t i = 0; i < ids_.size(); ++i)
      for (int k = 0; k < cfg_.seeds; ++k) M(static_cast<Eigen::Index>(i), k) = cell(ids_[i], m, eta, k);
    return M;
  }

  bool complete(int m, double eta) const { return per_seed(m, eta).allFinite(); }

  // Seed means with standard errors; empty when any cell is missing or diverged.
  std::optional<RecipeScoreTable> table(int m, double eta) const {
    const Eigen::MatrixXd M = per_seed(m, eta);
    if (!M.allFinite()) return std::nullopt;
    RecipeScoreTable t;
    t.provenance = "proxy@m=" + std::to_string(m) + "@eta=" + csv::num(eta);
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      const LossEstimate e = mean_and_se(M.row(static_cast<Eigen::Index>(i)).transpose().array());
      t.add(ids_[i], e.estimate, e.std_err);
    }
    return t;
  }

  std::vector<GridRow> grid_rows(const std::string& id, int m) const {
    std::vector<GridRow> rows;
    for (double eta : cfg_.etas) {
      std::vector<GridCell> cells;
      bool missing = false;
      for (int k = 0; k < cfg_.seeds; ++k) {
        const double v = cell(id, m, eta, k);
        if (std::isnan(v)) missing = true;
        GridCell c;
        c.eta = eta;
        c.seed_idx = k;
        c.val_loss = v;
        c.diverged = std::isinf(v);
        cells.push_back(c);
      }
      GridRow r = summarize_cells(eta, cells);
      if (missing) r.mean = kNaN;
      rows.push_back(r);
    }
    return rows;
  }

  // Per-recipe grid-search optimum at width m.
  std::optional<RecipeScoreTable> tuned_table(int m) const {
    RecipeScoreTable t;
    t.provenance = "target-opt@m=" + std::to_string(m);
    for (const auto& id : ids_) {
      const auto rows = grid_rows(id, m);
      const int best = argmin_smaller_eta(rows);
      if (best < 0) return std::nullopt;
      t.add(id, rows[static_cast<std::size_t>(best)].mean, rows[static_cast<std::size_t>(best)].std_err);
    }
    return t;
  }

  std::vector<double> tuned_etas(int m) const {
    std::vector<double> out;
    for (const auto& id : ids_) {
      const int best = argmin_smaller_eta(grid_rows(id, m));
      out.push_back(best < 0 ? kNaN : cfg_.etas[static_cast<std::size_t>(best)]);
    }
    return out;
  }

  // Per-seed gap between two recipes at one cell: mean and paired std err.
  std::optional<PairwiseGap> gap(const std::string& a, const std::string& b, int m, double eta) const {
    Eigen::ArrayXd d(cfg_.seeds);
    for (int k = 0; k < cfg_.seeds; ++k) d[k] = cell(a, m, eta, k) - cell(b, m, eta, k);
    if (!d.allFinite()) return std::nullopt;
    const LossEstimate e = mean_and_se(d);
    return make_gap(a, b, e.estimate, e.std_err);
  }

 private:
  const ExperimentConfig& cfg_;
  const ResultsStore& store_;
  std::vector<std::string> ids_;
};

inline RecipeScoreTable oracle_table(const std::vector<OracleReport>& oracle) {
  RecipeScoreTable t;
  t.provenance = "infinite-width-oracle";
  for (const auto& r : oracle) t.add(r.recipe_id, r.best_loss, r.std_err);
  return t;
}

inline std::vector<PairwiseGap> oracle_gaps(const std::vector<OracleReport>& oracle) {
  std::vector<PairwiseGap> out;
  for (std::size_t i = 0; i < oracle.size(); ++i)
    for (const auto& d : oracle[i].delta)
      for (std::size_t j = i + 1; j < oracle.size(); ++j)
        if (oracle[j].recipe_id == d.other_id)
          out.push_back(make_gap(oracle[i].recipe_id, d.other_id, d.delta.value, d.delta.std_err));
  return out;
}

// The eta minimising the recipe-averaged proxy loss; the conventional choice.
inline double standard_eta(const ExperimentConfig& cfg, const SweepView& v, int m) {
  std::vector<GridRow> rows;
  for (double eta : cfg.etas) {
    GridRow r;
    r.eta = eta;
    const Eigen::MatrixXd M = v.per_seed(m, eta);
    r.mean = M.hasNaN() ? kNaN : M.mean();
    rows.push_back(r);
  }
  const int best = argmin_smaller_eta(rows);
  return best < 0 ? kNaN : cfg.etas[static_cast<std::size_t>(best)];
}

// ------------------------------------------------------------ corr vs lr

struct CorrPoint {
  int width = 0;
  double eta = 0.0;
  bool available = false;
  double rho = kNaN;
  BootstrapCI ci;
  double rho_oracle = kNaN;
};

inline std::vector<CorrPoint> corr_vs_lr(const ExperimentConfig& cfg, const SweepView& v,
                                         const std::vector<OracleReport>& oracle, int proxy_m, int target_m,
                                         const std::vector<double>& etas, Stream boot) {
  std::vector<CorrPoint> out;
  const auto target = v.tuned_table(target_m);
  const RecipeScoreTable orc = oracle_table(oracle);
  for (double eta : etas) {
    CorrPoint p;
    p.width = proxy_m;
    p.eta = eta;
    const auto t = v.table(proxy_m, eta);
    if (t && target) {
      p.available = true;
      p.rho = spearman(*t, *target);
      const std::vector<double> tg = aligned_scores(*t, *target);
      p.ci = bootstrap_over_seeds(
          v.per_seed(proxy_m, eta),
          [&](const Eigen::VectorXd& s) { return spearman(std::vector<double>(s.data(), s.data() + s.size()), tg); },
          boot.child(std::bit_cast<std::uint64_t>(eta)).child(static_cast<std::uint64_t>(proxy_m)));
      if (!oracle.empty()) p.rho_oracle = spearman(*t, orc);
    }
    out.push_back(p);
  }
  (void)cfg;
  return out;
}

// ------------------------------------------------------------ fragility

struct RankingFlip {
  bool found = false;
  int width = 0;
  std::string a, b;
  double eta1 = 0.0, eta2 = 0.0;
  PairwiseGap gap1, gap2;
  double min_z = 0.0;
  int n_candidates = 0;
};

// Searches recipe pairs and eta pairs within max_ratio for opposite-signed
// gaps, each at least min_z paired std errs from zero. Returns the flip with
// the largest smaller z-score.
inline RankingFlip find_ranking_flip(const ExperimentConfig& cfg, const SweepView& v, int m) {
  RankingFlip best;
  best.width = m;
  const auto& ids = v.ids();
  const auto& etas = cfg.etas;
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = i + 1; j < ids.size(); ++j)
      for (std::size_t e1 = 0; e1 < etas.size(); ++e1)
        for (std::size_t e2 = e1 + 1; e2 < etas.size(); ++e2) {
          if (etas[e2] > cfg.fragility_max_ratio * etas[e1] * (1.0 + 1e-12)) break;
          const auto g1 = v.gap(ids[i], ids[j], m, etas[e1]);
          const auto g2 = v.gap(ids[i], ids[j], m, etas[e2]);
          if (!g1 || !g2 || !(g1->std_err > 0.0) || !(g2->std_err > 0.0)) continue;
          if (g1->value * g2->value >= 0.0) continue;
          const double z = std::min(std::abs(g1->value) / g1->std_err, std::abs(g2->value) / g2->std_err);
          if (z < cfg.fragility_min_z) continue;
          ++best.n_candidates;
          if (!best.found || z > best.min_z) {
            best.found = true;
            best.a = ids[i];
            best.b = ids[j];
            best.eta1 = etas[e1];
            best.eta2 = etas[e2];
            best.gap1 = *g1;
            best.gap2 = *g2;
            best.min_z = z;
          }
        }
  return best;
}

// ------------------------------------------------------------ theorem check

struct PairSign {
  std::string a, b;
  double oracle_gap = 0.0, oracle_se = 0.0;
  double model_gap = 0.0, model_se = 0.0;
  bool match = false;  // raw sign of the seed-averaged gap against the oracle sign
};

struct TheoremCheck {
  int width = 0;
  double eta = 0.0;
  std::vector<PairSign> pairs;  // oracle |gap| >= min_z std errs
  int n_match = 0;
  double raw_agreement = kNaN;
  SignAgreement agreement;  // both sides thresholded at 2 std errs
};

// Model gaps come from `scores(id)` per seed; eligible pairs are those whose
// oracle gap is at least min_z of its std err.
inline TheoremCheck theorem_check_scores(const std::vector<OracleReport>& oracle, const std::vector<PairwiseGap>& model,
                                         double min_z, int width, double eta) {
  TheoremCheck tc;
  tc.width = width;
  tc.eta = eta;
  const std::vector<PairwiseGap> og = oracle_gaps(oracle);
  std::vector<PairwiseGap> oa, ma;
  for (const auto& o : og)
    for (const auto& g : model) {
      PairwiseGap mg;
      if (g.i == o.i && g.j == o.j) mg = g;
      else if (g.i == o.j && g.j == o.i) mg = reversed(g);
      else continue;
      oa.push_back(o);
      ma.push_back(mg);
      if (std::abs(o.value) >= min_z * o.std_err && o.value != 0.0) {
        PairSign p{o.i, o.j, o.value, o.std_err, mg.value, mg.std_err, false};
        p.match = (o.value > 0) == (mg.value > 0) && mg.value != 0.0;
        tc.n_match += p.match ? 1 : 0;
        tc.pairs.push_back(p);
      }
    }
  if (!tc.pairs.empty()) tc.raw_agreement = static_cast<double>(tc.n_match) / static_cast<double>(tc.pairs.size());
  tc.agreement = sign_agreement(oa, ma);
  return tc;
}

inline std::vector<std::pair<std::string, std::string>> all_pairs(const std::vector<std::string>& ids) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = i + 1; j < ids.size(); ++j) out.emplace_back(ids[i], ids[j]);
  return out;
}

// Seed-averaged gaps at a single (width, eta) cell.
inline TheoremCheck theorem_check_at(const SweepView& v, const std::vector<OracleReport>& oracle,
                                     const std::vector<std::pair<std::string, std::string>>& pairs, int m, double eta,
                                     double min_z = 3.0) {
  std::vector<PairwiseGap> model;
  for (const auto& [a, b] : pairs)
    if (const auto g = v.gap(a, b, m, eta)) model.push_back(*g);
  return theorem_check_scores(oracle, model, min_z, m, eta);
}

// Each recipe at its own grid-search optimum.
inline TheoremCheck theorem_check_tuned(const SweepView& v, const std::vector<OracleReport>& oracle,
                                        const std::vector<std::pair<std::string, std::string>>& pairs, int m,
                                        double min_z = 3.0) {
  std::vector<PairwiseGap> model;
  if (const auto t = v.tuned_table(m)) {
    for (const auto& [a, b] : pairs) {
      double sa = 0, sb = 0, ea = 0, eb = 0;
      for (std::size_t i = 0; i < t->size(); ++i) {
        if (t->ids[i] == a) sa = t->scores[i], ea = t->std_errs[i];
        if (t->ids[i] == b) sb = t->scores[i], eb = t->std_errs[i];
      }
      model.push_back(make_gap(a, b, sa - sb, std::hypot(ea, eb)));
    }
  }
  return theorem_check_scores(oracle, model, min_z, m, kNaN);
}

// Smallest grid eta at which no cell at width m diverged.
inline double smallest_stable_eta(const ExperimentConfig& cfg, const SweepView& v, int m) {
  for (double eta : cfg.etas) {
    const Eigen::MatrixXd M = v.per_seed(m, eta);
    if (M.allFinite()) return eta;
  }
  return kNaN;
}

// ------------------------------------------------------------ bound

struct ProbeResult {
  std::vector<std::string> ids;
  std::vector<TaylorStats> pooled;                 // per recipe, pooled over banks
  std::vector<std::vector<TaylorStats>> per_bank;  // [recipe][bank]
  double theta_inf = 0.0;                          // largest |theta| over checkpoints
  int width = 0;
  double warmup_eta = 0.0;
};

// Statistics at the probe checkpoint: each recipe warms up on its own data
// from theta = 0 for probe_warmup_steps at the warmup eta, per bank.
inline ProbeResult probe_recipes(const ExperimentConfig& cfg, const SweepContext& ctx, int m) {
  ProbeResult pr;
  pr.width = m;
  pr.warmup_eta = cfg.warmup_eta();
  const CellSeeds plan = CellSeeds::from_master(cfg.master_seed, m);
  const std::size_t nr = ctx.recipes.size();
  pr.per_bank.assign(nr, std::vector<TaylorStats>(static_cast<std::size_t>(cfg.seeds)));
  std::vector<double> tinf(nr * static_cast<std::size_t>(cfg.seeds), 0.0);
  ProbeOptions opt;
  opt.B = cfg.B;
  opt.n_batches = cfg.probe_batches;
  parallel_for(nr * static_cast<std::size_t>(cfg.seeds), cfg.threads, [&](std::size_t idx) {
    const std::size_t i = idx / static_cast<std::size_t>(cfg.seeds);
    const int k = static_cast<int>(idx % static_cast<std::size_t>(cfg.seeds));
    RandomFeatureModel model(init_features(cfg.d(), m, cfg.feature.wdist, plan.bank_seed(k)), cfg.feature.act);
    TrainConfig tc;
    tc.eta = pr.warmup_eta;
    tc.B = cfg.B;
    tc.T = cfg.probe_warmup_steps;
    tc.stream = ctx.root.child("probe-warmup").child(static_cast<std::uint64_t>(m)).child(k);
    sgd_train(model, ctx.recipes[i], tc);
    tinf[idx] = model.theta.cwiseAbs().maxCoeff();
    pr.per_bank[i][static_cast<std::size_t>(k)] =
        taylor_stats(model, ctx.recipes[i], ctx.val_set, opt,
                     ctx.root.child("probe").child(static_cast<std::uint64_t>(m)).child(k));
  });
  for (std::size_t i = 0; i < nr; ++i) {
    pr.ids.push_back(ctx.recipes[i].id());
    pr.pooled.push_back(pool_stats(pr.per_bank[i]));
  }
  pr.theta_inf = *std::max_element(tinf.begin(), tinf.end());
  return pr;
}

// Float floor uses the RMS coordinate of the largest batch gradient as the
// representative per-coordinate update size.
inline EtaBound bound_from_probe(const ExperimentConfig& cfg, const ProbeResult& pr, double standard) {
  double G2 = 0.0;
  for (const auto& s : pr.pooled) G2 = std::max(G2, s.G2);
  const double grad_scale = std::sqrt(G2 / pr.width);
  Eigen::VectorXd scale = Eigen::VectorXd::Constant(1, pr.theta_inf);
  const double floor = grad_scale > 0.0 ? float_floor(scale, grad_scale, cfg.precision) : 0.0;
  return compute_eta_bound(pr.ids, pr.pooled, standard, floor);
}

// ------------------------------------------------------------ top-k

struct TopkComparison {
  int width = 0;
  double standard_eta = kNaN, tiny_eta = kNaN;
  std::vector<TopkResult> standard, tiny;
  bool dominates = false;  // tiny <= standard at every k
  bool strict_at_1 = false;
};

inline TopkComparison compare_topk(const SweepView& v, int proxy_m, int target_m, double standard, double tiny) {
  TopkComparison c;
  c.width = proxy_m;
  c.standard_eta = standard;
  c.tiny_eta = tiny;
  const auto ts = v.table(proxy_m, standard), tt = v.table(proxy_m, tiny);
  const auto target = v.tuned_table(target_m);
  if (!ts || !tt || !target) return c;
  c.standard = topk_curve(*ts, *target);
  c.tiny = topk_curve(*tt, *target);
  c.dominates = true;
  for (std::size_t k = 0; k < c.tiny.size(); ++k) c.dominates = c.dominates && c.tiny[k].regret <= c.standard[k].regret;
  c.strict_at_1 = c.tiny[0].regret < c.standard[0].regret;
  return c;
}

// ------------------------------------------------------------ one-step checks

struct OneStepMeasure {
  double measured = 0.0;  // mean over probe batches of l_val(theta - eta g_b) - l_val(theta)
  double predicted = 0.0;
  double rel_error = 0.0;
};

// Uses the same batches as taylor_stats with the same stream, so the
// measurement and the prediction see identical gradient draws.
inline OneStepMeasure measure_one_step(const RandomFeatureModel& model, const DataRecipe& recipe, const EvalSet& val,
                                       const TaylorStats& st, double eta, int n_batches, Stream stream) {
  Stream batches = stream.child("batches");
  const Eigen::VectorXd r0 = residuals(model, val.X, val.y);
  RandomFeatureModel moved = model;
  double acc = 0.0;
  for (int k = 0; k < n_batches; ++k) {
    const LabeledBatch b = sample_batch(recipe, st.B, batches);
    moved.theta = model.theta - eta * batch_gradient(model, b);
    const Eigen::VectorXd r1 = residuals(moved, val.X, val.y);
    acc += 0.5 * ((r1 - r0).array() * (r1 + r0).array()).mean();
  }
  OneStepMeasure m;
  m.measured = acc / n_batches;
  m.predicted = taylor_predict(st, eta);
  m.rel_error = std::abs(m.measured - m.predicted) / std::abs(m.measured);
  return m;
}

struct AlignmentCheck {
  std::string recipe_id;
  double eta = 0.0;
  double lambda_max = 0.0;
  double g_align = 0.0;
  double loss_drop = 0.0;  // l_val(theta_0) - l_val(theta_T)
  double rel_error = 0.0;  // |eta g_align - drop| / |drop|
  double coverage = 0.0;
};

inline AlignmentCheck alignment_check(const ModelSpec& ms, std::uint64_t bank_seed, const DataRecipe& recipe,
                                      const EvalSet& val, int B, int steps, double eta_scale, Stream stream) {
  RandomFeatureModel model(init_features(ms.d, ms.m, ms.wdist, bank_seed), ms.act);
  AlignmentCheck ac;
  ac.recipe_id = recipe.id();
  ac.lambda_max = val_lambda_max(model, val).lambda;
  ac.eta = eta_scale / ac.lambda_max;
  const double l0 = eval_loss(model, val).estimate;
  TrainConfig tc;
  tc.eta = ac.eta;
  tc.B = B;
  tc.T = steps;
  tc.stream = stream;
  tc.snapshot_every = 1;
  const RandomFeatureModel shape = model;
  const TrainTrajectory tr = sgd_train(model, recipe, tc);
  const AlignmentScore s = accumulated_alignment(shape, tr, recipe, val, B);
  ac.g_align = s.value;
  ac.coverage = s.coverage;
  ac.loss_drop = l0 - eval_loss(model, val).estimate;
  ac.rel_error = std::abs(ac.eta * ac.g_align - ac.loss_drop) / std::abs(ac.loss_drop);
  return ac;
}

}  // namespace tinylr
