#pragma once
// Ranking metrics over recipe score tables: rank correlation, pairwise sign
// agreement, top-k regret, accumulated gradient alignment and seed bootstrap.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinylr/lr_bound.hpp"
#include "tinylr/recipes.hpp"
#include "tinylr/rf_model.hpp"
#include "tinylr/rng.hpp"
#include "tinylr/trainer.hpp"

namespace tinylr {

// Lower scores are better. Provenance names where the scores came from, for
// example "proxy@0.001", "target-opt" or "oracle".
struct RecipeScoreTable {
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<double> std_errs;
  std::string provenance;

  std::size_t size() const { return ids.size(); }

  void add(std::string id, double score, double se = 0.0) {
    ids.push_back(std::move(id));
    scores.push_back(score);
    std_errs.push_back(se);
  }

  void validate() const {
    if (scores.size() != ids.size() || std_errs.size() != ids.size())
      throw std::invalid_argument("RecipeScoreTable: column lengths differ");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!seen.insert(ids[i]).second) throw std::invalid_argument("RecipeScoreTable: duplicate id " + ids[i]);
      if (!std::isfinite(scores[i])) throw std::invalid_argument("RecipeScoreTable: non-finite score for " + ids[i]);
    }
  }

  double score_of(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return scores[i];
    throw std::invalid_argument("RecipeScoreTable: unknown id " + id);
  }
};

// 1-based ranks, ascending; tied values share the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

// Scores of b reordered to follow the ids of a.
inline std::vector<double> aligned_scores(const RecipeScoreTable& a, const RecipeScoreTable& b) {
  if (a.size() != b.size()) throw std::invalid_argument("score tables have different id sets");
  std::map<std::string, double> bm;
  for (std::size_t i = 0; i < b.size(); ++i) bm[b.ids[i]] = b.scores[i];
  std::vector<double> out;
  for (const auto& id : a.ids) {
    const auto it = bm.find(id);
    if (it == bm.end()) throw std::invalid_argument("score tables have different id sets: " + id);
    out.push_back(it->second);
  }
  return out;
}

// Pearson correlation of average ranks. NaN when either side is all ties.
inline double spearman(const RecipeScoreTable& a, const RecipeScoreTable& b) {
  a.validate();
  b.validate();
  if (a.size() < 2) throw std::invalid_argument("spearman: need at least two recipes");
  const std::vector<double> bs = aligned_scores(a, b);
  return pearson(average_ranks(a.scores), average_ranks(bs));
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need equal lengths >= 2");
  return pearson(average_ranks(a), average_ranks(b));
}

// ------------------------------------------------------------ pairwise gaps

inline constexpr double kSignSE = 2.0;

struct PairwiseGap {
  std::string i, j;
  double value = 0.0;  // score_i - score_j
  double std_err = 0.0;
  int sign = 0;  // 0 when |value| < 2 std_err
};

inline int gap_sign(double value, double se) {
  if (std::abs(value) < kSignSE * se || value == 0.0) return 0;
  return value > 0 ? 1 : -1;
}

inline PairwiseGap make_gap(std::string i, std::string j, double value, double se) {
  return {std::move(i), std::move(j), value, se, gap_sign(value, se)};
}

// All pairs i < j in table order, standard errors combined in quadrature.
inline std::vector<PairwiseGap> pairwise_gaps(const RecipeScoreTable& t) {
  t.validate();
  std::vector<PairwiseGap> out;
  for (std::size_t a = 0; a < t.size(); ++a)
    for (std::size_t b = a + 1; b < t.size(); ++b)
      out.push_back(make_gap(t.ids[a], t.ids[b], t.scores[a] - t.scores[b],
                             std::hypot(t.std_errs[a], t.std_errs[b])));
  return out;
}

inline PairwiseGap reversed(const PairwiseGap& g) { return {g.j, g.i, -g.value, g.std_err, -g.sign}; }

struct PairAgreement {
  std::string i, j;
  int sign_a = 0, sign_b = 0;
  bool compared = false;
  bool match = false;
};

struct SignAgreement {
  double fraction = std::numeric_limits<double>::quiet_NaN();
  int n_compared = 0;
  int n_excluded = 0;
  bool defined = false;
  std::vector<PairAgreement> pairs;
};

// Pairs are matched by their unordered id pair; a reversed pair in b is
// flipped before comparison.
inline SignAgreement sign_agreement(const std::vector<PairwiseGap>& a, const std::vector<PairwiseGap>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("sign_agreement: pair sets differ");
  std::map<std::pair<std::string, std::string>, PairwiseGap> bm;
  for (const auto& g : b) bm[{g.i, g.j}] = g;
  SignAgreement out;
  int agree = 0;
  for (const auto& ga : a) {
    PairwiseGap gb;
    if (auto it = bm.find({ga.i, ga.j}); it != bm.end()) {
      gb = it->second;
    } else if (auto jt = bm.find({ga.j, ga.i}); jt != bm.end()) {
      gb = reversed(jt->second);
    } else {
      throw std::invalid_argument("sign_agreement: pair (" + ga.i + ", " + ga.j + ") missing from the second set");
    }
    PairAgreement p{ga.i, ga.j, ga.sign, gb.sign, false, false};
    if (ga.sign == 0 || gb.sign == 0) {
      ++out.n_excluded;
    } else {
      p.compared = true;
      p.match = ga.sign == gb.sign;
      ++out.n_compared;
      agree += p.match ? 1 : 0;
    }
    out.pairs.push_back(p);
  }
  out.defined = out.n_compared > 0;
  if (out.defined) out.fraction = static_cast<double>(agree) / out.n_compared;
  return out;
}

// ------------------------------------------------------------ top-k regret

struct TopkResult {
  int k = 0;
  double regret = 0.0;
  std::vector<std::string> selected;
  bool boundary_tie = false;  // the k-th and (k+1)-th proxy scores were equal
};

inline TopkResult topk_regret(const RecipeScoreTable& proxy, const RecipeScoreTable& target_opt, int k) {
  proxy.validate();
  target_opt.validate();
  const int n = static_cast<int>(proxy.size());
  if (k < 1 || k > n) throw std::invalid_argument("topk_regret: k must lie in [1, n]");
  const std::vector<double> tgt = aligned_scores(proxy, target_opt);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (proxy.scores[a] != proxy.scores[b]) return proxy.scores[a] < proxy.scores[b];
    return proxy.ids[a] < proxy.ids[b];
  });
  TopkResult r;
  r.k = k;
  double best_sel = std::numeric_limits<double>::infinity();
  for (int i = 0; i < k; ++i) {
    r.selected.push_back(proxy.ids[order[i]]);
    best_sel = std::min(best_sel, tgt[order[i]]);
  }
  if (k < n) r.boundary_tie = proxy.scores[order[k - 1]] == proxy.scores[order[k]];
  r.regret = best_sel - *std::min_element(tgt.begin(), tgt.end());
  return r;
}

inline std::vector<TopkResult> topk_curve(const RecipeScoreTable& proxy, const RecipeScoreTable& target_opt) {
  std::vector<TopkResult> out;
  for (int k = 1; k <= static_cast<int>(proxy.size()); ++k) out.push_back(topk_regret(proxy, target_opt, k));
  return out;
}

// ------------------------------------------------------------ alignment

struct AlignmentScore {
  double value = 0.0;
  double coverage = 0.0;  // fraction of steps in the window that had a snapshot
  bool partial = false;
  int window = 0;
};

// Sum over snapshot steps t < T (t = 0 alone when T = 0) of
// <grad l_val(theta_t), grad l(theta_t; batch_t)>, with batch_t re-derived
// from the trajectory's sample stream.
inline AlignmentScore accumulated_alignment(const RandomFeatureModel& model_shape, const TrainTrajectory& tr,
                                            const DataRecipe& recipe, const EvalSet& val, int B) {
  if (tr.thetas.empty()) throw std::invalid_argument("accumulated_alignment: trajectory has no snapshots");
  const int T = tr.diverged ? tr.diverged_step : tr.thetas.back().first;
  const int last = std::max(T - 1, 0);
  RandomFeatureModel model = model_shape;
  Stream s = tr.stream;
  AlignmentScore out;
  out.window = T == 0 ? 1 : T;
  int covered = 0;
  std::size_t next = 0;
  for (int t = 0; t <= last; ++t) {
    const LabeledBatch b = sample_batch(recipe, B, s);
    while (next < tr.thetas.size() && tr.thetas[next].first < t) ++next;
    if (next == tr.thetas.size() || tr.thetas[next].first != t) continue;
    model.theta = tr.thetas[next].second;
    out.value += val_gradient(model, val).dot(batch_gradient(model, b));
    ++covered;
  }
  out.coverage = static_cast<double>(covered) / out.window;
  out.partial = covered < out.window;
  return out;
}

// ------------------------------------------------------------ bootstrap

struct BootstrapCI {
  double point = std::numeric_limits<double>::quiet_NaN();
  double lo = std::numeric_limits<double>::quiet_NaN();
  double hi = std::numeric_limits<double>::quiet_NaN();
  int n_seeds = 0;
  int n_undefined = 0;  // resamples where the statistic was NaN
  bool low_confidence = false;
};

inline double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Percentile interval for a statistic of per-recipe scores averaged over
// seeds. per_seed is recipes x seeds; seeds are resampled with replacement.
inline BootstrapCI bootstrap_over_seeds(const Eigen::MatrixXd& per_seed,
                                        const std::function<double(const Eigen::VectorXd&)>& stat, Stream stream,
                                        int n_resamples = 1000, double level = 0.95) {
  const Eigen::Index S = per_seed.cols();
  if (S < 1) throw std::invalid_argument("bootstrap_over_seeds: no seeds");
  BootstrapCI ci;
  ci.n_seeds = static_cast<int>(S);
  ci.point = stat(per_seed.rowwise().mean());
  if (S == 1) {
    ci.lo = ci.hi = ci.point;
    ci.low_confidence = true;
    return ci;
  }
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(n_resamples));
  Eigen::VectorXd mean(per_seed.rows());
  for (int r = 0; r < n_resamples; ++r) {
    mean.setZero();
    for (Eigen::Index k = 0; k < S; ++k) mean += per_seed.col(static_cast<Eigen::Index>(stream.below(S)));
    const double v = stat(mean / static_cast<double>(S));
    if (std::isnan(v)) {
      ++ci.n_undefined;
      continue;
    }
    vals.push_back(v);
  }
  std::sort(vals.begin(), vals.end());
  const double tail = 0.5 * (1.0 - level);
  ci.lo = quantile_sorted(vals, tail);
  ci.hi = quantile_sorted(vals, 1.0 - tail);
  return ci;
}

}  // namespace tinylr
