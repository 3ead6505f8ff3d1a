#pragma once
// Pinned experiment configs, the preset experiments built on them, and
// report generation from a results store.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tinylr/analysis.hpp"
#include "tinylr/csv.hpp"
#include "tinylr/oracle.hpp"
#include "tinylr/runner.hpp"

namespace tinylr {

// ------------------------------------------------------------ pinned family

// Gain A1 of the infinite-width target for a linear coefficient function on
// the sphere: f*(x) = A1 <c1, x> for unit x.
inline double linear_gain(const FeatureLaw& f, int d) {
  RecipeDescriptor r;
  r.id = "gain";
  r.law.d = d;
  r.basis = {"u1"};
  r.c = {1.0};
  r.feature = f;
  return make_recipe(r).target_value(Eigen::VectorXd::Unit(d, 0));
}

struct FamilyMember {
  const char* id;
  double s;  // weight on the validation direction
  double L;  // squared distance of the coefficient vector from the validation one, in units of kappa^2
};

// The error sits on coordinate 4, inside the dense cap of the training law,
// so it is learned well before the validation direction. Oracle order follows
// L and s, while the error norm L - (1 - s)^2 shrinks down the family.
inline constexpr FamilyMember kPinnedFamily[] = {
    {"R1", 1.00, 0.200}, {"R2", 0.88, 0.228}, {"R3", 0.78, 0.251}, {"R4", 0.67, 0.275},
    {"R5", 0.56, 0.295}, {"R6", 0.44, 0.320}, {"R7", 0.39, 0.401}, {"R8", 0.31, 0.484},
};

// Shared training law: 30% uniform, 70% in a cap of angular radius 0.3
// around e4.
inline InputLaw pinned_train_law(int d) {
  InputLaw law;
  law.d = d;
  law.kind = LawKind::caps;
  law.caps.push_back({0.3, Eigen::VectorXd(), std::numbers::pi});
  law.caps.push_back({0.7, Eigen::VectorXd::Unit(d, 3), 0.3});
  return law;
}

// Validation target sqrt(d) x_2 on the uniform sphere; recipe k has
// coefficient kappa (s e2 + delta e4) with delta^2 = L - (1 - s)^2.
inline ExperimentConfig pinned_base(int d = 8) {
  ExperimentConfig c;
  c.feature.act = ActKind::tanh;
  c.feature.wdist = WeightDist::sphere;
  const double kappa = std::sqrt(static_cast<double>(d)) / linear_gain(c.feature, d);
  c.val.id = "val";
  c.val.law.d = d;
  c.val.law.kind = LawKind::sphere;
  c.val.basis = {"u2"};
  c.val.c = {kappa};
  c.val.feature = c.feature;
  for (const auto& f : kPinnedFamily) {
    RecipeDescriptor r;
    r.id = f.id;
    r.law = pinned_train_law(d);
    const double delta = std::sqrt(f.L - (1.0 - f.s) * (1.0 - f.s));
    r.basis = {"u2", "u4"};
    r.c = {kappa * f.s, kappa * delta};
    r.feature = c.feature;
    c.recipes.push_back(r);
  }
  c.etas = LrGrid::log_spaced(1e-5, 1.0, 12).values;
  c.B = 32;
  c.tpp = 20.0;
  c.seeds = 5;
  c.master_seed = 20240611;
  c.n_val = 8192;
  return c;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"fragility",     "heatmap",      "corr-vs-lr",  "topk",
                                              "theorem-check", "approx-decay", "bound-check", "alignment-check"};
  return names;
}

inline ExperimentConfig pinned_config(const std::string& name) {
  ExperimentConfig c = pinned_base();
  if (name == "main" || name == "heatmap" || name == "corr-vs-lr" || name == "topk" || name == "theorem-check" ||
      name == "bound-check") {
    c.experiment_id = "main";
    c.proxy_widths = {64, 256};
    c.target_widths = {2048};
  } else if (name == "fragility") {
    c.experiment_id = "fragility";
    c.proxy_widths = {64, 256};
    c.target_widths = {};
  } else if (name == "approx-decay") {
    c.experiment_id = "approx-decay";
    c.proxy_widths = {64};
    c.target_widths = {};
  } else if (name == "alignment-check") {
    c.experiment_id = "alignment-check";
    c.proxy_widths = {64};
    c.target_widths = {};
  } else {
    throw std::invalid_argument("unknown preset " + name);
  }
  c.validate();
  return c;
}

// ------------------------------------------------------------ outputs

struct MetricRow {
  std::string metric, k_or_pair;
  double value = 0.0;
  int n_excluded = 0;
  std::string provenance_a, provenance_b;
};

inline csv::Table metrics_table(const std::vector<MetricRow>& rows) {
  csv::Table t;
  t.header = {"metric", "k_or_pair", "value", "n_excluded", "provenance_a", "provenance_b"};
  for (const auto& r : rows)
    t.rows.push_back({r.metric, r.k_or_pair, csv::num(r.value), std::to_string(r.n_excluded), r.provenance_a,
                      r.provenance_b});
  return t;
}

struct PresetOutput {
  std::filesystem::path dir;
  nlohmann::json summary;
  std::vector<std::string> files;
};

class PresetFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::filesystem::path store_dir(const std::filesystem::path& out, const ExperimentConfig& cfg) {
  return out / "store" / cfg.experiment_id;
}

struct PresetEnv {
  ExperimentConfig cfg;
  std::filesystem::path out;
  std::filesystem::path dir;
  std::vector<std::string> files;

  void write_csv(const std::string& name, const csv::Table& t) {
    std::filesystem::create_directories(dir);
    csv::write_file((dir / name).string(), t);
    files.push_back(name);
  }
  void write_json(const std::string& name, const nlohmann::json& j) {
    write_text(dir / name, j.dump(2) + "\n");
    files.push_back(name);
  }
};

inline std::string na(double v) { return std::isnan(v) ? "NA" : csv::num(v); }

inline csv::Table corr_table(const std::vector<CorrPoint>& pts, const std::vector<double>& same_eta) {
  csv::Table t;
  t.header = {"width", "eta", "rho_target_opt", "ci_lo", "ci_hi", "rho_target_same_eta", "rho_oracle", "low_confidence"};
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    t.rows.push_back({std::to_string(p.width), csv::num(p.eta), na(p.rho), na(p.ci.lo), na(p.ci.hi),
                      i < same_eta.size() ? na(same_eta[i]) : "NA", na(p.rho_oracle),
                      p.ci.low_confidence ? "1" : "0"});
  }
  return t;
}

// Proxy at (m, eta) against the target width at the same eta.
inline std::vector<double> same_eta_corr(const ExperimentConfig& cfg, const SweepView& v, int m, int target_m) {
  std::vector<double> out;
  for (double eta : cfg.etas) {
    const auto a = v.table(m, eta), b = v.table(target_m, eta);
    out.push_back(a && b ? spearman(*a, *b) : kNaN);
  }
  return out;
}

// Grid eta values from the smallest up to the last one at which rho stays at
// least `level` without interruption.
inline std::pair<double, double> high_transfer_region(const std::vector<CorrPoint>& pts, double level = 0.9) {
  if (pts.empty() || !(pts.front().rho >= level)) return {kNaN, kNaN};
  double hi = pts.front().eta;
  for (const auto& p : pts) {
    if (!(p.rho >= level)) break;
    hi = p.eta;
  }
  return {pts.front().eta, hi};
}

struct MainRun {
  ExperimentConfig cfg;
  SweepContext ctx;
  ResultsStore store;
  SweepSummary sweep;
};

inline MainRun open_and_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  MainRun r{cfg, build_context(cfg), ResultsStore::open(store_dir(out, cfg), cfg), {}};
  r.sweep = run_sweep(r.cfg, r.ctx, r.store);
  return r;
}

// ------------------------------------------------------------ presets

inline void preset_fragility(PresetEnv& env) {
  MainRun run = open_and_sweep(env.cfg, env.out);
  const SweepView v(run.cfg, run.store);
  RankingFlip f;
  for (int w : run.cfg.proxy_widths) {
    const RankingFlip g = find_ranking_flip(run.cfg, v, w);
    f.n_candidates += g.n_candidates;
    if (g.found && (!f.found || g.min_z > f.min_z)) {
      const int n = f.n_candidates;
      f = g;
      f.n_candidates = n;
    }
  }
  const int m = f.width;
  if (!f.found)
    throw PresetFailure("fragility: no ranking flip with both gaps >= " + csv::num(run.cfg.fragility_min_z) +
                        " std errs within an eta ratio of " + csv::num(run.cfg.fragility_max_ratio) +
                        "; enlarge the search space and re-pin the config");
  csv::Table t;
  t.header = {"recipe_a", "recipe_b", "width", "eta", "gap", "std_err", "z"};
  for (const auto* g : {&f.gap1, &f.gap2}) {
    const double eta = g == &f.gap1 ? f.eta1 : f.eta2;
    t.rows.push_back({f.a, f.b, std::to_string(m), csv::num(eta), csv::num(g->value), csv::num(g->std_err),
                      csv::num(g->value / g->std_err)});
  }
  env.write_csv("fragility.csv", t);
  const std::string pa = "proxy@m=" + std::to_string(m) + "@eta=" + csv::num(f.eta1);
  const std::string pb = "proxy@m=" + std::to_string(m) + "@eta=" + csv::num(f.eta2);
  env.write_csv("metrics.csv", metrics_table({{"ranking_flip_min_z", f.a + "|" + f.b, f.min_z, 0, pa, pb},
                                              {"ranking_flip_candidates", "", static_cast<double>(f.n_candidates), 0,
                                               pa, pb}}));
  env.write_json("summary.json", {{"found", true},
                                  {"pair", {f.a, f.b}},
                                  {"width", m},
                                  {"eta", {f.eta1, f.eta2}},
                                  {"gap", {f.gap1.value, f.gap2.value}},
                                  {"std_err", {f.gap1.std_err, f.gap2.std_err}},
                                  {"min_z", f.min_z},
                                  {"n_candidates", f.n_candidates}});
}

inline void preset_heatmap(PresetEnv& env) {
  MainRun run = open_and_sweep(env.cfg, env.out);
  const SweepView v(run.cfg, run.store);
  const auto target = v.tuned_table(run.cfg.target_width());
  const RecipeScoreTable orc = oracle_table(run.store.oracle);
  csv::Table t;
  t.header = {"width", "eta", "rho_target_opt", "rho_oracle"};
  std::vector<MetricRow> mrows;
  for (int m : run.cfg.all_widths())
    for (double eta : run.cfg.etas) {
      const auto p = v.table(m, eta);
      const double rt = p && target ? spearman(*p, *target) : kNaN;
      const double ro = p ? spearman(*p, orc) : kNaN;
      t.rows.push_back({std::to_string(m), csv::num(eta), na(rt), na(ro)});
      if (p && target) mrows.push_back({"spearman", "", rt, 0, p->provenance, target->provenance});
    }
  env.write_csv("heatmap.csv", t);
  env.write_csv("metrics.csv", metrics_table(mrows));
  env.write_json("summary.json", {{"widths", run.cfg.all_widths()}, {"etas", run.cfg.etas}});
}

inline void preset_corr_vs_lr(PresetEnv& env) {
  MainRun run = open_and_sweep(env.cfg, env.out);
  const SweepView v(run.cfg, run.store);
  const int tm = run.cfg.target_width();
  csv::Table all;
  std::vector<MetricRow> mrows;
  nlohmann::json summary = nlohmann::json::object();
  for (int m : run.cfg.all_widths()) {
    const auto pts = corr_vs_lr(run.cfg, v, run.store.oracle, m, tm, run.cfg.etas, run.ctx.root.child("bootstrap"));
    const csv::Table t = corr_table(pts, same_eta_corr(run.cfg, v, m, tm));
    if (all.header.empty()) all.header = t.header;
    all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
    for (const auto& p : pts)
      if (p.available)
        mrows.push_back({"spearman", "", p.rho, 0, "proxy@m=" + std::to_string(m) + "@eta=" + csv::num(p.eta),
                         "target-opt@m=" + std::to_string(tm)});
    const double se = standard_eta(run.cfg, v, m);
    const auto reg = high_transfer_region(pts);
    summary[std::to_string(m)] = {{"standard_eta", se}, {"region_rho_ge_0.9", {na(reg.first), na(reg.second)}}};
  }
  env.write_csv("corr_vs_lr.csv", all);
  env.write_csv("metrics.csv", metrics_table(mrows));
  env.write_json("summary.json", summary);
}

struct BoundRun {
  ProbeResult probe;
  EtaBound bound;
  double standard = kNaN;
};

inline BoundRun run_bound(const ExperimentConfig& cfg, const SweepContext& ctx, const SweepView& v) {
  const int m = cfg.proxy_widths.front();
  BoundRun b;
  b.standard = standard_eta(cfg, v, m);
  b.probe = probe_recipes(cfg, ctx, m);
  b.bound = bound_from_probe(cfg, b.probe, b.standard);
  return b;
}

inline nlohmann::json bound_json(const BoundRun& b) {
  nlohmann::json j = b.bound.to_json();
  j["probe"] = {{"width", b.probe.width},
                {"warmup_eta", b.probe.warmup_eta},
                {"standard_eta", b.standard},
                {"argmin_pair", {b.bound.argmin_pair.first, b.bound.argmin_pair.second}},
                {"usable", b.bound.usable}};
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t i = 0; i < b.probe.ids.size(); ++i) {
    nlohmann::json s = b.probe.pooled[i].to_json();
    s["recipe_id"] = b.probe.ids[i];
    per.push_back(s);
  }
  j["probe"]["per_recipe"] = per;
  return j;
}

inline void preset_topk(PresetEnv& env) {
  MainRun run = open_and_sweep(env.cfg, env.out);
  const int m = run.cfg.proxy_widths.front();
  BoundRun b;
  {
    const SweepView v(run.cfg, run.store);
    b = run_bound(run.cfg, run.ctx, v);
  }
  const double tiny = b.bound.recommended_eta;
  run_cells(run.cfg, run.ctx, run.store, grid_cells(run.cfg, {m}, {tiny}));
  run.store.save();
  const SweepView v(run.cfg, run.store);
  const TopkComparison c = compare_topk(v, m, run.cfg.target_width(), b.standard, tiny);
  csv::Table t;
  t.header = {"k", "regret_standard", "regret_tiny", "selected_standard", "selected_tiny"};
  std::vector<MetricRow> mrows;
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ";") + x;
    return s;
  };
  for (std::size_t k = 0; k < c.tiny.size(); ++k) {
    t.rows.push_back({std::to_string(k + 1), csv::num(c.standard[k].regret), csv::num(c.tiny[k].regret),
                      join(c.standard[k].selected), join(c.tiny[k].selected)});
    const std::string tg = "target-opt@m=" + std::to_string(run.cfg.target_width());
    mrows.push_back({"topk_regret", std::to_string(k + 1), c.standard[k].regret, 0,
                     "proxy@m=" + std::to_string(m) + "@eta=" + csv::num(b.standard), tg});
    mrows.push_back({"topk_regret", std::to_string(k + 1), c.tiny[k].regret, 0,
                     "proxy@m=" + std::to_string(m) + "@eta=" + csv::num(tiny), tg});
  }
  env.write_csv("topk.csv", t);
  env.write_csv("metrics.csv", metrics_table(mrows));
  env.write_json("bound.json", bound_json(b));
  env.write_json("summary.json", {{"standard_eta", b.standard},
                                  {"tiny_eta", tiny},
                                  {"dominates", c.dominates},
                                  {"strict_at_k1", c.strict_at_1}});
}

inline void preset_theorem_check(PresetEnv& env) {
  MainRun run = open_and_sweep(env.cfg, env.out);
  const SweepView v(run.cfg, run.store);
  auto pairs = run.cfg.pairs;
  if (!pairs.empty()) {
    const auto og = oracle_gaps(run.store.oracle);
    for (const auto& [a, b] : pairs)
      for (const auto& g : og)
        if (((g.i == a && g.j == b) || (g.i == b && g.j == a)) && g.sign == 0)
          throw PresetFailure("theorem-check: the oracle gap for (" + a + ", " + b +
                              ") is within 2 std errs of zero, so the ranking it predicts is undefined; choose a "
                              "different pair");
  } else {
    pairs = all_pairs(v.ids());
  }
  csv::Table t;
  t.header = {"width", "eta", "n_pairs", "raw_agreement", "sign_agreement", "n_compared", "n_excluded"};
  std::vector<MetricRow> mrows;
  auto add = [&](const TheoremCheck& tc, const std::string& eta_label, const std::string& prov) {
    t.rows.push_back({std::to_string(tc.width), eta_label, std::to_string(tc.pairs.size()), na(tc.raw_agreement),
                      na(tc.agreement.fraction), std::to_string(tc.agreement.n_compared),
                      std::to_string(tc.agreement.n_excluded)});
    mrows.push_back({"sign_agreement", "", tc.agreement.fraction, tc.agreement.n_excluded, prov,
                     "infinite-width-oracle"});
  };
  for (int m : run.cfg.all_widths()) {
    for (double eta : run.cfg.etas)
      add(theorem_check_at(v, run.store.oracle, pairs, m, eta), csv::num(eta),
          "proxy@m=" + std::to_string(m) + "@eta=" + csv::num(eta));
    add(theorem_check_tuned(v, run.store.oracle, pairs, m), "tuned", "target-opt@m=" + std::to_string(m));
  }
  env.write_csv("theorem_check.csv", t);
  env.write_csv("metrics.csv", metrics_table(mrows));
  env.write_json("summary.json", {{"oracle", run.store.oracle_json()}});
}

inline void preset_approx_decay(PresetEnv& env) {
  const ExperimentConfig& cfg = env.cfg;
  const SweepContext ctx = build_context(cfg);
  DecayOptions opt;
  opt.n_mc_per_width = cfg.decay_n_mc_per_width;
  opt.master = ctx.root.child("decay").key();
  opt.val = &ctx.val_set;
  const DecayFit fit = approx_error_decay(ctx.val, cfg.model_spec(cfg.decay_widths.front()), cfg.decay_widths,
                                          cfg.decay_seeds, opt);
  csv::Table t;
  t.header = {"m", "approx_error", "std_err", "val_loss", "excluded"};
  for (const auto& p : fit.points)
    t.rows.push_back({std::to_string(p.m), csv::num(p.mean), csv::num(p.std_err), csv::num(p.val_loss),
                      p.excluded ? "1" : "0"});
  env.write_csv("approx_decay.csv", t);
  env.write_csv("metrics.csv", metrics_table({{"approx_decay_slope", "", fit.slope, 0, "ridgeless@" + ctx.val.id(), ""},
                                              {"approx_decay_c1", "", fit.c1, 0, "ridgeless@" + ctx.val.id(), ""}}));
  env.write_json("summary.json",
                 {{"slope", fit.slope}, {"intercept", fit.intercept}, {"c1", fit.c1}, {"warnings", fit.warnings}});
}

inline void preset_bound_check(PresetEnv& env) {
  MainRun run = open_and_sweep(env.cfg, env.out);
  const SweepView v(run.cfg, run.store);
  const int m = run.cfg.proxy_widths.front();
  const BoundRun b = run_bound(run.cfg, run.ctx, v);
  const auto pts =
      corr_vs_lr(run.cfg, v, run.store.oracle, m, run.cfg.target_width(), run.cfg.etas, run.ctx.root.child("bootstrap"));
  const auto reg = high_transfer_region(pts);
  const double up = b.bound.eta_tiny_upper;
  const bool inside = up >= reg.first && up <= reg.second;
  env.write_json("bound.json", bound_json(b));
  env.write_csv("corr_vs_lr.csv", corr_table(pts, same_eta_corr(run.cfg, v, m, run.cfg.target_width())));
  env.write_csv("metrics.csv", metrics_table({{"eta_tiny_upper", "", up, 0, "probe@m=" + std::to_string(m), ""},
                                              {"region_lo", "", reg.first, 0, "proxy@m=" + std::to_string(m), ""},
                                              {"region_hi", "", reg.second, 0, "proxy@m=" + std::to_string(m), ""}}));
  env.write_json("summary.json", {{"eta_tiny_upper", up},
                                  {"region", {na(reg.first), na(reg.second)}},
                                  {"inside", inside},
                                  {"recommended_eta", b.bound.recommended_eta}});
}

// Every family recipe plus one run trained on the validation recipe itself,
// where the alignment is a squared norm and cannot cancel.
inline void preset_alignment_check(PresetEnv& env) {
  const ExperimentConfig& cfg = env.cfg;
  const SweepContext ctx = build_context(cfg);
  const int m = cfg.proxy_widths.front();
  const CellSeeds plan = CellSeeds::from_master(cfg.master_seed, m);
  std::vector<const DataRecipe*> runs;
  for (const auto& r : ctx.recipes) runs.push_back(&r);
  runs.push_back(&ctx.val);
  std::vector<AlignmentCheck> res(runs.size());
  parallel_for(runs.size(), cfg.threads, [&](std::size_t i) {
    res[i] = alignment_check(cfg.model_spec(m), plan.bank_seed(0), *runs[i], ctx.val_set, cfg.B, cfg.align_steps,
                             cfg.align_eta_scale, ctx.root.child("align").child(runs[i]->id()));
  });
  csv::Table t;
  t.header = {"recipe_id", "eta", "lambda_max", "g_align", "eta_g_align", "loss_drop", "rel_error"};
  std::vector<MetricRow> mrows;
  for (const auto& a : res) {
    t.rows.push_back({a.recipe_id, csv::num(a.eta), csv::num(a.lambda_max), csv::num(a.g_align),
                      csv::num(a.eta * a.g_align), csv::num(a.loss_drop), csv::num(a.rel_error)});
    mrows.push_back({"g_align", a.recipe_id, a.g_align, 0, "proxy@m=" + std::to_string(m), ""});
  }
  env.write_csv("alignment.csv", t);
  env.write_csv("metrics.csv", metrics_table(mrows));
  double worst = 0.0;
  for (std::size_t i = 0; i + 1 < res.size(); ++i) worst = std::max(worst, res[i].rel_error);
  env.write_json("summary.json", {{"val_rel_error", res.back().rel_error},
                                  {"family_max_rel_error", worst},
                                  {"steps", cfg.align_steps}});
}

// Runs a preset into out/<name>/, sharing sweep stores under out/store/.
inline PresetOutput run_preset(const std::string& name, const ExperimentConfig& cfg, const std::filesystem::path& out) {
  PresetEnv env{cfg, out, out / name, {}};
  std::filesystem::create_directories(env.dir);
  env.write_json("config.json", cfg.to_json());
  if (name == "fragility") preset_fragility(env);
  else if (name == "heatmap") preset_heatmap(env);
  else if (name == "corr-vs-lr") preset_corr_vs_lr(env);
  else if (name == "topk") preset_topk(env);
  else if (name == "theorem-check") preset_theorem_check(env);
  else if (name == "approx-decay") preset_approx_decay(env);
  else if (name == "bound-check") preset_bound_check(env);
  else if (name == "alignment-check") preset_alignment_check(env);
  else throw std::invalid_argument("unknown preset " + name);
  PresetOutput po;
  po.dir = env.dir;
  po.files = env.files;
  po.summary = nlohmann::json::parse(read_text(env.dir / "summary.json"));
  return po;
}

// ------------------------------------------------------------ reports

// Aggregates an existing store. Missing or diverged cells are written as NA.
inline std::vector<std::string> write_report(const std::filesystem::path& store_path, const std::string& kind,
                                             const std::filesystem::path& out) {
  const ResultsStore store = ResultsStore::open_existing(store_path);
  const ExperimentConfig cfg = ExperimentConfig::from_json(store.config_json);
  const SweepView v(cfg, store);
  std::filesystem::create_directories(out);
  std::vector<std::string> files;
  if (kind == "ranking") {
    const int tm = cfg.all_widths().back();
    csv::Table all;
    for (int m : cfg.all_widths()) {
      const auto pts = corr_vs_lr(cfg, v, store.oracle, m, tm, cfg.etas, Stream(cfg.master_seed).child("bootstrap"));
      const csv::Table t = corr_table(pts, same_eta_corr(cfg, v, m, tm));
      if (all.header.empty()) all.header = t.header;
      all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
    }
    csv::write_file((out / "ranking.csv").string(), all);
    files.push_back("ranking.csv");
  } else if (kind == "regret") {
    const int tm = cfg.all_widths().back();
    const auto target = v.tuned_table(tm);
    csv::Table t;
    t.header = {"width", "eta", "k", "regret", "selected", "boundary_tie"};
    for (int m : cfg.all_widths())
      for (double eta : cfg.etas) {
        const auto p = v.table(m, eta);
        if (!p || !target) {
          t.rows.push_back({std::to_string(m), csv::num(eta), "NA", "NA", "", "0"});
          continue;
        }
        for (const auto& r : topk_curve(*p, *target)) {
          std::string sel;
          for (const auto& s : r.selected) sel += (sel.empty() ? "" : ";") + s;
          t.rows.push_back({std::to_string(m), csv::num(eta), std::to_string(r.k), csv::num(r.regret), sel,
                            r.boundary_tie ? "1" : "0"});
        }
      }
    csv::write_file((out / "regret.csv").string(), t);
    files.push_back("regret.csv");
  } else if (kind == "bounds") {
    const SweepContext ctx = build_context(cfg);
    const BoundRun b = run_bound(cfg, ctx, v);
    write_text(out / "bound.json", bound_json(b).dump(2) + "\n");
    files.push_back("bound.json");
  } else {
    throw std::invalid_argument("unknown report kind " + kind + " (expected ranking, regret or bounds)");
  }
  return files;
}

}  // namespace tinylr
