#pragma once
// Experiment configs, the on-disk results store and the (recipe x width x
// eta x seed) sweep with its oracle pass.

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tinylr/csv.hpp"
#include "tinylr/kernel.hpp"
#include "tinylr/oracle.hpp"
#include "tinylr/recipes.hpp"
#include "tinylr/rf_model.hpp"
#include "tinylr/rng.hpp"
#include "tinylr/trainer.hpp"

namespace tinylr {

inline constexpr const char* kCodeVersion = "tinylr 0.1.0";

struct ExperimentConfig {
  std::string experiment_id = "sweep";
  FeatureLaw feature;
  std::vector<RecipeDescriptor> recipes;
  RecipeDescriptor val;
  std::vector<int> proxy_widths{64, 256};
  std::vector<int> target_widths{2048};
  std::vector<double> etas;
  int B = 32;
  double tpp = 20.0;  // samples per parameter, T = round(tpp m / B)
  int seeds = 5;
  std::uint64_t master_seed = 1;
  int n_val = 8192;

  // Oracle pass.
  std::vector<int> oracle_widths;  // empty means the proxy widths
  int oracle_n_mc_per_width = 16;
  int kernel_grid_n = 256;
  int kernel_n_u = 1 << 14;

  // Probe checkpoint for the learning-rate bound.
  int probe_warmup_steps = 500;
  double probe_warmup_eta = 0.0;  // 0 means the geometric middle of the grid
  int probe_batches = 200;
  Precision precision = Precision::f32;

  // Preset knobs.
  std::vector<std::pair<std::string, std::string>> pairs;  // theorem-check pairs, empty for all
  std::vector<int> decay_widths{64, 128, 256, 512, 1024};
  int decay_seeds = 10;
  int decay_n_mc_per_width = 64;
  int align_steps = 500;
  double align_eta_scale = 1e-3;  // eta = scale / lambda_max
  double fragility_max_ratio = 4.0;
  double fragility_min_z = 3.0;

  // Execution only; not part of the hash.
  std::string out_dir = "out";
  int threads = 1;

  int d() const { return val.law.d; }
  int steps_for(int m) const { return std::max(1, static_cast<int>(std::lround(tpp * m / B))); }
  std::vector<int> all_widths() const {
    std::vector<int> w = proxy_widths;
    w.insert(w.end(), target_widths.begin(), target_widths.end());
    std::sort(w.begin(), w.end());
    w.erase(std::unique(w.begin(), w.end()), w.end());
    return w;
  }
  int target_width() const { return target_widths.empty() ? 0 : target_widths.back(); }
  std::vector<int> oracle_width_list() const { return oracle_widths.empty() ? proxy_widths : oracle_widths; }
  double warmup_eta() const {
    return probe_warmup_eta > 0.0 ? probe_warmup_eta : std::sqrt(etas.front() * etas.back());
  }
  ModelSpec model_spec(int m) const { return {d(), m, feature.act, feature.wdist}; }

  void validate() const {
    auto fail = [](const std::string& s) { throw std::invalid_argument("config: " + s); };
    if (recipes.empty()) fail("no recipes");
    std::set<std::string> ids;
    for (const auto& r : recipes) {
      if (!ids.insert(r.id).second) fail("duplicate recipe id " + r.id);
      if (r.law.d != d()) fail("recipe " + r.id + " has a different dimension from the validation law");
    }
    if (proxy_widths.empty()) fail("no proxy widths");
    for (const auto* w : {&proxy_widths, &target_widths, &decay_widths}) {
      if (!std::is_sorted(w->begin(), w->end())) fail("widths must be sorted ascending");
      for (int m : *w)
        if (m < 1) fail("widths must be positive");
    }
    LrGrid{etas}.validate();
    if (B < 1) fail("B must be >= 1");
    if (!(tpp > 0.0)) fail("tpp must be positive");
    if (seeds < 1) fail("seeds must be >= 1");
    if (n_val < 100) fail("n_val must be at least 100");
    for (const auto& [a, b] : pairs)
      if (!ids.count(a) || !ids.count(b)) fail("pair (" + a + ", " + b + ") names an unknown recipe");
  }

  nlohmann::json to_json() const {
    using nlohmann::json;
    json rs = json::array();
    for (const auto& r : recipes) rs.push_back(recipe_to_json(r));
    json ps = json::array();
    for (const auto& [a, b] : pairs) ps.push_back({a, b});
    return {{"experiment_id", experiment_id},
            {"activation", std::string(to_string(feature.act))},
            {"weight_dist", std::string(to_string(feature.wdist))},
            {"recipes", rs},
            {"val", recipe_to_json(val)},
            {"proxy_widths", proxy_widths},
            {"target_widths", target_widths},
            {"etas", etas},
            {"B", B},
            {"tpp", tpp},
            {"seeds", seeds},
            {"master_seed", master_seed},
            {"n_val", n_val},
            {"oracle_widths", oracle_widths},
            {"oracle_n_mc_per_width", oracle_n_mc_per_width},
            {"kernel_grid_n", kernel_grid_n},
            {"kernel_n_u", kernel_n_u},
            {"probe_warmup_steps", probe_warmup_steps},
            {"probe_warmup_eta", probe_warmup_eta},
            {"probe_batches", probe_batches},
            {"precision", precision == Precision::f64 ? "f64" : precision == Precision::f32 ? "f32" : "f16"},
            {"pairs", ps},
            {"decay_widths", decay_widths},
            {"decay_seeds", decay_seeds},
            {"decay_n_mc_per_width", decay_n_mc_per_width},
            {"align_steps", align_steps},
            {"align_eta_scale", align_eta_scale},
            {"fragility_max_ratio", fragility_max_ratio},
            {"fragility_min_z", fragility_min_z}};
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.experiment_id = j.value("experiment_id", c.experiment_id);
    if (j.contains("activation")) c.feature.act = parse_activation(j["activation"].get<std::string>());
    if (j.contains("weight_dist")) c.feature.wdist = parse_weight_dist(j["weight_dist"].get<std::string>());
    for (const auto& r : j.at("recipes")) c.recipes.push_back(recipe_from_json(r, c.feature));
    c.val = recipe_from_json(j.at("val"), c.feature);
    auto get = [&](const char* k, auto& dst) {
      if (j.contains(k)) j.at(k).get_to(dst);
    };
    get("proxy_widths", c.proxy_widths);
    get("target_widths", c.target_widths);
    if (j.contains("etas")) {
      j["etas"].get_to(c.etas);
    } else if (j.contains("eta_grid")) {
      const auto& g = j["eta_grid"];
      c.etas = LrGrid::log_spaced(g.at("lo").get<double>(), g.at("hi").get<double>(), g.at("n").get<int>()).values;
    } else {
      c.etas = LrGrid::log_spaced(1e-5, 1.0, 12).values;
    }
    get("B", c.B);
    get("tpp", c.tpp);
    get("seeds", c.seeds);
    get("master_seed", c.master_seed);
    get("n_val", c.n_val);
    get("oracle_widths", c.oracle_widths);
    get("oracle_n_mc_per_width", c.oracle_n_mc_per_width);
    get("kernel_grid_n", c.kernel_grid_n);
    get("kernel_n_u", c.kernel_n_u);
    get("probe_warmup_steps", c.probe_warmup_steps);
    get("probe_warmup_eta", c.probe_warmup_eta);
    get("probe_batches", c.probe_batches);
    if (j.contains("precision")) {
      const auto p = j["precision"].get<std::string>();
      if (p == "f64") c.precision = Precision::f64;
      else if (p == "f32") c.precision = Precision::f32;
      else if (p == "f16") c.precision = Precision::f16;
      else throw std::invalid_argument("config: unknown precision " + p);
    }
    if (j.contains("pairs"))
      for (const auto& p : j["pairs"]) c.pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    get("decay_widths", c.decay_widths);
    get("decay_seeds", c.decay_seeds);
    get("decay_n_mc_per_width", c.decay_n_mc_per_width);
    get("align_steps", c.align_steps);
    get("align_eta_scale", c.align_eta_scale);
    get("fragility_max_ratio", c.fragility_max_ratio);
    get("fragility_min_z", c.fragility_min_z);
    get("out", c.out_dir);
    get("threads", c.threads);
    c.validate();
    return c;
  }

  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_str(to_json().dump())));
    return buf;
  }
};

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config " + path);
  return ExperimentConfig::from_json(nlohmann::json::parse(is));
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << s;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ------------------------------------------------------------ context

// Immutable inputs shared by every cell.
struct SweepContext {
  std::vector<DataRecipe> recipes;
  DataRecipe val;
  EvalSet val_set;
  Stream root{0};

  const DataRecipe& recipe(const std::string& id) const {
    for (const auto& r : recipes)
      if (r.id() == id) return r;
    throw std::invalid_argument("unknown recipe " + id);
  }
  int index_of(const std::string& id) const {
    for (std::size_t i = 0; i < recipes.size(); ++i)
      if (recipes[i].id() == id) return static_cast<int>(i);
    throw std::invalid_argument("unknown recipe " + id);
  }
};

inline SweepContext build_context(const ExperimentConfig& cfg) {
  cfg.validate();
  SweepContext ctx;
  for (const auto& r : cfg.recipes) ctx.recipes.push_back(make_recipe(r));
  ctx.val = make_recipe(cfg.val);
  ctx.root = Stream(cfg.master_seed);
  ctx.val_set = make_eval_set(ctx.val, cfg.n_val, ctx.root.child("val"));
  return ctx;
}

// ------------------------------------------------------------ store

struct SweepRow {
  std::string recipe_id;
  int width = 0;
  double eta = 0.0;
  int batch = 0;
  int steps = 0;
  int seed = 0;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
  double val_std_err = 0.0;
  bool diverged = false;
};

using RowKey = std::tuple<std::string, int, double, int>;

inline const std::vector<std::string> kSweepHeader{"recipe_id",       "width",          "eta",        "batch",
                                                   "steps",           "seed",           "final_train_loss",
                                                   "final_val_loss",  "val_std_err",    "diverged"};

inline OracleReport oracle_report_from_json(const nlohmann::json& j) {
  OracleReport r;
  r.recipe_id = j.at("recipe_id").get<std::string>();
  r.best_loss = j.at("best_loss").get<double>();
  r.std_err = j.at("std_err").get<double>();
  r.lambda0 = j.at("lambda0").get<double>();
  for (const auto& w : j.at("widths"))
    r.widths.push_back({w.at("m").get<int>(), w.at("approx_error").get<double>(), w.at("val_loss").get<double>()});
  for (const auto& d : j.at("delta")) {
    OracleDelta od;
    od.other_id = d.at("other_id").get<std::string>();
    od.delta.value = d.at("value").get<double>();
    od.delta.ci_lo = d.at("ci").at(0).get<double>();
    od.delta.ci_hi = d.at("ci").at(1).get<double>();
    od.delta.std_err = (od.delta.ci_hi - od.delta.ci_lo) / (2.0 * 1.96);
    od.delta.indistinguishable = std::abs(od.delta.value) <= kIndistinguishableSE * od.delta.std_err;
    r.delta.push_back(od);
  }
  return r;
}

// Rows keyed by (recipe, width, eta, seed) within one experiment directory.
// Output files are written from sorted keys, so contents do not depend on
// the order in which cells finished.
class ResultsStore {
 public:
  std::filesystem::path dir;
  std::string experiment_id;
  std::string config_hash;
  nlohmann::json config_json;
  std::map<RowKey, SweepRow> rows;
  std::vector<OracleReport> oracle;

  static ResultsStore open(const std::filesystem::path& dir, const ExperimentConfig& cfg) {
    ResultsStore s;
    s.dir = dir;
    s.experiment_id = cfg.experiment_id;
    s.config_hash = cfg.hash();
    s.config_json = cfg.to_json();
    if (std::filesystem::exists(dir / "meta.json")) {
      const auto meta = nlohmann::json::parse(read_text(dir / "meta.json"));
      if (meta.at("config_hash").get<std::string>() != s.config_hash)
        throw std::runtime_error("store " + dir.string() + " holds results for a different config (hash " +
                                 meta.at("config_hash").get<std::string>() + ", expected " + s.config_hash + ")");
      s.load_rows();
    }
    return s;
  }

  // Opens an existing store using the config recorded in it.
  static ResultsStore open_existing(const std::filesystem::path& dir) {
    const auto meta = nlohmann::json::parse(read_text(dir / "meta.json"));
    ResultsStore s;
    s.dir = dir;
    s.experiment_id = meta.at("experiment_id").get<std::string>();
    s.config_hash = meta.at("config_hash").get<std::string>();
    s.config_json = meta.at("config");
    s.load_rows();
    return s;
  }

  bool has(const RowKey& k) const { return rows.count(k) > 0; }

  void insert(const SweepRow& r) {
    const RowKey k{r.recipe_id, r.width, r.eta, r.seed};
    if (!rows.emplace(k, r).second) throw std::logic_error("ResultsStore: duplicate key for " + r.recipe_id);
  }

  csv::Table sweep_table() const {
    csv::Table t;
    t.header = kSweepHeader;
    for (const auto& [k, r] : rows)
      t.rows.push_back({r.recipe_id, std::to_string(r.width), csv::num(r.eta), std::to_string(r.batch),
                        std::to_string(r.steps), std::to_string(r.seed), csv::num(r.final_train_loss),
                        csv::num(r.final_val_loss), csv::num(r.val_std_err), r.diverged ? "1" : "0"});
    return t;
  }

  nlohmann::json oracle_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : oracle) j.push_back(r.to_json());
    return j;
  }

  void save() const {
    std::filesystem::create_directories(dir);
    const nlohmann::json meta{{"experiment_id", experiment_id},
                              {"config_hash", config_hash},
                              {"code_version", kCodeVersion},
                              {"config", config_json}};
    write_text(dir / "meta.json", meta.dump(2) + "\n");
    csv::write_file((dir / "sweep.csv").string(), sweep_table());
    if (!oracle.empty()) write_text(dir / "oracle.json", oracle_json().dump(2) + "\n");
  }

 private:
  void load_rows() {
    if (std::filesystem::exists(dir / "sweep.csv")) {
      const csv::Table t = csv::read_file((dir / "sweep.csv").string());
      if (t.header != kSweepHeader) throw std::runtime_error("store: unexpected sweep.csv header");
      for (const auto& f : t.rows) {
        SweepRow r{f[0],
                   std::stoi(f[1]),
                   csv::parse_num(f[2]),
                   std::stoi(f[3]),
                   std::stoi(f[4]),
                   std::stoi(f[5]),
                   csv::parse_num(f[6]),
                   csv::parse_num(f[7]),
                   csv::parse_num(f[8]),
                   f[9] == "1"};
        insert(r);
      }
    }
    if (std::filesystem::exists(dir / "oracle.json"))
      for (const auto& j : nlohmann::json::parse(read_text(dir / "oracle.json")))
        oracle.push_back(oracle_report_from_json(j));
  }
};

// ------------------------------------------------------------ sweep

struct CellKey {
  int recipe = 0;  // index into the config's recipes
  int width = 0;
  double eta = 0.0;
  int seed = 0;
};

inline SweepRow run_cell(const ExperimentConfig& cfg, const SweepContext& ctx, const CellKey& c) {
  const CellSeeds plan = CellSeeds::from_master(cfg.master_seed, c.width);
  TrainConfig tc;
  tc.eta = c.eta;
  tc.B = cfg.B;
  tc.T = cfg.steps_for(c.width);
  tc.stream = plan.samples(c.eta, c.seed);
  const GridCell g = train_cell(cfg.model_spec(c.width), ctx.recipes[static_cast<std::size_t>(c.recipe)], ctx.val_set,
                                tc, plan.bank_seed(c.seed));
  return {ctx.recipes[static_cast<std::size_t>(c.recipe)].id(),
          c.width,
          c.eta,
          tc.B,
          tc.T,
          c.seed,
          g.final_train_loss,
          g.val_loss,
          g.val_std_err,
          g.diverged};
}

// Runs fn(i) for i in [0, n) on a pool of workers pulling indices from a
// shared counter. The first exception is rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const int nt = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (nt <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < nt; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(mu);
          if (!err) err = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// Trains the cells not already in the store. Returns the number of new rows.
inline int run_cells(const ExperimentConfig& cfg, const SweepContext& ctx, ResultsStore& store,
                     const std::vector<CellKey>& cells) {
  std::vector<CellKey> todo;
  for (const auto& c : cells)
    if (!store.has({cfg.recipes[static_cast<std::size_t>(c.recipe)].id, c.width, c.eta, c.seed})) todo.push_back(c);
  std::vector<SweepRow> out(todo.size());
  parallel_for(todo.size(), cfg.threads, [&](std::size_t i) { out[i] = run_cell(cfg, ctx, todo[i]); });
  for (const auto& r : out) store.insert(r);
  return static_cast<int>(out.size());
}

inline std::vector<CellKey> grid_cells(const ExperimentConfig& cfg, const std::vector<int>& widths,
                                       const std::vector<double>& etas) {
  std::vector<CellKey> cells;
  for (int r = 0; r < static_cast<int>(cfg.recipes.size()); ++r)
    for (int m : widths)
      for (double eta : etas)
        for (int k = 0; k < cfg.seeds; ++k) cells.push_back({r, m, eta, k});
  return cells;
}

// ------------------------------------------------------------ oracle pass

inline std::vector<OracleReport> compute_oracle(const ExperimentConfig& cfg, const SweepContext& ctx) {
  std::vector<OracleReport> out(ctx.recipes.size());
  KernelSpec ks;
  ks.act = cfg.feature.act;
  ks.wdist = cfg.feature.wdist;
  ks.n_u = cfg.kernel_n_u;
  ks.seed = ctx.root.child("kernel").key();
  const KernelBank kbank(ks, cfg.d());
  const Stream oroot = ctx.root.child("oracle");
  parallel_for(ctx.recipes.size(), cfg.threads, [&](std::size_t i) {
    const DataRecipe& r = ctx.recipes[i];
    try {
      OracleReport rep;
      rep.recipe_id = r.id();
      const LossEstimate best = best_achievable_loss(r, ctx.val_set);
      rep.best_loss = best.estimate;
      rep.std_err = best.std_err;
      rep.lambda0 = kernel_min_eig(kbank, r, cfg.kernel_grid_n, oroot.child("grid").child(r.id())).lambda0;
      for (int m : cfg.oracle_width_list()) {
        const CellSeeds plan = CellSeeds::from_master(cfg.master_seed, m);
        const FeatureBank bank = init_features(cfg.d(), m, cfg.feature.wdist, plan.bank_seed(0));
        const RidgelessResult rr =
            ridgeless_optimum(bank, Activation{cfg.feature.act}, r,
                              static_cast<Eigen::Index>(cfg.oracle_n_mc_per_width) * m,
                              oroot.child("ridgeless").child(r.id()).child(static_cast<std::uint64_t>(m)));
        RandomFeatureModel model(bank, cfg.feature.act);
        model.theta = rr.mu;
        rep.widths.push_back({m, rr.approx_error, eval_loss(model, ctx.val_set).estimate});
      }
      for (const auto& o : ctx.recipes)
        if (o.id() != r.id()) rep.delta.push_back({o.id(), delta_ab(r, o, ctx.val_set)});
      out[i] = std::move(rep);
    } catch (const std::exception& e) {
      throw std::runtime_error("oracle failed for recipe " + r.id() + ": " + e.what());
    }
  });
  return out;
}

struct SweepSummary {
  int new_rows = 0;
  bool oracle_computed = false;
};

// Trains every grid cell at every configured width and computes the oracle
// once. Cells already present in the store are skipped.
inline SweepSummary run_sweep(const ExperimentConfig& cfg, const SweepContext& ctx, ResultsStore& store) {
  SweepSummary s;
  s.new_rows = run_cells(cfg, ctx, store, grid_cells(cfg, cfg.all_widths(), cfg.etas));
  if (store.oracle.empty()) {
    store.oracle = compute_oracle(cfg, ctx);
    s.oracle_computed = true;
  }
  store.save();
  return s;
}

}  // namespace tinylr
