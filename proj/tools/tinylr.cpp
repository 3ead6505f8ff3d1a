// Command-line front end: recipe validation, sweeps, presets, reports and
// learning-rate bounds.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "tinylr/presets.hpp"

namespace fs = std::filesystem;
using namespace tinylr;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out = "out";
};

void apply(const Globals& g, ExperimentConfig& cfg) {
  if (g.seed) cfg.master_seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  cfg.out_dir = g.out;
}

int cmd_validate(const std::string& path, const Globals& g) {
  ExperimentConfig cfg = load_config(path);
  apply(g, cfg);
  const DataRecipe val = make_recipe(cfg.val);
  nlohmann::json out = nlohmann::json::array();
  bool all = true;
  for (const auto& d : cfg.recipes) {
    const DataRecipe r = make_recipe(d);
    const WellBehavedReport rep = validate_well_behaved(r, val, cfg.kernel_grid_n, cfg.master_seed);
    nlohmann::json j = rep.to_json();
    j["recipe_id"] = r.id();
    out.push_back(j);
    all = all && rep.passed;
  }
  std::cout << out.dump(2) << "\n";
  if (!all) std::cerr << "some recipes are not well behaved; see the flags above\n";
  return all ? 0 : 3;
}

int cmd_sweep(const std::string& path, const Globals& g) {
  ExperimentConfig cfg = load_config(path);
  apply(g, cfg);
  const SweepContext ctx = build_context(cfg);
  ResultsStore store = ResultsStore::open(store_dir(g.out, cfg), cfg);
  const SweepSummary s = run_sweep(cfg, ctx, store);
  std::cout << "store " << store.dir.string() << ": " << s.new_rows << " new rows, " << store.rows.size()
            << " total" << (s.oracle_computed ? ", oracle computed" : "") << "\n";
  return 0;
}

int cmd_preset(const std::string& name, bool print_config, const Globals& g) {
  ExperimentConfig cfg = pinned_config(name);
  apply(g, cfg);
  if (print_config) {
    std::cout << cfg.to_json().dump(2) << "\n";
    return 0;
  }
  try {
    const PresetOutput po = run_preset(name, cfg, g.out);
    std::cout << po.summary.dump(2) << "\n";
    for (const auto& f : po.files) std::cout << (po.dir / f).string() << "\n";
  } catch (const PresetFailure& e) {
    std::cerr << "preset " << name << " failed: " << e.what() << "\n";
    return 4;
  }
  return 0;
}

int cmd_report(const std::string& store, const std::string& kind, const Globals& g) {
  for (const auto& f : write_report(store, kind, g.out)) std::cout << (fs::path(g.out) / f).string() << "\n";
  return 0;
}

int cmd_bound(const std::string& path, const Globals& g) {
  ExperimentConfig cfg = load_config(path);
  apply(g, cfg);
  const SweepContext ctx = build_context(cfg);
  // The standard eta needs the proxy grid at the smallest proxy width only.
  ResultsStore store = ResultsStore::open(store_dir(g.out, cfg), cfg);
  run_cells(cfg, ctx, store, grid_cells(cfg, {cfg.proxy_widths.front()}, cfg.etas));
  store.save();
  const SweepView v(cfg, store);
  const BoundRun b = run_bound(cfg, ctx, v);
  const nlohmann::json j = bound_json(b);
  write_text(fs::path(g.out) / "bound.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning-rate sensitivity of data-recipe rankings in random feature models"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  int threads = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Master seed override");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory");

  auto* recipes = app.add_subcommand("recipes", "Recipe utilities");
  recipes->require_subcommand(1);
  std::string validate_path;
  auto* validate = recipes->add_subcommand("validate", "Check that recipes are well behaved");
  validate->add_option("config", validate_path)->required();

  std::string sweep_path;
  auto* sweep = app.add_subcommand("sweep", "Train every (recipe, width, eta, seed) cell");
  sweep->add_option("config", sweep_path)->required();

  std::string preset_name;
  bool print_config = false;
  auto* preset = app.add_subcommand("preset", "Run a pinned experiment");
  preset->add_option("name", preset_name)->required()->check(CLI::IsMember(preset_names()));
  preset->add_flag("--print-config", print_config, "Print the pinned config and exit");
  preset->add_option("--out", g.out, "Output directory");

  std::string report_store, report_kind;
  auto* report = app.add_subcommand("report", "Aggregate a results store");
  report->add_option("store", report_store)->required();
  report->add_option("--kind", report_kind)->required()->check(CLI::IsMember({"ranking", "regret", "bounds"}));

  std::string bound_path;
  auto* bound = app.add_subcommand("bound", "Estimate the tiny learning-rate window");
  bound->add_option("config", bound_path)->required();

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed;
  if (*threads_opt) g.threads = threads;

  try {
    if (*validate) return cmd_validate(validate_path, g);
    if (*sweep) return cmd_sweep(sweep_path, g);
    if (*preset) return cmd_preset(preset_name, print_config, g);
    if (*report) return cmd_report(report_store, report_kind, g);
    if (*bound) return cmd_bound(bound_path, g);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
