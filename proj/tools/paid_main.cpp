// paid: command-line driver.
//
//   paid pretrain  --config cfg.json --out model.ckpt
//   paid adapt     --ckpt model.ckpt --config cfg.json --report runs/paid
//   paid diagnose  --ckpt-a a.ckpt --ckpt-b b.ckpt --out geometry.json
//   paid gradcheck --seed 0 --sizes 4,8
//   paid sweep     --config cfg.json --grid grid.json --out-dir runs/sweep
//
// Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O or
// integrity error.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "paid/checkpoint.hpp"
#include "paid/diagnose.hpp"
#include "paid/errors.hpp"
#include "paid/experiment.hpp"
#include "paid/gradcheck.hpp"
#include "paid/report.hpp"
#include "paid/sweep.hpp"

namespace fs = std::filesystem;
using namespace paid;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

ExperimentConfig load_config(const std::string& path) {
  ExperimentConfig cfg = path.empty() ? default_experiment_config() : load_experiment_config(path);
  apply_seed_override(cfg, std::getenv("PAID_SEED"));
  return cfg;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// "runs/x.csv", "runs/x.json" and "runs/x" all name the prefix "runs/x".
fs::path report_prefix(const std::string& arg) {
  fs::path p(arg);
  if (p.extension() == ".csv" || p.extension() == ".json") p.replace_extension();
  return p;
}

void write_report(const fs::path& prefix, const AdaptReport& report, const Json& config_echo) {
  write_text_file(fs::path(prefix.string() + ".csv"), report_csv(report));
  write_text_file(fs::path(prefix.string() + ".json"), report_json(report, config_echo).dump(2) + "\n");
}

int cmd_pretrain(const std::string& config_path, const std::string& out, std::string meta) {
  const ExperimentConfig cfg = load_config(config_path);
  const std::uint64_t seed = cfg.seeds.front();
  const auto t0 = std::chrono::steady_clock::now();
  const SourceSplit split = make_source(cfg, seed);
  PretrainedModel pm = pretrain_model(cfg, split, seed);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_checkpoint(out, pm.net.export_tensors());
  if (meta.empty()) meta = out + ".json";
  Json doc = {
      {"seed", seed},
      {"clean_accuracy", pm.result.clean_accuracy},
      {"steps", pm.result.steps},
      {"final_loss", pm.result.loss_trace.empty() ? 0.0 : pm.result.loss_trace.back()},
      {"parameter_count", pm.net.parameter_count()},
      {"config", to_json(cfg)},
      {"metadata", {{"timestamp", utc_timestamp()}, {"wall_time_s", wall}}},
  };
  write_text_file(meta, doc.dump(2) + "\n");
  fmt::print("pretrained seed {}: clean accuracy {:.4f} after {} steps -> {}\n", seed,
             pm.result.clean_accuracy, pm.result.steps, out);
  return 0;
}

int cmd_adapt(const std::string& ckpt, const std::string& config_path, const std::string& mode,
              const std::string& selector, std::optional<std::size_t> rounds, const std::string& report,
              const std::string& out_ckpt) {
  ExperimentConfig cfg = load_config(config_path);
  if (!mode.empty()) cfg.adapt.mode = parse_update_mode(mode);
  if (!selector.empty()) cfg.adapt.selector = LayerSelector::parse(selector);
  if (rounds) cfg.rounds = *rounds;
  cfg.validate();
  const std::uint64_t seed = cfg.seeds.front();
  Network net = build_model(cfg, seed);
  net.import_tensors(load_checkpoint(ckpt));
  const SourceSplit split = make_source(cfg, seed);
  AdaptRun run = run_adaptation(net, split, cfg, seed);
  const fs::path prefix = report_prefix(report);
  write_report(prefix, run.report, to_json(cfg));
  if (!out_ckpt.empty()) save_checkpoint(out_ckpt, run.adapted.export_tensors());
  for (const SegmentReport& s : run.report.segments) {
    fmt::print("round {:2d}  {:<15s} sev {}  error {:.4f}  loss {:.4f}  dS {:.2e}\n", s.round + 1,
               s.domain, s.severity, s.error_rate.value_or(0.0), s.mean_loss, s.geometry.delta_s);
  }
  fmt::print("mode {}  selector {}  mean error {:.4f}  ({:.1f}s) -> {}.csv/.json\n",
             to_string(cfg.adapt.mode), cfg.adapt.selector.to_string(),
             run.report.mean_error.value_or(0.0), run.report.wall_time_s, prefix.string());
  return 0;
}

int cmd_diagnose(const std::string& a, const std::string& b, const std::string& out) {
  const DiagnoseResult result = diagnose_tensors(load_checkpoint(a), load_checkpoint(b));
  if (!out.empty()) write_text_file(out, to_json(result).dump(2) + "\n");
  for (const TensorGeometry& g : result.layers)
    fmt::print("{:<20s} dM {:.3e}  dA {:.3e}  dS {:.3e}\n", g.name, g.delta_m, g.delta_a, g.delta_s);
  fmt::print("mean                 dM {:.3e}  dA {:.3e}  dS {:.3e}\n", result.mean_delta_m,
             result.mean_delta_a, result.mean_delta_s);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::vector<std::size_t>& sizes, bool fault) {
  GradcheckOptions opt;
  opt.seed = seed;
  if (!sizes.empty()) opt.sizes = sizes;
  opt.inject_fault = fault;
  const auto entries = run_gradcheck(opt);
  double worst = 0.0;
  for (const GradcheckEntry& e : entries) {
    fmt::print("{:<48s} n={:<5d} max_rel_err={:.3e}  {}\n", e.name, e.n_checked, e.max_rel_error,
               e.passed ? "ok" : "FAIL");
    worst = std::max(worst, e.max_rel_error);
  }
  const bool ok = all_passed(entries);
  fmt::print("{} checks, worst relative error {:.3e} (tolerance {:.0e}): {}\n", entries.size(), worst,
             opt.tolerance, ok ? "PASS" : "FAIL");
  return ok ? 0 : kExitNumeric;
}

int cmd_sweep(const std::string& config_path, const std::string& grid_path, const std::string& out_dir,
              std::size_t workers) {
  const ExperimentConfig cfg = load_config(config_path);
  const SweepGrid grid = load_sweep_grid(grid_path);
  const auto results = run_sweep(cfg, grid, workers);
  const fs::path dir(out_dir);
  for (const SweepResult& r : results)
    write_report(dir / r.cell.name(), r.report, to_json(r.cell.apply(cfg)));
  write_text_file(dir / "sweep.csv", sweep_csv(results));
  fmt::print("{} cells -> {}\n", results.size(), (dir / "sweep.csv").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale continual test-time adaptation laboratory"};
  app.require_subcommand(1);

  std::string config, out, meta;
  auto* pretrain = app.add_subcommand("pretrain", "Train the source model and write a checkpoint");
  pretrain->add_option("--config", config, "Experiment config (JSON)");
  pretrain->add_option("--out", out, "Checkpoint path")->required();
  pretrain->add_option("--meta", meta, "Metadata JSON path (default: <out>.json)");

  std::string ckpt, mode, selector, report, out_ckpt;
  std::optional<std::size_t> rounds;
  auto* adapt = app.add_subcommand("adapt", "Stream the corruption suite through a checkpoint");
  adapt->add_option("--ckpt", ckpt, "Pre-trained checkpoint")->required();
  adapt->add_option("--config", config, "Experiment config (JSON)");
  adapt->add_option("--mode", mode, "frozen|magnitude|direction|direction-orth|magdir|paid");
  adapt->add_option("--selector", selector, "Injected layers, e.g. qkvom or q,v,m1");
  adapt->add_option("--rounds", rounds, "Passes over the domain sequence");
  adapt->add_option("--report", report, "Report prefix; writes <prefix>.csv and <prefix>.json")->required();
  adapt->add_option("--out-ckpt", out_ckpt, "Also save the adapted network");

  std::string ckpt_a, ckpt_b;
  auto* diagnose = app.add_subcommand("diagnose", "Weight-geometry deltas between two checkpoints");
  diagnose->add_option("--ckpt-a", ckpt_a)->required();
  diagnose->add_option("--ckpt-b", ckpt_b)->required();
  diagnose->add_option("--out", out, "JSON output path");

  std::uint64_t seed = 0;
  std::vector<std::size_t> sizes;
  bool fault = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference audit of every reverse pass");
  gradcheck->add_option("--seed", seed);
  gradcheck->add_option("--sizes", sizes, "Layer dimensions to check")->delimiter(',');
  gradcheck->add_flag("--inject-fault", fault, "Negative control: corrupt analytic gradients");

  std::string grid, out_dir;
  std::size_t workers = 0;
  auto* sweep = app.add_subcommand("sweep", "Run an ablation grid");
  sweep->add_option("--config", config, "Experiment config (JSON)");
  sweep->add_option("--grid", grid, "Grid JSON")->required();
  sweep->add_option("--out-dir", out_dir, "Output directory")->required();
  sweep->add_option("--workers", workers, "Parallel cells (0 = all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*pretrain) return cmd_pretrain(config, out, meta);
    if (*adapt) return cmd_adapt(ckpt, config, mode, selector, rounds, report, out_ckpt);
    if (*diagnose) return cmd_diagnose(ckpt_a, ckpt_b, out);
    if (*gradcheck) return cmd_gradcheck(seed, sizes, fault);
    if (*sweep) return cmd_sweep(config, grid, out_dir, workers);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.category()) {
      case ErrorCategory::Config: return kExitConfig;
      case ErrorCategory::Numeric: return kExitNumeric;
      case ErrorCategory::Io: return kExitIo;
    }
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
