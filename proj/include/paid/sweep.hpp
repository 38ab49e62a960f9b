#pragma once

// Grid runner over {r, n_source, batch_size, mode, selector, seed}.
//
// Grid document: {"r": [...], "n_source": [...], "batch_size": [...],
// "mode": [...], "selector": [...], "seed": [...]}. Missing axes take the
// single value from the base config. Cells are ordered with seed varying
// slowest and r fastest.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "paid/experiment.hpp"

namespace paid {

struct SweepGrid {
  std::vector<std::size_t> r;
  std::vector<std::size_t> n_source;
  std::vector<std::size_t> batch_size;
  std::vector<UpdateMode> mode;
  std::vector<LayerSelector> selector;
  std::vector<std::uint64_t> seed;
};

// Throws ConfigError on unknown keys, empty axes or bad values.
SweepGrid parse_sweep_grid(const Json& doc);
SweepGrid load_sweep_grid(const std::filesystem::path& path);

struct SweepCell {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  UpdateMode mode = UpdateMode::Paid;
  LayerSelector selector;
  std::size_t r = 0;
  std::size_t n_source = 0;
  std::size_t batch_size = 0;

  std::string name() const;  // "cell_0007"
  ExperimentConfig apply(const ExperimentConfig& base) const;
};

std::vector<SweepCell> expand_grid(const SweepGrid& grid, const ExperimentConfig& base);

struct SweepResult {
  SweepCell cell;
  AdaptReport report;
  double clean_accuracy = 0.0;
};

// Pretrains once per seed, then runs every cell on a pool of `workers`
// threads (0 = hardware concurrency). Results come back in cell order.
// The first failure is rethrown after all workers stop.
std::vector<SweepResult> run_sweep(const ExperimentConfig& base, const SweepGrid& grid,
                                   std::size_t workers = 0);

// Columns: cell,seed,mode,selector,r,n_source,batch_size,clean_accuracy,
// mean_error,final_delta_s
std::string sweep_csv(const std::vector<SweepResult>& results);

}  // namespace paid
