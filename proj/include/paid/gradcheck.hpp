#pragma once

// Finite-difference audit of every hand-written reverse pass.

#include <cstdint>
#include <string>
#include <vector>

namespace paid {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  // Dimensions used for the chain and layer checks.
  std::vector<std::size_t> sizes{4, 8};
  double tolerance = 1e-4;
  double step = 1e-5;
  // Negative control: perturbs every analytic gradient before comparison.
  bool inject_fault = false;
};

struct GradcheckEntry {
  std::string name;
  std::size_t n_checked = 0;  // scalar partials compared
  double max_rel_error = 0.0;
  bool passed = false;
};

// Runs the full suite: householder chain (params and input), paidlayer in
// every update mode, the transformer and MLP end to end in both phases,
// and the alignment loss.
std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& options);

bool all_passed(const std::vector<GradcheckEntry>& entries);

}  // namespace paid
