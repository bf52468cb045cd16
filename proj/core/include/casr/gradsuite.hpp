// Finite-difference gradient checks over every differentiable operation,
// block, loss and the full conversational training loss.
#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace casr {

struct GradSuiteEntry {
  std::string name;
  std::size_t instances = 0;
  double max_error = 0.0;
  bool passed = false;
};

struct GradSuiteReport {
  std::vector<GradSuiteEntry> entries;
  double tolerance = 1e-4;

  bool passed() const;
  std::string to_text() const;
};

std::vector<std::string> gradient_suite_cases();

// Runs `instances` random instances of each case (all cases when `only` is
// empty). Progress lines go to `progress` when given.
GradSuiteReport run_gradient_suite(std::uint64_t seed, std::size_t instances = 50,
                                   double tolerance = 1e-4,
                                   const std::vector<std::string>& only = {},
                                   std::ostream* progress = nullptr);

}  // namespace casr
