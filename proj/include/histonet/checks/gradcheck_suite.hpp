#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace histonet::checks {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  // Gradient values at the worst coordinate.
  double analytic = 0.0;
  double numeric = 0.0;
  bool passed = false;
};

/// Central-difference checks of every op, every loss term (count, KL,
/// weighted L1, total, total with side heads) and the end-to-end tiny model, each parameter
/// tensor separately. Inputs are drawn away from activation kinks.
std::vector<GradcheckEntry> run_gradcheck_suite(double tolerance = 1e-4, std::uint64_t seed = 0);

}  // namespace histonet::checks
