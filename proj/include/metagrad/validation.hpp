#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace metagrad {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Statistical and algebraic invariant checks over the estimator stack and
// the synthetic problems. Deterministic for a fixed seed.
std::vector<CheckResult> run_validation_suite(std::uint64_t seed = 20240801);

}  // namespace metagrad
