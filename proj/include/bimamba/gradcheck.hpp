#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bimamba {

struct GradCheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return error < tolerance; }
};

// Finite-difference checks of every differentiable primitive (tolerance
// 1e-5), the channel attention composite (1e-5) and a tiny stage model
// (1e-4), all in float64.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed);

}  // namespace bimamba
