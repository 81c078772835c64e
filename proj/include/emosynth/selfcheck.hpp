#ifndef EMOSYNTH_SELFCHECK_HPP
#define EMOSYNTH_SELFCHECK_HPP

// Invariant suite shared by `verify` and the acceptance runner.

#include "emosynth/autodiff.hpp"
#include "emosynth/schedule.hpp"
#include "emosynth/synthworld.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace emosynth {

struct CheckResult {
  std::string name;
  bool passed = false;
  /// Worst observed error.
  double value = 0.0;
  double tolerance = 0.0;
  Index cases = 0;
};

/// Gradcheck of every differentiable op plus composed MLPs, `instances`
/// random instances each, central differences with step `epsilon`.
std::vector<CheckResult> gradcheck_suite(std::uint64_t seed, Index instances = 20, double epsilon = 1e-5,
                                         double tolerance = 1e-4);

/// analytic_score against central differences of analytic_log_density
/// (h = 1e-4) on a times x points grid; error is |a - n| / |n| per point.
CheckResult score_oracle_check(const World& world, const NoiseSchedule& schedule, std::uint64_t seed,
                               Index times = 5, Index points = 20, double tolerance = 1e-5);

/// grad log p(Y|e) - grad log p(Y) against grad log p(e|Y) (max abs error).
CheckResult bayes_identity_check(const World& world, const NoiseSchedule& schedule, std::uint64_t seed,
                                 Index cases = 50, double tolerance = 1e-8);

/// Everything `verify` runs, on the given world.
std::vector<CheckResult> run_oracle_checks(const World& world, const NoiseSchedule& schedule, std::uint64_t seed);

std::string to_json_line(const CheckResult& r);

}  // namespace emosynth

#endif  // EMOSYNTH_SELFCHECK_HPP
