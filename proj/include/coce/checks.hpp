#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace coce {

/// Outcome of one self-check: the worst observed deviation against an
/// independent oracle, and whether it stayed within tolerance.
struct CheckResult {
  std::string name;
  bool pass = false;
  double worst = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

/// Golden-section search for the minimizer of a unimodal scalar function on
/// [lo, hi]; returns the midpoint of the final bracket of width <= tol.
double golden_section_minimize(const std::function<double(double)>& f, double lo,
                               double hi, double tol);

/// Analytic objective gradients (all aggregators, all phi/rho kinds,
/// fixed/joint theta, both architectures) against central finite
/// differences, kink-avoiding.
CheckResult check_gradients(std::uint64_t seed, int cases, double tol);

/// Two scaled ascent-descent steps against the closed-form two-step
/// relation, for below-to-above threshold crossings on 1-D and 10-D
/// quadratic losses.
CheckResult check_crossing_identity(std::uint64_t seed, int scenarios, double tol);

/// The general two-sign relation for all four sign patterns.
CheckResult check_crossing_general(std::uint64_t seed, int scenarios_per_pattern,
                                   double tol);

/// Closed-form tilt theta* against golden-section minimization of
/// theta + mean phi(losses - theta).
CheckResult check_theta_tilt(std::uint64_t seed, int vectors, double tol);

/// CVaR quantile theta* against a 10^4-point grid scan of the same
/// objective (one-sided: the closed form must do at least as well).
CheckResult check_theta_cvar(std::uint64_t seed, int vectors, double tol);

/// Probability-simplex preservation, shift invariance of the probability
/// update, the single-state direction identity, and the two-state one-step
/// probability formula.
CheckResult check_sharpdro_structure(std::uint64_t seed);

/// balanced_error against an independent enumeration oracle; invariance
/// under per-state duplication; non-negativity of the max-balance gap.
CheckResult check_balanced_error_oracle(std::uint64_t seed, int datasets);

/// Zero-radius and zero-gradient guards, and the degenerate rho' clamp.
CheckResult check_degenerate_guards();

/// All of the above at default sizes.
std::vector<CheckResult> run_all_checks(std::uint64_t seed);

}  // namespace coce
