#pragma once

#include <string>

#include "coce/types.hpp"

namespace coce {

enum class PhiKind { Identity, Cvar, Tilt, RawExp };

/// Convex, non-decreasing per-loss transformation phi.
///
/// The identity, CVaR and tilt kinds are normalized (phi(0) = 0 and the
/// derivative-at-zero convention returns 1). The raw-exp kind is the plain
/// exponential phi(u) = exp(gamma*u); it is not normalized (phi(0) = 1) and
/// is used as a transform of the base loss directly, bypassing the theta
/// shift.
///
/// Values may overflow to +inf for extreme arguments of the exponential
/// kinds; aggregation layers are responsible for rejecting non-finite
/// results. Non-finite *inputs* are rejected here.
class PhiTransform {
 public:
  static PhiTransform identity();
  static PhiTransform cvar(double beta);     // beta in (0, 1)
  static PhiTransform tilt(double gamma);    // gamma > 0
  static PhiTransform raw_exp(double gamma); // gamma > 0

  double value(double u) const;

  /// Exact derivative, with the kink conventions:
  /// cvar at u = 0 returns 1 (the normalization 1 in d-phi(0)).
  double derivative(double u) const;

  PhiKind kind() const { return kind_; }
  double beta() const { return beta_; }
  double gamma() const { return gamma_; }
  std::string name() const;

 private:
  PhiTransform(PhiKind kind, double beta, double gamma)
      : kind_(kind), beta_(beta), gamma_(gamma) {}

  PhiKind kind_;
  double beta_ = 0.0;
  double gamma_ = 0.0;
};

enum class RhoKind { Quadratic, PseudoHuber, Abs };

/// Dispersion gauge rho with rho(0) = 0 and rho(|u|) non-decreasing in |u|.
class RhoFunction {
 public:
  static RhoFunction quadratic();    // u^2 / 2
  static RhoFunction pseudo_huber(); // sqrt(u^2 + 1) - 1
  static RhoFunction abs();          // |u|

  double value(double u) const;

  /// Derivative; sign(u) convention at 0 for the abs kind (returns 0).
  double derivative(double u) const;

  RhoKind kind() const { return kind_; }
  std::string name() const;

 private:
  explicit RhoFunction(RhoKind kind) : kind_(kind) {}
  RhoKind kind_;
};

enum class ThetaMode { Internal, Joint, Fixed };

/// How the shift theta of the OCE transform theta + phi(loss - theta) is
/// chosen: solved in closed form per batch (Internal, cvar/tilt only),
/// optimized alongside the model (Joint), or held fixed (Fixed).
struct ThetaStrategy {
  ThetaMode mode = ThetaMode::Fixed;
  double theta = 0.0;  // initial value for Joint, the value for Fixed

  static ThetaStrategy internal() { return {ThetaMode::Internal, 0.0}; }
  static ThetaStrategy joint(double theta0) { return {ThetaMode::Joint, theta0}; }
  static ThetaStrategy fixed(double theta) { return {ThetaMode::Fixed, theta}; }
};

/// Closed-form minimizer of theta + mean(phi(losses - theta)).
///
/// cvar: the lower empirical beta-quantile, index ceil(beta*n) - 1 into the
///       sorted losses (any beta-quantile minimizes; this convention makes
///       outputs reproducible).
/// tilt: log-mean-exp of gamma*losses divided by gamma, computed with
///       max-subtraction.
///
/// Throws for empty input and for kinds without a closed form
/// (identity, raw-exp).
double solve_theta_internal(const PhiTransform& t, const Vec& losses);

}  // namespace coce
