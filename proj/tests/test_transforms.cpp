#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "coce/checks.hpp"
#include "coce/rng.hpp"
#include "coce/transforms.hpp"

using namespace coce;

namespace {

// Inner objective of the shift problem: theta + mean phi(losses - theta).
double shift_objective(const PhiTransform& phi, const Vec& losses, double theta) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < losses.size(); ++i) {
    sum += phi.value(losses[i] - theta);
  }
  return theta + sum / static_cast<double>(losses.size());
}

double central_diff(const PhiTransform& phi, double u, double h = 1e-6) {
  return (phi.value(u + h) - phi.value(u - h)) / (2.0 * h);
}

}  // namespace

TEST_CASE("phi values match their closed forms") {
  CHECK(PhiTransform::tilt(0.1).value(0.0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(PhiTransform::cvar(0.5).value(-1.0) == 0.0);
  CHECK(PhiTransform::cvar(0.5).value(1.0) == doctest::Approx(2.0));
  CHECK(PhiTransform::tilt(0.1).value(10.0) ==
        doctest::Approx((std::exp(1.0) - 1.0) / 0.1).epsilon(1e-12));
  CHECK(PhiTransform::identity().value(3.5) == 3.5);
  CHECK(PhiTransform::raw_exp(0.2).value(0.0) == 1.0);
}

TEST_CASE("phi derivatives use the stated conventions") {
  CHECK(PhiTransform::identity().derivative(7.0) == 1.0);
  CHECK(PhiTransform::cvar(0.5).derivative(0.0) == 1.0);
  CHECK(PhiTransform::cvar(0.5).derivative(-0.1) == 0.0);
  CHECK(PhiTransform::cvar(0.5).derivative(0.1) == doctest::Approx(2.0));
  CHECK(PhiTransform::tilt(0.1).derivative(3.0) ==
        doctest::Approx(std::exp(0.3)).epsilon(1e-12));
  CHECK(PhiTransform::raw_exp(0.5).derivative(1.0) ==
        doctest::Approx(0.5 * std::exp(0.5)).epsilon(1e-12));
}

TEST_CASE("phi rejects non-finite arguments and bad parameters") {
  CHECK_THROWS_AS(PhiTransform::tilt(0.1).value(std::numeric_limits<double>::quiet_NaN()),
                  std::invalid_argument);
  CHECK_THROWS_AS(PhiTransform::identity().derivative(
                      std::numeric_limits<double>::infinity()),
                  std::invalid_argument);
  CHECK_THROWS_AS(PhiTransform::cvar(0.0), std::invalid_argument);
  CHECK_THROWS_AS(PhiTransform::cvar(1.0), std::invalid_argument);
  CHECK_THROWS_AS(PhiTransform::tilt(0.0), std::invalid_argument);
  CHECK_THROWS_AS(PhiTransform::raw_exp(-1.0), std::invalid_argument);
}

TEST_CASE("normalized kinds are monotone, normalized and convex on samples") {
  Rng rng(11);
  const PhiTransform phis[] = {PhiTransform::identity(), PhiTransform::cvar(0.7),
                               PhiTransform::tilt(0.4)};
  for (const PhiTransform& phi : phis) {
    CHECK(phi.value(0.0) == 0.0);
    for (int i = 0; i < 1000; ++i) {
      const double u = -20.0 + 40.0 * rng.uniform();
      const double v = -20.0 + 40.0 * rng.uniform();
      const double lo = std::min(u, v), hi = std::max(u, v);
      CHECK(phi.value(lo) <= phi.value(hi));
      // Convexity on the midpoint.
      CHECK(phi.value(0.5 * (u + v)) <= 0.5 * (phi.value(u) + phi.value(v)) + 1e-12);
    }
  }
}

TEST_CASE("phi derivative agrees with central finite differences") {
  Rng rng(12);
  const PhiTransform phis[] = {PhiTransform::identity(), PhiTransform::cvar(0.6),
                               PhiTransform::tilt(0.3), PhiTransform::raw_exp(0.3)};
  for (const PhiTransform& phi : phis) {
    for (int i = 0; i < 200; ++i) {
      double u = -8.0 + 16.0 * rng.uniform();
      // The cvar kink at 0 has no two-sided derivative.
      if (phi.kind() == PhiKind::Cvar && std::abs(u) < 1e-3) continue;
      const double fd = central_diff(phi, u);
      const double an = phi.derivative(u);
      CHECK(an == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("rho values, derivatives and sign agreement") {
  CHECK(RhoFunction::pseudo_huber().value(0.0) == 0.0);
  CHECK(RhoFunction::pseudo_huber().value(std::sqrt(3.0)) == doctest::Approx(1.0));
  CHECK(RhoFunction::abs().value(-2.0) == 2.0);
  CHECK(RhoFunction::abs().derivative(-2.0) == -1.0);
  CHECK(RhoFunction::abs().derivative(0.0) == 0.0);
  CHECK(RhoFunction::quadratic().value(3.0) == doctest::Approx(4.5));
  CHECK(RhoFunction::quadratic().derivative(3.0) == 3.0);
  CHECK(RhoFunction::pseudo_huber().derivative(1.0) ==
        doctest::Approx(1.0 / std::sqrt(2.0)));

  Rng rng(13);
  const RhoFunction rhos[] = {RhoFunction::quadratic(), RhoFunction::pseudo_huber(),
                              RhoFunction::abs()};
  for (const RhoFunction& rho : rhos) {
    CHECK(rho.value(0.0) == 0.0);
    for (int i = 0; i < 500; ++i) {
      const double u = -50.0 + 100.0 * rng.uniform();
      CHECK(rho.derivative(u) * u >= 0.0);
      CHECK(rho.value(u) >= 0.0);
    }
  }
}

TEST_CASE("internal theta: tilt closed form") {
  const PhiTransform tilt = PhiTransform::tilt(0.7);
  SUBCASE("constant losses return the constant") {
    const Vec losses = Vec::Constant(5, 3.25);
    CHECK(solve_theta_internal(tilt, losses) == doctest::Approx(3.25).epsilon(1e-12));
  }
  SUBCASE("two-point batch matches the hand formula and golden section") {
    const PhiTransform t01 = PhiTransform::tilt(0.1);
    Vec losses(2);
    losses << 0.0, 1.0;
    const double expected = std::log((1.0 + std::exp(0.1)) / 2.0) / 0.1;
    const double got = solve_theta_internal(t01, losses);
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
    const double golden = golden_section_minimize(
        [&](double th) { return shift_objective(t01, losses, th); }, -1.0, 2.0, 1e-10);
    CHECK(std::abs(got - golden) < 1e-6);
  }
  SUBCASE("huge losses do not overflow the log-mean-exp") {
    Vec losses(3);
    losses << 1e5, 1e5 + 1.0, 1e5 + 2.0;
    const double got = solve_theta_internal(PhiTransform::tilt(1.0), losses);
    CHECK(std::isfinite(got));
    CHECK(got > 1e5);
    CHECK(got < 1e5 + 2.0 + 1e-9);
  }
}

TEST_CASE("internal theta: cvar lower quantile") {
  const PhiTransform cvar = PhiTransform::cvar(0.5);
  Vec losses(4);
  losses << 4.0, 1.0, 3.0, 2.0;
  const double got = solve_theta_internal(cvar, losses);
  CHECK(got == 2.0);

  // Grid scan over [0, 5] at step 1e-4 cannot beat the returned value.
  const double f_star = shift_objective(cvar, losses, got);
  double grid_min = f_star + 1.0;
  for (double th = 0.0; th <= 5.0; th += 1e-4) {
    grid_min = std::min(grid_min, shift_objective(cvar, losses, th));
  }
  CHECK(f_star <= grid_min + 1e-12);
}

TEST_CASE("internal theta errors") {
  Vec empty(0);
  Vec one = Vec::Constant(1, 1.0);
  CHECK_THROWS_AS(solve_theta_internal(PhiTransform::tilt(0.1), empty),
                  std::invalid_argument);
  CHECK_THROWS_AS(solve_theta_internal(PhiTransform::identity(), one),
                  std::invalid_argument);
  CHECK_THROWS_AS(solve_theta_internal(PhiTransform::raw_exp(0.1), one),
                  std::invalid_argument);
}

TEST_CASE("tilt theta* is a global minimizer on a 10^4 grid") {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(20));
    Vec losses(n);
    for (int i = 0; i < n; ++i) losses[i] = -4.0 + 8.0 * rng.uniform();
    const double gamma = 0.1 + 1.5 * rng.uniform();
    const PhiTransform tilt = PhiTransform::tilt(gamma);
    const double star = solve_theta_internal(tilt, losses);
    const double f_star = shift_objective(tilt, losses, star);
    const double lo = losses.minCoeff() - 1.0;
    const double hi = losses.maxCoeff() + 1.0;
    double grid_min = f_star + 1.0;
    for (int g = 0; g < 10000; ++g) {
      grid_min =
          std::min(grid_min, shift_objective(tilt, losses, lo + (hi - lo) * g / 9999.0));
    }
    CHECK(f_star <= grid_min + 1e-9);
  }
}

TEST_CASE("cvar theta* achieves the grid minimum objective value") {
  Rng rng(102);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(30));
    Vec losses(n);
    for (int i = 0; i < n; ++i) losses[i] = -4.0 + 8.0 * rng.uniform();
    const double beta = 0.05 + 0.9 * rng.uniform();
    const PhiTransform cvar = PhiTransform::cvar(beta);
    const double star = solve_theta_internal(cvar, losses);
    const double f_star = shift_objective(cvar, losses, star);
    const double lo = losses.minCoeff() - 1.0;
    const double hi = losses.maxCoeff() + 1.0;
    double grid_min = f_star + 1.0;
    for (int g = 0; g < 10000; ++g) {
      grid_min =
          std::min(grid_min, shift_objective(cvar, losses, lo + (hi - lo) * g / 9999.0));
    }
    CHECK(f_star <= grid_min + 1e-9);
  }
}
