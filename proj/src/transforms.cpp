#include "coce/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace coce {

namespace {

void require_finite(double u, const char* what) {
  if (!std::isfinite(u)) {
    throw std::invalid_argument(std::string(what) + ": non-finite argument");
  }
}

}  // namespace

PhiTransform PhiTransform::identity() {
  return PhiTransform(PhiKind::Identity, 0.0, 0.0);
}

PhiTransform PhiTransform::cvar(double beta) {
  if (!(beta > 0.0 && beta < 1.0)) {
    throw std::invalid_argument("PhiTransform::cvar: beta must lie in (0, 1)");
  }
  return PhiTransform(PhiKind::Cvar, beta, 0.0);
}

PhiTransform PhiTransform::tilt(double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw std::invalid_argument("PhiTransform::tilt: gamma must be positive");
  }
  return PhiTransform(PhiKind::Tilt, 0.0, gamma);
}

PhiTransform PhiTransform::raw_exp(double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw std::invalid_argument("PhiTransform::raw_exp: gamma must be positive");
  }
  return PhiTransform(PhiKind::RawExp, 0.0, gamma);
}

double PhiTransform::value(double u) const {
  require_finite(u, "PhiTransform::value");
  switch (kind_) {
    case PhiKind::Identity:
      return u;
    case PhiKind::Cvar:
      return std::max(0.0, u) / (1.0 - beta_);
    case PhiKind::Tilt:
      return std::expm1(gamma_ * u) / gamma_;
    case PhiKind::RawExp:
      return std::exp(gamma_ * u);
  }
  throw std::logic_error("PhiTransform::value: unknown kind");
}

double PhiTransform::derivative(double u) const {
  require_finite(u, "PhiTransform::derivative");
  switch (kind_) {
    case PhiKind::Identity:
      return 1.0;
    case PhiKind::Cvar:
      if (u < 0.0) return 0.0;
      if (u > 0.0) return 1.0 / (1.0 - beta_);
      return 1.0;
    case PhiKind::Tilt:
      return std::exp(gamma_ * u);
    case PhiKind::RawExp:
      return gamma_ * std::exp(gamma_ * u);
  }
  throw std::logic_error("PhiTransform::derivative: unknown kind");
}

std::string PhiTransform::name() const {
  switch (kind_) {
    case PhiKind::Identity: return "identity";
    case PhiKind::Cvar:     return "cvar";
    case PhiKind::Tilt:     return "tilt";
    case PhiKind::RawExp:   return "raw-exp";
  }
  return "?";
}

RhoFunction RhoFunction::quadratic() { return RhoFunction(RhoKind::Quadratic); }
RhoFunction RhoFunction::pseudo_huber() { return RhoFunction(RhoKind::PseudoHuber); }
RhoFunction RhoFunction::abs() { return RhoFunction(RhoKind::Abs); }

double RhoFunction::value(double u) const {
  require_finite(u, "RhoFunction::value");
  switch (kind_) {
    case RhoKind::Quadratic:
      return 0.5 * u * u;
    case RhoKind::PseudoHuber:
      return std::sqrt(u * u + 1.0) - 1.0;
    case RhoKind::Abs:
      return std::abs(u);
  }
  throw std::logic_error("RhoFunction::value: unknown kind");
}

double RhoFunction::derivative(double u) const {
  require_finite(u, "RhoFunction::derivative");
  switch (kind_) {
    case RhoKind::Quadratic:
      return u;
    case RhoKind::PseudoHuber:
      return u / std::sqrt(u * u + 1.0);
    case RhoKind::Abs:
      if (u > 0.0) return 1.0;
      if (u < 0.0) return -1.0;
      return 0.0;
  }
  throw std::logic_error("RhoFunction::derivative: unknown kind");
}

std::string RhoFunction::name() const {
  switch (kind_) {
    case RhoKind::Quadratic:   return "quadratic";
    case RhoKind::PseudoHuber: return "pseudo-huber";
    case RhoKind::Abs:         return "abs";
  }
  return "?";
}

namespace {

// ceil(x) with protection against representation noise in products like
// 0.5 * 4 that are mathematically integral.
long long ceil_index(double x) {
  const double r = std::llround(x);
  if (std::abs(x - r) < 1e-9 * std::max(1.0, std::abs(x))) {
    return static_cast<long long>(r);
  }
  return static_cast<long long>(std::ceil(x));
}

}  // namespace

double solve_theta_internal(const PhiTransform& t, const Vec& losses) {
  if (losses.size() == 0) {
    throw std::invalid_argument("solve_theta_internal: empty loss list");
  }
  if (!losses.allFinite()) {
    throw std::invalid_argument("solve_theta_internal: non-finite losses");
  }
  switch (t.kind()) {
    case PhiKind::Cvar: {
      const long long n = losses.size();
      std::vector<double> sorted(losses.data(), losses.data() + n);
      std::sort(sorted.begin(), sorted.end());
      long long idx = ceil_index(t.beta() * static_cast<double>(n)) - 1;
      idx = std::clamp<long long>(idx, 0, n - 1);
      return sorted[static_cast<std::size_t>(idx)];
    }
    case PhiKind::Tilt: {
      const double g = t.gamma();
      const double m = g * losses.maxCoeff();
      const double mean_exp = ((g * losses).array() - m).exp().mean();
      return (m + std::log(mean_exp)) / g;
    }
    case PhiKind::Identity:
    case PhiKind::RawExp:
      throw std::invalid_argument(
          "solve_theta_internal: no closed form for kind " + t.name());
  }
  throw std::logic_error("solve_theta_internal: unknown kind");
}

}  // namespace coce
