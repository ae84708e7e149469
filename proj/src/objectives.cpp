#include "coce/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace coce {

ObjectiveConfig erm_objective() {
  ObjectiveConfig cfg;
  cfg.aggregator = Aggregator::Erm;
  return cfg;
}

ObjectiveConfig coce_objective(PhiTransform phi, RhoFunction rho, double eta,
                               ThetaStrategy theta) {
  ObjectiveConfig cfg;
  cfg.aggregator = Aggregator::Coce;
  cfg.phi = phi;
  cfg.rho = rho;
  cfg.eta = eta;
  cfg.theta = theta;
  return cfg;
}

ObjectiveConfig flooding_objective(double eta) {
  ObjectiveConfig cfg;
  cfg.aggregator = Aggregator::Flooding;
  cfg.eta = eta;
  return cfg;
}

ObjectiveConfig tilted_erm_objective(double gamma) {
  ObjectiveConfig cfg;
  cfg.aggregator = Aggregator::TiltedErm;
  cfg.tilt_gamma = gamma;
  return cfg;
}

void validate(const ObjectiveConfig& cfg) {
  switch (cfg.aggregator) {
    case Aggregator::Erm:
      return;
    case Aggregator::Coce:
      if (!cfg.phi) throw std::invalid_argument("coce objective: phi missing");
      if (!cfg.rho) throw std::invalid_argument("coce objective: rho missing");
      if (!cfg.eta || !std::isfinite(*cfg.eta)) {
        throw std::invalid_argument("coce objective: eta missing or non-finite");
      }
      if (!cfg.theta) throw std::invalid_argument("coce objective: theta strategy missing");
      if (cfg.theta->mode == ThetaMode::Internal &&
          cfg.phi->kind() != PhiKind::Cvar && cfg.phi->kind() != PhiKind::Tilt) {
        throw std::invalid_argument(
            "coce objective: internal theta requires a cvar or tilt transform");
      }
      return;
    case Aggregator::Flooding:
      if (!cfg.eta || !std::isfinite(*cfg.eta)) {
        throw std::invalid_argument("flooding objective: eta missing or non-finite");
      }
      return;
    case Aggregator::TiltedErm:
      if (!cfg.tilt_gamma || !(*cfg.tilt_gamma > 0.0)) {
        throw std::invalid_argument("tilted-erm objective: gamma must be positive");
      }
      return;
  }
  throw std::logic_error("validate: unknown aggregator");
}

TransformedLoss transform_loss(const PhiTransform& phi, double theta,
                               double base_loss) {
  if (phi.kind() == PhiKind::RawExp) {
    return {phi.value(base_loss), phi.derivative(base_loss)};
  }
  return {theta + phi.value(base_loss - theta), phi.derivative(base_loss - theta)};
}

double resolve_theta(const ObjectiveConfig& cfg, const Vec& losses,
                     double state_theta) {
  if (cfg.phi->kind() == PhiKind::RawExp) return 0.0;
  switch (cfg.theta->mode) {
    case ThetaMode::Internal:
      return solve_theta_internal(*cfg.phi, losses);
    case ThetaMode::Joint:
      return state_theta;
    case ThetaMode::Fixed:
      return cfg.theta->theta;
  }
  throw std::logic_error("resolve_theta: unknown mode");
}

namespace {

void require_losses(const Vec& losses) {
  if (losses.size() == 0) {
    throw std::invalid_argument("aggregate: empty loss list");
  }
  if (!losses.allFinite()) {
    throw std::invalid_argument("aggregate: non-finite loss");
  }
}

void require_finite_result(const AggregateResult& r) {
  if (!std::isfinite(r.objective_value) || !r.loss_weights.allFinite() ||
      (r.theta_gradient && !std::isfinite(*r.theta_gradient))) {
    throw std::runtime_error("aggregate: overflow in transformed losses");
  }
}

AggregateResult aggregate_coce(const ObjectiveConfig& cfg, const Vec& losses,
                               double state_theta) {
  const PhiTransform& phi = *cfg.phi;
  const RhoFunction& rho = *cfg.rho;
  const double eta = *cfg.eta;
  const double theta = resolve_theta(cfg, losses, state_theta);
  const bool raw = phi.kind() == PhiKind::RawExp;
  const Eigen::Index n = losses.size();

  AggregateResult r;
  r.loss_weights.resize(n);
  if (!raw) r.theta_used = theta;

  double value = 0.0;
  double theta_grad = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const TransformedLoss t = transform_loss(phi, theta, losses[i]);
    if (!std::isfinite(t.value) || !std::isfinite(t.dvalue_dloss)) {
      throw std::runtime_error("aggregate: overflow in transformed losses");
    }
    const double dev = t.value - eta;
    value += rho.value(dev);
    const double rprime = rho.derivative(dev);
    r.loss_weights[i] = rprime * t.dvalue_dloss;
    if (!raw) theta_grad += rprime * (1.0 - t.dvalue_dloss);
  }
  r.objective_value = value / static_cast<double>(n);
  r.loss_weights /= static_cast<double>(n);
  if (cfg.theta->mode == ThetaMode::Joint) {
    r.theta_gradient = raw ? 0.0 : theta_grad / static_cast<double>(n);
  }
  return r;
}

}  // namespace

AggregateResult aggregate(const ObjectiveConfig& cfg, const Vec& losses,
                          double state_theta) {
  validate(cfg);
  require_losses(losses);
  const Eigen::Index n = losses.size();

  AggregateResult r;
  switch (cfg.aggregator) {
    case Aggregator::Erm:
      r.objective_value = losses.mean();
      r.loss_weights = Vec::Constant(n, 1.0 / static_cast<double>(n));
      break;
    case Aggregator::Coce:
      r = aggregate_coce(cfg, losses, state_theta);
      break;
    case Aggregator::Flooding: {
      const double dev = losses.mean() - *cfg.eta;
      r.objective_value = std::abs(dev);
      const double s = dev > 0.0 ? 1.0 : (dev < 0.0 ? -1.0 : 0.0);
      r.loss_weights = Vec::Constant(n, s / static_cast<double>(n));
      break;
    }
    case Aggregator::TiltedErm: {
      const double g = *cfg.tilt_gamma;
      const Vec scaled = g * losses;
      const double m = scaled.maxCoeff();
      const Vec e = (scaled.array() - m).exp();
      const double sum = e.sum();
      r.objective_value = (m + std::log(sum / static_cast<double>(n))) / g;
      r.loss_weights = e / sum;
      break;
    }
  }
  require_finite_result(r);
  return r;
}

int ascent_descent_sign(const ObjectiveConfig& cfg, double transformed_loss) {
  if (cfg.aggregator != Aggregator::Coce) {
    throw std::invalid_argument("ascent_descent_sign: requires a coce objective");
  }
  validate(cfg);
  const double dev = transformed_loss - *cfg.eta;
  return dev > 0.0 ? 1 : (dev < 0.0 ? -1 : 0);
}

std::string aggregator_name(Aggregator a) {
  switch (a) {
    case Aggregator::Erm:       return "erm";
    case Aggregator::Coce:      return "coce";
    case Aggregator::Flooding:  return "flooding";
    case Aggregator::TiltedErm: return "tilted-erm";
  }
  return "?";
}

}  // namespace coce
