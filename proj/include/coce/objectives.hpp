#pragma once

#include <optional>
#include <string>

#include "coce/transforms.hpp"
#include "coce/types.hpp"

namespace coce {

enum class Aggregator { Erm, Coce, Flooding, TiltedErm };

/// Scalar training objective built from per-example losses.
///
/// coce:       mean rho(L_i - eta) with L_i = theta + phi(loss_i - theta)
///             (L_i = exp(gamma*loss_i) for the raw-exp kind)
/// erm:        mean loss
/// flooding:   |mean loss - eta|
/// tilted-erm: log(mean exp(gamma*loss)) / gamma
struct ObjectiveConfig {
  Aggregator aggregator = Aggregator::Erm;
  std::optional<PhiTransform> phi;     // coce
  std::optional<RhoFunction> rho;      // coce
  std::optional<double> eta;           // coce, flooding
  std::optional<ThetaStrategy> theta;  // coce
  std::optional<double> tilt_gamma;    // tilted-erm
  // Step-size multiplier for the joint-theta update relative to the model's
  // learning rate.
  double theta_lr_multiplier = 1.0;
};

ObjectiveConfig erm_objective();
ObjectiveConfig coce_objective(PhiTransform phi, RhoFunction rho, double eta,
                               ThetaStrategy theta);
ObjectiveConfig flooding_objective(double eta);
ObjectiveConfig tilted_erm_objective(double gamma);

/// Throws std::invalid_argument if required fields for the aggregator are
/// missing or invalid.
void validate(const ObjectiveConfig& cfg);

/// Objective value plus the exact per-example loss sensitivities
/// d(value)/d(loss_i), so that model gradients compose by the chain rule:
/// grad(value) = sum_i loss_weights[i] * grad(loss_i).
struct AggregateResult {
  double objective_value = 0.0;
  Vec loss_weights;
  std::optional<double> theta_used;
  std::optional<double> theta_gradient;  // joint strategy only
};

/// Aggregates a batch of per-example losses.
///
/// For the internal theta strategy, theta* is solved on this batch and then
/// treated as a constant in the weights; it is an exact minimizer of the
/// convex inner problem, so its sensitivity contributes nothing to the
/// subgradient.
///
/// `state_theta` supplies the current learnable theta for the joint
/// strategy (ignored otherwise; pass anything).
AggregateResult aggregate(const ObjectiveConfig& cfg, const Vec& losses,
                          double state_theta = 0.0);

/// sign(transformed_loss - eta): the switch between descent (+1) and ascent
/// (-1) regions of the coce objective. Requires a coce config.
int ascent_descent_sign(const ObjectiveConfig& cfg, double transformed_loss);

/// The transformed loss and its derivative in the base loss.
struct TransformedLoss {
  double value = 0.0;
  double dvalue_dloss = 0.0;
};

/// theta + phi(loss - theta) for the normalized kinds; exp(gamma*loss) for
/// raw-exp, which ignores theta entirely.
TransformedLoss transform_loss(const PhiTransform& phi, double theta,
                               double base_loss);

/// Resolves the theta actually used by a coce config on a batch: the closed
/// form for Internal, the current learnable value for Joint, the configured
/// constant for Fixed. Raw-exp ignores theta; returns 0.
double resolve_theta(const ObjectiveConfig& cfg, const Vec& losses,
                     double state_theta);

std::string aggregator_name(Aggregator a);

}  // namespace coce
