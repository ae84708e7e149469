#pragma once

#include <functional>
#include <optional>
#include <span>

#include "coce/models.hpp"
#include "coce/objectives.hpp"
#include "coce/types.hpp"

namespace coce {

/// Step-size schedule: initial_lr discounted by decay_factor at each
/// milestone, given as fractions of the total step count.
struct Schedule {
  double initial_lr = 0.03;
  double decay_factor = 0.2;
  std::vector<double> milestones = {0.3, 0.6, 0.8};
  double momentum = 0.9;
};

void validate(const Schedule& schedule);

/// initial_lr * decay_factor^k, k = number of milestones m with
/// step_index >= ceil(m * total_steps). Requires 0 <= step_index < total.
double lr_at(const Schedule& schedule, long long step_index, long long total_steps);

struct TrainState {
  Vec params;
  Vec momentum_buffer;
  long long step_index = 0;
  long long total_steps = 0;
  Vec state_probs;     // severity-state probabilities (SharpDRO only)
  double theta = 0.0;  // learnable shift (joint-theta coce only)
};

/// num_states > 0 sizes a uniform state-probability vector for SharpDRO.
TrainState make_train_state(Vec params0, long long total_steps, int num_states = 0,
                            double theta0 = 0.0);

/// buffer <- momentum * buffer + grad; params <- params - lr * buffer.
void sgd_step(TrainState& state, const Vec& grad, const Schedule& schedule);

/// Evaluates per-example losses and gradients of a fixed batch at the given
/// parameters. Binds a (model, batch) pair; quadratic test problems plug in
/// directly.
using BatchEvalFn = std::function<void(const Vec& params, BatchEval& out)>;

BatchEvalFn bind_batch(const ModelSpec& spec, BatchView batch);

/// sum_i weights[i] * grads[i].
Vec weighted_gradient_sum(const Vec& weights, const std::vector<Vec>& grads);

/// One sharpness-aware step: the objective gradient g is recomputed at
/// params + radius * g/|g| and fed to sgd_step. radius = 0 or |g| = 0 feed
/// g itself (bit-identical to plain sgd_step on g).
void sam_step(TrainState& state, const BatchEvalFn& fn, const ObjectiveConfig& objective,
              const Schedule& schedule, double radius);

struct SharpDROConfig {
  double radius = 0.0;     // perturbation radius epsilon
  double prob_step = 0.01; // multiplicative-weights step beta_t
};

/// Multiplicative-weights update of the severity-state probabilities:
/// p_s proportional to p_s * exp(prob_step * per_state_loss[s]), renormalized
/// with max-subtraction. States absent from the batch pass per_state_loss 0
/// and so keep their unnormalized mass.
Vec update_state_probs(const Vec& probs, const Vec& per_state_loss, double prob_step);

struct SharpDROStep {
  Vec direction;            // batch gradient + probability-weighted perturbed gradient
  Vec new_probs;
  Vec per_state_mean_loss;  // 0 for states absent from the batch
};

/// The composed update direction at the given parameters; pure function,
/// exposed for structural tests.
SharpDROStep sharpdro_direction(const Vec& params, const Vec& state_probs,
                                const BatchEvalFn& fn, std::span<const int> states,
                                const SharpDROConfig& cfg);

/// Updates state_probs and feeds the composed direction to sgd_step. Every
/// example must carry an observed state in [0, state_probs.size()).
void sharpdro_step(TrainState& state, const BatchEvalFn& fn, std::span<const int> states,
                   const Schedule& schedule, const SharpDROConfig& cfg);

/// |rho'| values below this are treated as degenerate when dividing.
inline constexpr double kRhoPrimeClamp = 1e-12;

struct CoceStepInfo {
  std::optional<double> theta_used;
  bool degenerate_scaling = false;
};

/// One step on the coce objective: gradient = sum_i w_i grad_i with weights
/// from aggregate().
///
/// With rho_prime_scaling (batch size 1 only), the learning rate becomes
/// alpha0 / |rho'(L_phi - eta)| with momentum forced to 0, so the realized
/// step is alpha0 * sign(L_phi - eta) * grad(L_phi); |rho'| is clamped below
/// at kRhoPrimeClamp and the step flagged degenerate instead of dividing by
/// zero.
CoceStepInfo coce_sgd_step(TrainState& state, const BatchEvalFn& fn,
                           const ObjectiveConfig& objective, const Schedule& schedule,
                           bool rho_prime_scaling = false, double alpha0 = 0.0);

/// A transformed per-example loss as a function of parameters: returns the
/// loss value and fills its gradient.
using ScalarLossGrad = std::function<double(const Vec& params, Vec& grad)>;

/// Cross-entropy loss of one example as a ScalarLossGrad.
ScalarLossGrad make_example_loss(const ModelSpec& spec, LabeledExample example);

/// Composes phi (with shift theta) on top of a base loss.
ScalarLossGrad make_transformed_loss(const PhiTransform& phi, double theta,
                                     ScalarLossGrad base);

/// Threshold-crossing identity check. Requires a scenario where the
/// transformed loss crosses eta from below in one scaled step:
/// L_t(h_t) < eta < L_next(h_{t+1}). Runs two steps with step sizes
/// alpha0 / |rho'(.)| and returns the deviation
///   | h_{t+2} - [h_t - alpha0 (grad L_next(h_t + alpha0 grad L_t(h_t))
///                             - grad L_t(h_t))] |,
/// which is zero in exact arithmetic. Throws if the scenario does not
/// cross.
double crossing_residual(const Vec& h_t, const ScalarLossGrad& loss_t,
                         const ScalarLossGrad& loss_next, const RhoFunction& rho,
                         double eta, double alpha0);

/// The same two-step deviation against the general two-sign relation
///   h_{t+2} = h_t - alpha0 [ r_t grad L_t(h_t)
///                          + r_next grad L_next(h_t - alpha0 r_t grad L_t(h_t)) ]
/// with r = sign(L - eta); valid for any sign pattern. Throws if either
/// sign is zero.
double crossing_residual_general(const Vec& h_t, const ScalarLossGrad& loss_t,
                                 const ScalarLossGrad& loss_next,
                                 const RhoFunction& rho, double eta, double alpha0);

}  // namespace coce
