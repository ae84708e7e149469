#include "coce/optimizers.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace coce {

void validate(const Schedule& schedule) {
  if (!(schedule.initial_lr > 0.0)) {
    throw std::invalid_argument("Schedule: initial_lr must be positive");
  }
  if (!(schedule.decay_factor > 0.0 && schedule.decay_factor < 1.0)) {
    throw std::invalid_argument("Schedule: decay_factor must lie in (0, 1)");
  }
  if (!(schedule.momentum >= 0.0 && schedule.momentum < 1.0)) {
    throw std::invalid_argument("Schedule: momentum must lie in [0, 1)");
  }
  double prev = 0.0;
  for (double m : schedule.milestones) {
    if (!(m > prev && m < 1.0)) {
      throw std::invalid_argument("Schedule: milestones must be strictly increasing in (0, 1)");
    }
    prev = m;
  }
}

namespace {

// ceil with protection against representation noise in products like
// 0.3 * 100 that are mathematically integral.
long long milestone_step(double fraction, long long total_steps) {
  const double x = fraction * static_cast<double>(total_steps);
  const double r = std::llround(x);
  if (std::abs(x - r) < 1e-9 * std::max(1.0, std::abs(x))) {
    return static_cast<long long>(r);
  }
  return static_cast<long long>(std::ceil(x));
}

}  // namespace

double lr_at(const Schedule& schedule, long long step_index, long long total_steps) {
  validate(schedule);
  if (step_index < 0 || step_index >= total_steps) {
    throw std::invalid_argument("lr_at: step_index out of range");
  }
  double lr = schedule.initial_lr;
  for (double m : schedule.milestones) {
    if (step_index >= milestone_step(m, total_steps)) lr *= schedule.decay_factor;
  }
  return lr;
}

TrainState make_train_state(Vec params0, long long total_steps, int num_states,
                            double theta0) {
  TrainState st;
  st.momentum_buffer = Vec::Zero(params0.size());
  st.params = std::move(params0);
  st.total_steps = total_steps;
  st.theta = theta0;
  if (num_states > 0) {
    st.state_probs = Vec::Constant(num_states, 1.0 / static_cast<double>(num_states));
  }
  return st;
}

void sgd_step(TrainState& state, const Vec& grad, const Schedule& schedule) {
  if (grad.size() != state.params.size()) {
    throw std::invalid_argument("sgd_step: gradient shape mismatch");
  }
  if (!grad.allFinite()) {
    throw std::runtime_error("sgd_step: non-finite gradient");
  }
  const double lr = lr_at(schedule, state.step_index, state.total_steps);
  state.momentum_buffer = schedule.momentum * state.momentum_buffer + grad;
  state.params -= lr * state.momentum_buffer;
  ++state.step_index;
}

BatchEvalFn bind_batch(const ModelSpec& spec, BatchView batch) {
  return [spec, batch](const Vec& params, BatchEval& out) {
    per_example_loss_and_grad(spec, params, batch, out);
  };
}

Vec weighted_gradient_sum(const Vec& weights, const std::vector<Vec>& grads) {
  if (static_cast<std::size_t>(weights.size()) != grads.size() || grads.empty()) {
    throw std::invalid_argument("weighted_gradient_sum: size mismatch");
  }
  Vec out = Vec::Zero(grads[0].size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    out += weights[static_cast<Eigen::Index>(i)] * grads[i];
  }
  return out;
}

namespace {

Vec objective_gradient(const ObjectiveConfig& objective, const BatchEval& ev,
                       double state_theta, AggregateResult* agg_out = nullptr) {
  AggregateResult agg = aggregate(objective, ev.losses, state_theta);
  Vec g = weighted_gradient_sum(agg.loss_weights, ev.grads);
  if (!g.allFinite()) {
    throw std::runtime_error("objective gradient: non-finite result");
  }
  if (agg_out) *agg_out = std::move(agg);
  return g;
}

}  // namespace

void sam_step(TrainState& state, const BatchEvalFn& fn, const ObjectiveConfig& objective,
              const Schedule& schedule, double radius) {
  if (radius < 0.0) throw std::invalid_argument("sam_step: radius must be >= 0");
  BatchEval ev;
  fn(state.params, ev);
  const Vec g = objective_gradient(objective, ev, state.theta);
  const double norm = g.norm();
  if (radius > 0.0 && norm > 0.0) {
    const Vec perturbed = state.params + (radius / norm) * g;
    BatchEval ev2;
    fn(perturbed, ev2);
    const Vec g2 = objective_gradient(objective, ev2, state.theta);
    sgd_step(state, g2, schedule);
  } else {
    sgd_step(state, g, schedule);
  }
}

Vec update_state_probs(const Vec& probs, const Vec& per_state_loss, double prob_step) {
  if (probs.size() != per_state_loss.size() || probs.size() == 0) {
    throw std::invalid_argument("update_state_probs: size mismatch");
  }
  if (prob_step < 0.0) {
    throw std::invalid_argument("update_state_probs: prob_step must be >= 0");
  }
  const Vec scores = prob_step * per_state_loss;
  const double m = scores.maxCoeff();
  Vec unnorm = probs.array() * (scores.array() - m).exp();
  const double sum = unnorm.sum();
  if (!(sum > 0.0) || !unnorm.allFinite()) {
    throw std::runtime_error("update_state_probs: degenerate probability mass");
  }
  return unnorm / sum;
}

SharpDROStep sharpdro_direction(const Vec& params, const Vec& state_probs,
                                const BatchEvalFn& fn, std::span<const int> states,
                                const SharpDROConfig& cfg) {
  const auto n_states = static_cast<int>(state_probs.size());
  if (n_states == 0) {
    throw std::invalid_argument("sharpdro: state probability vector is empty");
  }
  if (states.empty()) {
    throw std::invalid_argument("sharpdro: batch carries no state labels");
  }
  for (int s : states) {
    if (s < 0 || s >= n_states) {
      throw std::invalid_argument("sharpdro: state label out of range");
    }
  }

  BatchEval ev;
  fn(params, ev);
  const auto n = static_cast<std::size_t>(ev.losses.size());
  if (states.size() != n) {
    throw std::invalid_argument("sharpdro: state labels do not match batch size");
  }

  SharpDROStep out;
  Vec batch_grad = Vec::Zero(ev.grads[0].size());
  for (const Vec& g : ev.grads) batch_grad += g;
  batch_grad /= static_cast<double>(n);

  Eigen::VectorXi counts = Eigen::VectorXi::Zero(n_states);
  out.per_state_mean_loss = Vec::Zero(n_states);
  for (std::size_t i = 0; i < n; ++i) {
    counts[states[i]] += 1;
    out.per_state_mean_loss[states[i]] += ev.losses[static_cast<Eigen::Index>(i)];
  }
  for (int s = 0; s < n_states; ++s) {
    if (counts[s] > 0) out.per_state_mean_loss[s] /= static_cast<double>(counts[s]);
  }

  out.new_probs = update_state_probs(state_probs, out.per_state_mean_loss, cfg.prob_step);

  // Per-state mean gradients at the perturbed point; probabilities are
  // constants with respect to the parameters.
  const double gnorm = batch_grad.norm();
  std::vector<Vec> state_grad_sum(static_cast<std::size_t>(n_states));
  auto accumulate = [&](const BatchEval& e) {
    for (std::size_t i = 0; i < n; ++i) {
      Vec& acc = state_grad_sum[static_cast<std::size_t>(states[i])];
      if (acc.size() == 0) {
        acc = e.grads[i];
      } else {
        acc += e.grads[i];
      }
    }
  };
  if (cfg.radius > 0.0 && gnorm > 0.0) {
    const Vec perturbed = params + (cfg.radius / gnorm) * batch_grad;
    BatchEval ev2;
    fn(perturbed, ev2);
    accumulate(ev2);
  } else {
    // |batch grad| = 0 (or radius 0): evaluate at the unperturbed point.
    accumulate(ev);
  }

  Vec weighted = Vec::Zero(batch_grad.size());
  for (int s = 0; s < n_states; ++s) {
    if (counts[s] > 0) {
      weighted += out.new_probs[s] * (state_grad_sum[static_cast<std::size_t>(s)] /
                                      static_cast<double>(counts[s]));
    }
  }
  out.direction = batch_grad + weighted;
  if (!out.direction.allFinite()) {
    throw std::runtime_error("sharpdro: non-finite update direction");
  }
  return out;
}

void sharpdro_step(TrainState& state, const BatchEvalFn& fn, std::span<const int> states,
                   const Schedule& schedule, const SharpDROConfig& cfg) {
  SharpDROStep step = sharpdro_direction(state.params, state.state_probs, fn, states, cfg);
  state.state_probs = std::move(step.new_probs);
  sgd_step(state, step.direction, schedule);
}

CoceStepInfo coce_sgd_step(TrainState& state, const BatchEvalFn& fn,
                           const ObjectiveConfig& objective, const Schedule& schedule,
                           bool rho_prime_scaling, double alpha0) {
  if (objective.aggregator != Aggregator::Coce) {
    throw std::invalid_argument("coce_sgd_step: objective must be coce");
  }
  validate(objective);

  BatchEval ev;
  fn(state.params, ev);
  AggregateResult agg;
  const Vec grad = objective_gradient(objective, ev, state.theta, &agg);

  CoceStepInfo info;
  info.theta_used = agg.theta_used;

  if (rho_prime_scaling) {
    if (ev.losses.size() != 1) {
      throw std::invalid_argument("coce_sgd_step: rho_prime_scaling needs batch size 1");
    }
    if (!(alpha0 > 0.0)) {
      throw std::invalid_argument("coce_sgd_step: alpha0 must be positive");
    }
    const double theta = resolve_theta(objective, ev.losses, state.theta);
    const double transformed = transform_loss(*objective.phi, theta, ev.losses[0]).value;
    const double rprime = objective.rho->derivative(transformed - *objective.eta);
    info.degenerate_scaling = std::abs(rprime) < kRhoPrimeClamp;
    const double lr = alpha0 / std::max(std::abs(rprime), kRhoPrimeClamp);
    state.momentum_buffer = grad;  // momentum forced to 0
    state.params -= lr * state.momentum_buffer;
    ++state.step_index;
    return info;
  }

  const double lr = lr_at(schedule, state.step_index, state.total_steps);
  sgd_step(state, grad, schedule);
  if (objective.theta->mode == ThetaMode::Joint && agg.theta_gradient) {
    state.theta -= lr * objective.theta_lr_multiplier * (*agg.theta_gradient);
  }
  return info;
}

ScalarLossGrad make_example_loss(const ModelSpec& spec, LabeledExample example) {
  std::vector<LabeledExample> holder{std::move(example)};
  return [spec, holder = std::move(holder)](const Vec& params, Vec& grad) {
    BatchEval ev;
    per_example_loss_and_grad(spec, params, BatchView(holder), ev);
    grad = std::move(ev.grads[0]);
    return ev.losses[0];
  };
}

ScalarLossGrad make_transformed_loss(const PhiTransform& phi, double theta,
                                     ScalarLossGrad base) {
  return [phi, theta, base = std::move(base)](const Vec& params, Vec& grad) {
    const double loss = base(params, grad);
    const TransformedLoss t = transform_loss(phi, theta, loss);
    grad *= t.dvalue_dloss;
    return t.value;
  };
}

namespace {

struct ScaledStep {
  Vec next;      // h - (alpha0 / max(|rho'|, clamp)) * rho' * grad
  Vec grad;      // grad of the transformed loss at h
  double value;  // transformed loss at h
  int sign;      // sign(value - eta)
};

ScaledStep scaled_step(const Vec& h, const ScalarLossGrad& loss, const RhoFunction& rho,
                       double eta, double alpha0) {
  ScaledStep out;
  out.value = loss(h, out.grad);
  const double dev = out.value - eta;
  out.sign = dev > 0.0 ? 1 : (dev < 0.0 ? -1 : 0);
  const double rprime = rho.derivative(dev);
  const double lr = alpha0 / std::max(std::abs(rprime), kRhoPrimeClamp);
  out.next = h - lr * rprime * out.grad;
  return out;
}

}  // namespace

double crossing_residual(const Vec& h_t, const ScalarLossGrad& loss_t,
                         const ScalarLossGrad& loss_next, const RhoFunction& rho,
                         double eta, double alpha0) {
  const ScaledStep first = scaled_step(h_t, loss_t, rho, eta, alpha0);
  if (first.sign != -1) {
    throw std::invalid_argument("crossing_residual: transformed loss must start below eta");
  }
  const ScaledStep second = scaled_step(first.next, loss_next, rho, eta, alpha0);
  if (second.sign != 1) {
    throw std::invalid_argument("crossing_residual: transformed loss did not cross eta");
  }

  Vec ref_grad;
  loss_next(h_t + alpha0 * first.grad, ref_grad);
  const Vec reference = h_t - alpha0 * (ref_grad - first.grad);
  return (second.next - reference).norm();
}

double crossing_residual_general(const Vec& h_t, const ScalarLossGrad& loss_t,
                                 const ScalarLossGrad& loss_next,
                                 const RhoFunction& rho, double eta, double alpha0) {
  const ScaledStep first = scaled_step(h_t, loss_t, rho, eta, alpha0);
  if (first.sign == 0) {
    throw std::invalid_argument("crossing_residual_general: sign of first deviation is zero");
  }
  const ScaledStep second = scaled_step(first.next, loss_next, rho, eta, alpha0);
  if (second.sign == 0) {
    throw std::invalid_argument("crossing_residual_general: sign of second deviation is zero");
  }

  Vec ref_grad;
  loss_next(h_t - alpha0 * first.sign * first.grad, ref_grad);
  const Vec reference =
      h_t - alpha0 * (first.sign * first.grad + second.sign * ref_grad);
  return (second.next - reference).norm();
}

}  // namespace coce
