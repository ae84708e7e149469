#include "coce/checks.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "coce/eval.hpp"
#include "coce/models.hpp"
#include "coce/objectives.hpp"
#include "coce/optimizers.hpp"
#include "coce/rng.hpp"
#include "coce/transforms.hpp"

namespace coce {

double golden_section_minimize(const std::function<double(double)>& f, double lo,
                               double hi, double tol) {
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

namespace {

Vec random_vec(Rng& rng, int n, double scale = 1.0) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

std::vector<LabeledExample> random_batch(Rng& rng, int n, int dim, int num_classes,
                                         int s_max = -1) {
  std::vector<LabeledExample> batch(n);
  for (LabeledExample& ex : batch) {
    ex.features = random_vec(rng, dim);
    ex.label = static_cast<int>(rng.uniform_int(num_classes));
    if (s_max >= 0) ex.state = static_cast<int>(rng.uniform_int(s_max + 1));
  }
  return batch;
}

PhiTransform pick_phi(int which, Rng& rng) {
  const double gamma = 0.05 + 0.4 * rng.uniform();
  const double beta = 0.2 + 0.6 * rng.uniform();
  switch (which % 4) {
    case 0: return PhiTransform::identity();
    case 1: return PhiTransform::cvar(beta);
    case 2: return PhiTransform::tilt(gamma);
    default: return PhiTransform::raw_exp(gamma);
  }
}

RhoFunction pick_rho(int which) {
  switch (which % 3) {
    case 0: return RhoFunction::quadratic();
    case 1: return RhoFunction::pseudo_huber();
    default: return RhoFunction::abs();
  }
}

// Cycles through every aggregator and every phi/rho kind; parameters are
// randomized per case. The internal theta strategy is exercised separately
// (its weights hold theta* constant by contract, which finite differences
// of the re-solved value do not reproduce).
ObjectiveConfig pick_objective(int idx, Rng& rng) {
  const double eta = 0.1 + 1.4 * rng.uniform();
  const int slot = idx % 16;
  if (slot == 0) return erm_objective();
  if (slot == 1) return flooding_objective(eta);
  if (slot == 2) return tilted_erm_objective(0.1 + 0.8 * rng.uniform());
  const double theta0 = 0.3 + 0.9 * rng.uniform();
  if (slot == 15) {
    return coce_objective(PhiTransform::tilt(0.1 + 0.4 * rng.uniform()),
                          pick_rho(static_cast<int>(rng.uniform_int(3))), eta,
                          ThetaStrategy::joint(theta0));
  }
  const int combo = slot - 3;  // 0..11
  return coce_objective(pick_phi(combo / 3, rng), pick_rho(combo % 3), eta,
                        ThetaStrategy::fixed(theta0));
}

// Minimum |hidden pre-activation| over the batch, recomputed from the flat
// layout; used to keep finite-difference probes away from ReLU kinks.
double min_abs_preactivation(const ModelSpec& spec, const Vec& params,
                             const std::vector<LabeledExample>& batch) {
  if (spec.architecture != Architecture::Mlp) return 1.0;
  const int d = spec.input_dim;
  const int h = spec.hidden_dim;
  Eigen::Map<const Mat> w1(params.data(), h, d);
  Eigen::Map<const Vec> b1(params.data() + h * d, h);
  double mn = 1.0;
  for (const LabeledExample& ex : batch) {
    const Vec pre = w1 * ex.features + b1;
    mn = std::min(mn, pre.cwiseAbs().minCoeff());
  }
  return mn;
}

// True when a finite-difference probe could straddle a kink of the
// objective (cvar at loss = theta, abs at L = eta, flooding at mean = eta).
bool near_kink(const ObjectiveConfig& cfg, const Vec& losses, double state_theta) {
  constexpr double margin = 1e-4;
  if (cfg.aggregator == Aggregator::Flooding) {
    return std::abs(losses.mean() - *cfg.eta) < margin;
  }
  if (cfg.aggregator != Aggregator::Coce) return false;
  const double theta = resolve_theta(cfg, losses, state_theta);
  for (Eigen::Index i = 0; i < losses.size(); ++i) {
    if (cfg.phi->kind() == PhiKind::Cvar && std::abs(losses[i] - theta) < margin) {
      return true;
    }
    if (cfg.rho->kind() == RhoKind::Abs) {
      const double L = transform_loss(*cfg.phi, theta, losses[i]).value;
      if (std::abs(L - *cfg.eta) < margin) return true;
    }
  }
  return false;
}

std::string describe(double worst, double tol) {
  std::ostringstream os;
  os << "worst deviation " << worst << " (tolerance " << tol << ")";
  return os.str();
}

}  // namespace

CheckResult check_gradients(std::uint64_t seed, int cases, double tol) {
  Rng rng(seed);
  CheckResult result;
  result.name = "gradient-exactness";
  result.tolerance = tol;

  int done = 0;
  while (done < cases) {
    const bool use_mlp = rng.uniform() < 0.5;
    const int d = 2 + static_cast<int>(rng.uniform_int(4));
    const int c = 2 + static_cast<int>(rng.uniform_int(3));
    const int h = 3 + static_cast<int>(rng.uniform_int(3));
    const ModelSpec spec =
        use_mlp ? ModelSpec::mlp(d, h, c) : ModelSpec::linear(d, c);
    const int n = 2 + static_cast<int>(rng.uniform_int(5));
    const std::vector<LabeledExample> batch = random_batch(rng, n, d, c);
    Rng init_rng(rng.raw());
    const Vec params = init_params(spec, init_rng);
    const ObjectiveConfig cfg = pick_objective(done, rng);
    const double state_theta =
        cfg.theta && cfg.theta->mode == ThetaMode::Joint ? cfg.theta->theta : 0.0;

    const Vec losses = per_example_losses(spec, params, BatchView(batch));
    if (near_kink(cfg, losses, state_theta) ||
        min_abs_preactivation(spec, params, batch) < 1e-4) {
      continue;  // resample away from kinks
    }

    BatchEval ev;
    per_example_loss_and_grad(spec, params, BatchView(batch), ev);
    const AggregateResult agg = aggregate(cfg, ev.losses, state_theta);
    const Vec analytic = weighted_gradient_sum(agg.loss_weights, ev.grads);

    const auto value_fn = [&](const Vec& p) {
      return aggregate(cfg, per_example_losses(spec, p, BatchView(batch)), state_theta)
          .objective_value;
    };
    const Vec fd = finite_diff_grad(value_fn, params, 1e-6);

    const double denom = std::max(analytic.norm(), fd.norm());
    if (denom < 1e-8) continue;  // degenerate gradient; nothing to compare
    const double rel = (analytic - fd).norm() / denom;
    if (rel > result.worst) result.worst = rel;
    ++done;
  }
  result.pass = result.worst < tol;
  result.detail = describe(result.worst, tol);
  return result;
}

namespace {

ScalarLossGrad quadratic_loss(Vec center, double scale) {
  return [center = std::move(center), scale](const Vec& p, Vec& g) {
    const Vec diff = p - center;
    g = scale * diff;
    return 0.5 * scale * diff.squaredNorm();
  };
}

struct CrossingScenario {
  Vec h;
  ScalarLossGrad loss_t;
  ScalarLossGrad loss_next;
  RhoFunction rho = RhoFunction::quadratic();
  double eta = 0.0;
  double alpha0 = 0.1;
};

// Smooth transforms only; the scenario scans eta between the two
// transformed-loss values, so kinks of cvar could sit inside the bracket.
PhiTransform pick_smooth_phi(Rng& rng) {
  const double gamma = 0.05 + 0.15 * rng.uniform();
  switch (rng.uniform_int(3)) {
    case 0: return PhiTransform::identity();
    case 1: return PhiTransform::tilt(gamma);
    default: return PhiTransform::raw_exp(gamma);
  }
}

// Builds a scenario whose first deviation sign is r_t and, after the scaled
// step, second sign is r_next. Returns false if this draw cannot satisfy
// the pattern.
bool build_scenario(Rng& rng, int dim, int r_t, int r_next, CrossingScenario& out) {
  const PhiTransform phi = pick_smooth_phi(rng);
  const double theta = 0.5 * rng.normal();
  out.rho = pick_rho(static_cast<int>(rng.uniform_int(3)));
  out.alpha0 = 0.02 + 0.13 * rng.uniform();
  out.h = random_vec(rng, dim, 0.7);
  out.loss_t = make_transformed_loss(
      phi, theta, quadratic_loss(random_vec(rng, dim, 0.7), 0.1 + 0.4 * rng.uniform()));
  out.loss_next = make_transformed_loss(
      phi, theta, quadratic_loss(random_vec(rng, dim, 0.7), 0.1 + 0.4 * rng.uniform()));

  Vec g_t;
  const double v_t = out.loss_t(out.h, g_t);
  const Vec h1 = out.h - out.alpha0 * static_cast<double>(r_t) * g_t;
  Vec g_unused;
  const double v_n = out.loss_next(h1, g_unused);
  if (!std::isfinite(v_t) || !std::isfinite(v_n)) return false;

  constexpr double margin = 1e-3;
  if (r_t == -1 && r_next == 1) {
    if (!(v_n > v_t + margin)) return false;
    out.eta = 0.5 * (v_t + v_n);
  } else if (r_t == 1 && r_next == -1) {
    if (!(v_t > v_n + margin)) return false;
    out.eta = 0.5 * (v_t + v_n);
  } else if (r_t == 1 && r_next == 1) {
    out.eta = std::min(v_t, v_n) - 0.5;
  } else {
    out.eta = std::max(v_t, v_n) + 0.5;
  }
  return true;
}

}  // namespace

CheckResult check_crossing_identity(std::uint64_t seed, int scenarios, double tol) {
  Rng rng(seed);
  CheckResult result;
  result.name = "threshold-crossing-identity";
  result.tolerance = tol;

  for (int i = 0; i < scenarios; ++i) {
    const int dim = (i % 2 == 0) ? 1 : 10;
    CrossingScenario sc;
    while (!build_scenario(rng, dim, -1, 1, sc)) {
    }
    const double residual =
        crossing_residual(sc.h, sc.loss_t, sc.loss_next, sc.rho, sc.eta, sc.alpha0);
    result.worst = std::max(result.worst, residual);
  }
  result.pass = result.worst < tol;
  result.detail = describe(result.worst, tol);
  return result;
}

CheckResult check_crossing_general(std::uint64_t seed, int scenarios_per_pattern,
                                   double tol) {
  Rng rng(seed);
  CheckResult result;
  result.name = "two-sign-relation";
  result.tolerance = tol;

  const int patterns[4][2] = {{-1, 1}, {1, -1}, {1, 1}, {-1, -1}};
  for (const auto& p : patterns) {
    for (int i = 0; i < scenarios_per_pattern; ++i) {
      const int dim = (i % 2 == 0) ? 1 : 10;
      CrossingScenario sc;
      while (!build_scenario(rng, dim, p[0], p[1], sc)) {
      }
      const double residual = crossing_residual_general(sc.h, sc.loss_t, sc.loss_next,
                                                        sc.rho, sc.eta, sc.alpha0);
      result.worst = std::max(result.worst, residual);
    }
  }
  result.pass = result.worst < tol;
  result.detail = describe(result.worst, tol);
  return result;
}

CheckResult check_theta_tilt(std::uint64_t seed, int vectors, double tol) {
  Rng rng(seed);
  CheckResult result;
  result.name = "theta-tilt-closed-form";
  result.tolerance = tol;

  for (int i = 0; i < vectors; ++i) {
    const int n = 2 + static_cast<int>(rng.uniform_int(40));
    Vec losses(n);
    for (int k = 0; k < n; ++k) losses[k] = -3.0 + 6.0 * rng.uniform();
    const double gamma = 0.1 + 1.9 * rng.uniform();
    const PhiTransform phi = PhiTransform::tilt(gamma);

    const double closed = solve_theta_internal(phi, losses);
    const auto inner = [&](double th) {
      double sum = 0.0;
      for (int k = 0; k < n; ++k) sum += phi.value(losses[k] - th);
      return th + sum / n;
    };
    const double golden = golden_section_minimize(
        inner, losses.minCoeff() - 1.0, losses.maxCoeff() + 1.0, 1e-10);
    result.worst = std::max(result.worst, std::abs(closed - golden));
  }
  result.pass = result.worst < tol;
  result.detail = describe(result.worst, tol);
  return result;
}

CheckResult check_theta_cvar(std::uint64_t seed, int vectors, double tol) {
  Rng rng(seed);
  CheckResult result;
  result.name = "theta-cvar-quantile";
  result.tolerance = tol;
  result.worst = -1.0;  // one-sided: closed form may beat the grid

  for (int i = 0; i < vectors; ++i) {
    const int n = 1 + static_cast<int>(rng.uniform_int(50));
    Vec losses(n);
    for (int k = 0; k < n; ++k) losses[k] = -5.0 + 10.0 * rng.uniform();
    const double beta = 0.05 + 0.9 * rng.uniform();
    const PhiTransform phi = PhiTransform::cvar(beta);

    const double closed = solve_theta_internal(phi, losses);
    const auto inner = [&](double th) {
      double sum = 0.0;
      for (int k = 0; k < n; ++k) sum += phi.value(losses[k] - th);
      return th + sum / n;
    };
    const double lo = losses.minCoeff() - 1.0;
    const double hi = losses.maxCoeff() + 1.0;
    double grid_min = inner(lo);
    constexpr int kGrid = 10000;
    for (int g = 1; g < kGrid; ++g) {
      grid_min = std::min(grid_min, inner(lo + (hi - lo) * g / (kGrid - 1.0)));
    }
    result.worst = std::max(result.worst, inner(closed) - grid_min);
  }
  result.pass = result.worst < tol;
  result.detail = describe(result.worst, tol);
  return result;
}

CheckResult check_sharpdro_structure(std::uint64_t seed) {
  Rng rng(seed);
  CheckResult result;
  result.name = "sharpdro-structure";
  result.tolerance = 1e-12;
  std::ostringstream detail;

  // Probability simplex preserved across repeated updates.
  double worst = 0.0;
  Vec p = Vec::Constant(4, 0.25);
  for (int i = 0; i < 200; ++i) {
    Vec losses(4);
    for (int k = 0; k < 4; ++k) losses[k] = 5.0 * rng.uniform();
    const double beta = (i % 4 == 0) ? 0.0 : 0.01 * (1 + rng.uniform_int(100));
    p = update_state_probs(p, losses, beta);
    worst = std::max(worst, std::abs(p.sum() - 1.0));
    if (p.minCoeff() < 0.0) worst = 1.0;
  }
  detail << "simplex drift " << worst;

  // Shift invariance of the probability update.
  for (int i = 0; i < 100; ++i) {
    Vec q(3);
    for (int k = 0; k < 3; ++k) q[k] = 0.1 + rng.uniform();
    q /= q.sum();
    Vec losses(3);
    for (int k = 0; k < 3; ++k) losses[k] = -2.0 + 4.0 * rng.uniform();
    const double c = -5.0 + 10.0 * rng.uniform();
    const Vec a = update_state_probs(q, losses, 0.01);
    const Vec b = update_state_probs(q, Vec(losses.array() + c), 0.01);
    worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
  }
  detail << "; shift-invariance ok";

  // Single observed state with zero radius: direction is exactly 2 * batch
  // gradient.
  {
    const ModelSpec spec = ModelSpec::linear(3, 2);
    std::vector<LabeledExample> batch = random_batch(rng, 4, 3, 2);
    for (LabeledExample& ex : batch) ex.state = 0;
    Rng init_rng(rng.raw());
    const Vec params = init_params(spec, init_rng);
    const std::vector<int> states(4, 0);
    SharpDROConfig cfg;
    cfg.radius = 0.0;
    const SharpDROStep step = sharpdro_direction(
        params, Vec::Constant(1, 1.0), bind_batch(spec, BatchView(batch)), states, cfg);

    const BatchEval ev = per_example_loss_and_grad(spec, params, BatchView(batch));
    Vec ghat = Vec::Zero(params.size());
    for (const Vec& g : ev.grads) ghat += g;
    ghat /= 4.0;
    const bool exact = (step.direction.array() == (2.0 * ghat).array()).all();
    if (!exact) worst = 1.0;
    detail << "; single-state 2G " << (exact ? "exact" : "MISMATCH");
  }

  // Two states, one step from uniform with mean losses {0, 1} and
  // prob_step 0.01.
  {
    const Vec p1 = update_state_probs(Vec::Constant(2, 0.5), Vec{{0.0, 1.0}}, 0.01);
    const double z = std::exp(0.01);
    const double dev = std::max(std::abs(p1[0] - 1.0 / (1.0 + z)),
                                std::abs(p1[1] - z / (1.0 + z)));
    worst = std::max(worst, dev);
    detail << "; two-state formula dev " << dev;
  }

  result.worst = worst;
  result.pass = worst < result.tolerance;
  result.detail = detail.str();
  return result;
}

CheckResult check_balanced_error_oracle(std::uint64_t seed, int datasets) {
  Rng rng(seed);
  CheckResult result;
  result.name = "balanced-error-oracle";
  result.tolerance = 0.0;  // exact agreement required

  bool pass = true;
  for (int i = 0; i < datasets && pass; ++i) {
    const int d = 2 + static_cast<int>(rng.uniform_int(3));
    const int c = 2 + static_cast<int>(rng.uniform_int(3));
    const int n = 1 + static_cast<int>(rng.uniform_int(50));
    const int s_max = static_cast<int>(rng.uniform_int(4));
    const ModelSpec spec = ModelSpec::linear(d, c);
    Rng init_rng(rng.raw());
    const Vec params = init_params(spec, init_rng);
    Dataset ds;
    ds.input_dim = d;
    ds.examples = random_batch(rng, n, d, c, s_max);

    // Independent enumeration: loop states in sorted order, count by brute
    // force over the whole dataset.
    std::set<int> states;
    for (const LabeledExample& ex : ds.examples) states.insert(*ex.state);
    double rate_sum = 0.0;
    for (int s : states) {
      long long wrong = 0, total = 0;
      for (const LabeledExample& ex : ds.examples) {
        if (*ex.state != s) continue;
        ++total;
        if (predict(spec, params, ex.features) != ex.label) ++wrong;
      }
      rate_sum += static_cast<double>(wrong) / static_cast<double>(total);
    }
    const double oracle = rate_sum / static_cast<double>(states.size());
    const double lib = balanced_error(spec, params, ds);
    if (lib != oracle) {
      pass = false;
      result.worst = std::abs(lib - oracle);
      result.detail = "enumeration mismatch";
      break;
    }

    // Duplicating every example of one state k times leaves the balanced
    // error unchanged.
    const int dup_state = *states.begin();
    for (int k : {2, 5}) {
      Dataset dup = ds;
      for (const LabeledExample& ex : ds.examples) {
        if (*ex.state == dup_state) {
          for (int rep = 1; rep < k; ++rep) dup.examples.push_back(ex);
        }
      }
      if (balanced_error(spec, params, dup) != lib) {
        pass = false;
        result.detail = "duplication changed balanced error";
        break;
      }
    }
  }

  // Non-negativity of the max-balance gap on fuzzed per-state maps.
  for (int i = 0; i < 1000 && pass; ++i) {
    std::map<int, double> m;
    const int k = 1 + static_cast<int>(rng.uniform_int(6));
    for (int s = 0; s < k; ++s) m[s] = -10.0 + 20.0 * rng.uniform();
    if (max_balance_gap(m) < 0.0) {
      pass = false;
      result.detail = "negative max-balance gap";
    }
  }

  result.pass = pass;
  if (pass) result.detail = "exact agreement on all datasets";
  return result;
}

CheckResult check_degenerate_guards() {
  CheckResult result;
  result.name = "degenerate-guards";
  result.tolerance = 0.0;
  std::ostringstream detail;
  bool pass = true;

  Schedule sched;
  sched.momentum = 0.9;

  // SAM with radius 0 is bit-identical to plain SGD on the same gradient.
  {
    Rng rng(7);
    const ModelSpec spec = ModelSpec::linear(4, 3);
    const std::vector<LabeledExample> batch = random_batch(rng, 5, 4, 3);
    Rng init_rng(rng.raw());
    const Vec params = init_params(spec, init_rng);
    const BatchEvalFn fn = bind_batch(spec, BatchView(batch));

    TrainState a = make_train_state(params, 10);
    TrainState b = make_train_state(params, 10);
    sam_step(a, fn, erm_objective(), sched, 0.0);
    BatchEval ev;
    fn(b.params, ev);
    const AggregateResult agg = aggregate(erm_objective(), ev.losses);
    sgd_step(b, weighted_gradient_sum(agg.loss_weights, ev.grads), sched);
    const bool exact = (a.params.array() == b.params.array()).all() &&
                       (a.momentum_buffer.array() == b.momentum_buffer.array()).all();
    pass = pass && exact;
    detail << "sam radius-0 " << (exact ? "bitwise" : "MISMATCH");
  }

  // Zero-gradient batches pass through the SAM and SharpDRO guards.
  {
    const BatchEvalFn flat = [](const Vec& params, BatchEval& out) {
      out.losses = Vec::Constant(2, 1.0);
      out.grads.assign(2, Vec::Zero(params.size()));
    };
    TrainState st = make_train_state(Vec::Constant(3, 0.5), 10);
    try {
      sam_step(st, flat, erm_objective(), sched, 0.1);
      const bool unchanged = (st.params.array() == 0.5).all();
      pass = pass && unchanged;
      detail << "; sam |g|=0 " << (unchanged ? "guarded" : "MOVED");
    } catch (...) {
      pass = false;
      detail << "; sam |g|=0 THREW";
    }

    TrainState st2 = make_train_state(Vec::Constant(3, 0.5), 10, 2);
    const std::vector<int> states = {0, 1};
    try {
      SharpDROConfig cfg;
      cfg.radius = 0.1;
      sharpdro_step(st2, flat, states, sched, cfg);
      const bool unchanged = (st2.params.array() == 0.5).all();
      pass = pass && unchanged;
      detail << "; sharpdro |G|=0 " << (unchanged ? "guarded" : "MOVED");
    } catch (...) {
      pass = false;
      detail << "; sharpdro |G|=0 THREW";
    }
  }

  // rho' = 0 at the threshold: the scaled step is null and flagged.
  {
    const BatchEvalFn at_threshold = [](const Vec& params, BatchEval& out) {
      out.losses = Vec::Constant(1, 2.0);
      out.grads.assign(1, Vec::Constant(params.size(), 1.0));
    };
    const ObjectiveConfig cfg =
        coce_objective(PhiTransform::identity(), RhoFunction::quadratic(), 2.0,
                       ThetaStrategy::fixed(0.0));
    TrainState st = make_train_state(Vec::Constant(3, 1.0), 10);
    const CoceStepInfo info = coce_sgd_step(st, at_threshold, cfg, sched, true, 0.05);
    const bool null_step = (st.params.array() == 1.0).all();
    pass = pass && info.degenerate_scaling && null_step;
    detail << "; rho'=0 clamp " << (info.degenerate_scaling ? "flagged" : "UNFLAGGED")
           << (null_step ? ", null step" : ", STEPPED");
  }

  result.pass = pass;
  result.detail = detail.str();
  return result;
}

std::vector<CheckResult> run_all_checks(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(check_gradients(derive_seed(seed, 1), 200, 1e-5));
  out.push_back(check_crossing_identity(derive_seed(seed, 2), 50, 1e-10));
  out.push_back(check_crossing_general(derive_seed(seed, 3), 12, 1e-10));
  out.push_back(check_theta_tilt(derive_seed(seed, 4), 100, 1e-6));
  out.push_back(check_theta_cvar(derive_seed(seed, 5), 100, 1e-9));
  out.push_back(check_sharpdro_structure(derive_seed(seed, 6)));
  out.push_back(check_balanced_error_oracle(derive_seed(seed, 7), 100));
  out.push_back(check_degenerate_guards());
  return out;
}

}  // namespace coce
