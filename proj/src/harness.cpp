#include "coce/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace coce {

using nlohmann::json;

namespace {

constexpr std::uint64_t kInitStreamTag = 0x1217AB1Eull;
constexpr std::uint64_t kBatchStreamTag = 0xBA7C0DE5ull;

void require_allowed_keys(const json& j, const std::set<std::string>& allowed,
                          const std::string& context) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.contains(it.key())) {
      throw std::invalid_argument("config: unknown key '" + it.key() + "' in " +
                                  context);
    }
  }
}

MethodKind method_kind_from(const std::string& name) {
  if (name == "erm") return MethodKind::Erm;
  if (name == "coce") return MethodKind::Coce;
  if (name == "softad") return MethodKind::SoftAD;
  if (name == "sam") return MethodKind::Sam;
  if (name == "sharpdro") return MethodKind::SharpDRO;
  if (name == "flooding") return MethodKind::Flooding;
  if (name == "tilted-erm") return MethodKind::TiltedErm;
  throw std::invalid_argument("config: unknown method '" + name + "'");
}

std::string method_kind_name(MethodKind k) {
  switch (k) {
    case MethodKind::Erm:       return "erm";
    case MethodKind::Coce:      return "coce";
    case MethodKind::SoftAD:    return "softad";
    case MethodKind::Sam:       return "sam";
    case MethodKind::SharpDRO:  return "sharpdro";
    case MethodKind::Flooding:  return "flooding";
    case MethodKind::TiltedErm: return "tilted-erm";
  }
  return "?";
}

PhiKind phi_kind_from(const std::string& name) {
  if (name == "identity") return PhiKind::Identity;
  if (name == "cvar") return PhiKind::Cvar;
  if (name == "tilt") return PhiKind::Tilt;
  if (name == "raw-exp") return PhiKind::RawExp;
  throw std::invalid_argument("config: unknown phi kind '" + name + "'");
}

std::string phi_kind_name(PhiKind k) {
  switch (k) {
    case PhiKind::Identity: return "identity";
    case PhiKind::Cvar:     return "cvar";
    case PhiKind::Tilt:     return "tilt";
    case PhiKind::RawExp:   return "raw-exp";
  }
  return "?";
}

RhoKind rho_kind_from(const std::string& name) {
  if (name == "quadratic") return RhoKind::Quadratic;
  if (name == "pseudo-huber") return RhoKind::PseudoHuber;
  if (name == "abs") return RhoKind::Abs;
  throw std::invalid_argument("config: unknown rho kind '" + name + "'");
}

std::string rho_kind_name(RhoKind k) {
  switch (k) {
    case RhoKind::Quadratic:   return "quadratic";
    case RhoKind::PseudoHuber: return "pseudo-huber";
    case RhoKind::Abs:         return "abs";
  }
  return "?";
}

ThetaMode theta_mode_from(const std::string& name) {
  if (name == "internal") return ThetaMode::Internal;
  if (name == "joint") return ThetaMode::Joint;
  if (name == "fixed") return ThetaMode::Fixed;
  throw std::invalid_argument("config: unknown theta strategy '" + name + "'");
}

std::string theta_mode_name(ThetaMode m) {
  switch (m) {
    case ThetaMode::Internal: return "internal";
    case ThetaMode::Joint:    return "joint";
    case ThetaMode::Fixed:    return "fixed";
  }
  return "?";
}

bool valid_label(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) {
      return false;
    }
  }
  return true;
}

MethodSpec parse_method(const json& j) {
  if (!j.is_object() || !j.contains("name")) {
    throw std::invalid_argument("config: each method needs a 'name'");
  }
  MethodSpec m;
  m.kind = method_kind_from(j.at("name").get<std::string>());
  m.label = j.value("label", method_kind_name(m.kind));

  std::set<std::string> allowed = {"name", "label"};
  const bool coce_like = m.kind == MethodKind::Coce || m.kind == MethodKind::SoftAD;
  if (coce_like) {
    allowed.insert({"rho", "theta", "theta_value", "theta_lr_multiplier"});
  }
  if (m.kind == MethodKind::Coce) {
    allowed.insert({"phi", "phi_beta", "phi_gamma"});
  }
  if (m.kind == MethodKind::SharpDRO) allowed.insert("prob_step");
  require_allowed_keys(j, allowed, "method '" + m.label + "'");

  if (m.kind == MethodKind::Coce) {
    if (!j.contains("phi")) {
      throw std::invalid_argument("config: coce method needs 'phi'");
    }
    m.phi_kind = phi_kind_from(j.at("phi").get<std::string>());
    if (m.phi_kind == PhiKind::Cvar) {
      if (!j.contains("phi_beta")) {
        throw std::invalid_argument("config: cvar phi needs 'phi_beta'");
      }
      m.phi_beta = j.at("phi_beta").get<double>();
    } else if (j.contains("phi_beta")) {
      throw std::invalid_argument("config: 'phi_beta' only applies to the cvar phi");
    }
    if (m.phi_kind == PhiKind::Tilt || m.phi_kind == PhiKind::RawExp) {
      m.phi_gamma = j.value("phi_gamma", 0.1);
    } else if (j.contains("phi_gamma")) {
      throw std::invalid_argument("config: 'phi_gamma' only applies to tilt/raw-exp phi");
    }
  }
  if (m.kind == MethodKind::SoftAD) m.phi_kind = PhiKind::Identity;
  if (coce_like) {
    m.rho_kind = rho_kind_from(j.value("rho", std::string("pseudo-huber")));
    m.theta_mode = theta_mode_from(j.value("theta", std::string("fixed")));
    if (m.theta_mode == ThetaMode::Internal && j.contains("theta_value")) {
      throw std::invalid_argument("config: 'theta_value' conflicts with internal theta");
    }
    m.theta_value = j.value("theta_value", 0.0);
    m.theta_lr_multiplier = j.value("theta_lr_multiplier", 1.0);
  }
  if (m.kind == MethodKind::SharpDRO) {
    m.prob_step = j.value("prob_step", 0.01);
  }
  return m;
}

PhiTransform make_phi(const MethodSpec& m) {
  switch (m.phi_kind) {
    case PhiKind::Identity: return PhiTransform::identity();
    case PhiKind::Cvar:     return PhiTransform::cvar(m.phi_beta);
    case PhiKind::Tilt:     return PhiTransform::tilt(m.phi_gamma);
    case PhiKind::RawExp:   return PhiTransform::raw_exp(m.phi_gamma);
  }
  throw std::logic_error("make_phi: unknown kind");
}

RhoFunction make_rho(RhoKind k) {
  switch (k) {
    case RhoKind::Quadratic:   return RhoFunction::quadratic();
    case RhoKind::PseudoHuber: return RhoFunction::pseudo_huber();
    case RhoKind::Abs:         return RhoFunction::abs();
  }
  throw std::logic_error("make_rho: unknown kind");
}

ThetaStrategy make_theta(const MethodSpec& m) {
  switch (m.theta_mode) {
    case ThetaMode::Internal: return ThetaStrategy::internal();
    case ThetaMode::Joint:    return ThetaStrategy::joint(m.theta_value);
    case ThetaMode::Fixed:    return ThetaStrategy::fixed(m.theta_value);
  }
  throw std::logic_error("make_theta: unknown mode");
}

// The training objective for one (method, hyperparameter) cell; sam and
// sharpdro train on the plain erm objective.
ObjectiveConfig method_objective(const MethodSpec& m, std::optional<double> hyper) {
  switch (m.kind) {
    case MethodKind::Erm:
    case MethodKind::Sam:
    case MethodKind::SharpDRO:
      return erm_objective();
    case MethodKind::Coce:
    case MethodKind::SoftAD: {
      ObjectiveConfig cfg =
          coce_objective(make_phi(m), make_rho(m.rho_kind), *hyper, make_theta(m));
      cfg.theta_lr_multiplier = m.theta_lr_multiplier;
      return cfg;
    }
    case MethodKind::Flooding:
      return flooding_objective(*hyper);
    case MethodKind::TiltedErm:
      return tilted_erm_objective(*hyper);
  }
  throw std::logic_error("method_objective: unknown kind");
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: JSON parse error: ") + e.what());
  }

  try {
    require_allowed_keys(j,
                         {"data", "model", "schedule", "methods", "hyper_grid",
                          "epochs", "batch_size", "trials", "base_seed", "eval_epochs"},
                         "top level");

    ExperimentConfig cfg;
    const json& jd = j.at("data");
    require_allowed_keys(jd,
                         {"num_classes", "input_dim", "samples", "test_samples",
                          "class_separation", "s_max", "severity_noise_scale",
                          "drift_mode", "train_fraction", "seed"},
                         "data");
    cfg.data.num_classes = jd.at("num_classes").get<int>();
    cfg.data.input_dim = jd.at("input_dim").get<int>();
    cfg.data.samples = jd.at("samples").get<int>();
    cfg.data.test_samples = jd.value("test_samples", -1);
    cfg.data.class_separation = jd.value("class_separation", 3.0);
    cfg.data.s_max = jd.value("s_max", 5);
    cfg.data.severity_noise_scale = jd.value("severity_noise_scale", 0.75);
    cfg.data.drift_mode = jd.value("drift_mode", false);
    cfg.data.train_fraction = jd.value("train_fraction", 0.8);
    cfg.data.seed = jd.value("seed", 0ull);

    const json& jm = j.at("model");
    require_allowed_keys(jm, {"architecture", "hidden_dim"}, "model");
    const std::string arch = jm.at("architecture").get<std::string>();
    if (arch == "linear") {
      if (jm.contains("hidden_dim")) {
        throw std::invalid_argument("config: 'hidden_dim' only applies to the mlp");
      }
      cfg.model = ModelSpec::linear(cfg.data.input_dim, cfg.data.num_classes);
    } else if (arch == "mlp") {
      cfg.model = ModelSpec::mlp(cfg.data.input_dim, jm.at("hidden_dim").get<int>(),
                                 cfg.data.num_classes);
    } else {
      throw std::invalid_argument("config: unknown architecture '" + arch + "'");
    }

    if (j.contains("schedule")) {
      const json& js = j.at("schedule");
      require_allowed_keys(
          js, {"initial_lr", "decay_factor", "milestones", "momentum"}, "schedule");
      cfg.schedule.initial_lr = js.value("initial_lr", cfg.schedule.initial_lr);
      cfg.schedule.decay_factor = js.value("decay_factor", cfg.schedule.decay_factor);
      if (js.contains("milestones")) {
        cfg.schedule.milestones = js.at("milestones").get<std::vector<double>>();
      }
      cfg.schedule.momentum = js.value("momentum", cfg.schedule.momentum);
    }

    if (!j.contains("methods") || !j.at("methods").is_array() ||
        j.at("methods").empty()) {
      throw std::invalid_argument("config: 'methods' must be a non-empty array");
    }
    for (const json& jmeth : j.at("methods")) {
      cfg.methods.push_back(parse_method(jmeth));
    }

    if (j.contains("hyper_grid")) {
      cfg.hyper_grid = j.at("hyper_grid").get<std::vector<double>>();
    }
    cfg.epochs = j.value("epochs", 200);
    cfg.batch_size = j.value("batch_size", 100);
    cfg.trials = j.value("trials", 10);
    cfg.base_seed = j.value("base_seed", 0ull);
    if (j.contains("eval_epochs")) {
      cfg.eval_epochs = j.at("eval_epochs").get<std::vector<int>>();
    }

    validate(cfg);
    return cfg;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str());
}

void validate(const ExperimentConfig& cfg) {
  validate(cfg.data);
  validate(cfg.schedule);
  if (cfg.epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (cfg.trials < 1) throw std::invalid_argument("config: trials must be >= 1");
  for (int e : cfg.eval_epochs) {
    if (e < 1) throw std::invalid_argument("config: eval_epochs entries must be >= 1");
  }
  if (cfg.methods.empty()) throw std::invalid_argument("config: no methods");

  std::set<std::string> labels;
  bool any_hyper = false;
  for (const MethodSpec& m : cfg.methods) {
    if (!valid_label(m.label)) {
      throw std::invalid_argument("config: method label '" + m.label +
                                  "' must be alphanumeric/-/_");
    }
    if (!labels.insert(m.label).second) {
      throw std::invalid_argument("config: duplicate method label '" + m.label + "'");
    }
    any_hyper = any_hyper || m.has_hyper();
    if (m.kind == MethodKind::SharpDRO && cfg.data.drift_mode) {
      throw std::invalid_argument(
          "config: sharpdro requires training states; drift_mode trains clean");
    }
    if (m.kind == MethodKind::SharpDRO && m.prob_step < 0.0) {
      throw std::invalid_argument("config: prob_step must be >= 0");
    }
    // Constructing the objective validates phi/rho/theta compatibility.
    if (m.has_hyper()) {
      coce::validate(method_objective(m, 0.1));
    }
  }
  if (any_hyper) {
    if (cfg.hyper_grid.empty()) {
      throw std::invalid_argument("config: hyper_grid must not be empty");
    }
    for (double h : cfg.hyper_grid) {
      if (!std::isfinite(h)) {
        throw std::invalid_argument("config: hyper_grid entries must be finite");
      }
    }
  }
}

std::string config_echo_json(const ExperimentConfig& cfg) {
  json j;
  j["data"] = {{"num_classes", cfg.data.num_classes},
               {"input_dim", cfg.data.input_dim},
               {"samples", cfg.data.samples},
               {"test_samples", cfg.data.resolved_test_samples()},
               {"class_separation", cfg.data.class_separation},
               {"s_max", cfg.data.s_max},
               {"severity_noise_scale", cfg.data.severity_noise_scale},
               {"drift_mode", cfg.data.drift_mode},
               {"train_fraction", cfg.data.train_fraction},
               {"seed", cfg.data.seed}};
  j["model"]["architecture"] =
      cfg.model.architecture == Architecture::Linear ? "linear" : "mlp";
  if (cfg.model.architecture == Architecture::Mlp) {
    j["model"]["hidden_dim"] = cfg.model.hidden_dim;
  }
  j["schedule"] = {{"initial_lr", cfg.schedule.initial_lr},
                   {"decay_factor", cfg.schedule.decay_factor},
                   {"milestones", cfg.schedule.milestones},
                   {"momentum", cfg.schedule.momentum}};
  j["methods"] = json::array();
  for (const MethodSpec& m : cfg.methods) {
    json jm;
    jm["name"] = method_kind_name(m.kind);
    jm["label"] = m.label;
    if (m.kind == MethodKind::Coce || m.kind == MethodKind::SoftAD) {
      jm["phi"] = phi_kind_name(m.phi_kind);
      if (m.phi_kind == PhiKind::Cvar) jm["phi_beta"] = m.phi_beta;
      if (m.phi_kind == PhiKind::Tilt || m.phi_kind == PhiKind::RawExp) {
        jm["phi_gamma"] = m.phi_gamma;
      }
      jm["rho"] = rho_kind_name(m.rho_kind);
      jm["theta"] = theta_mode_name(m.theta_mode);
      if (m.theta_mode != ThetaMode::Internal) jm["theta_value"] = m.theta_value;
      if (m.theta_mode == ThetaMode::Joint) {
        jm["theta_lr_multiplier"] = m.theta_lr_multiplier;
      }
    }
    if (m.kind == MethodKind::SharpDRO) jm["prob_step"] = m.prob_step;
    j["methods"].push_back(jm);
  }
  j["hyper_grid"] = cfg.hyper_grid;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["trials"] = cfg.trials;
  j["base_seed"] = cfg.base_seed;
  j["eval_epochs"] = resolved_eval_epochs(cfg);
  // Schedule milestones count optimizer steps (epochs x batches per epoch).
  const long long n_train = static_cast<long long>(
      std::floor(cfg.data.train_fraction * cfg.data.samples + 1e-9));
  const long long batches = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  j["total_optimizer_steps"] = static_cast<long long>(cfg.epochs) * batches;
  return j.dump(2) + "\n";
}

std::uint64_t trial_seed(const ExperimentConfig& cfg, int trial) {
  return cfg.base_seed + static_cast<std::uint64_t>(trial);
}

std::vector<int> epoch_batch_order(std::uint64_t seed, int epoch, int n) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(derive_seed(seed, kBatchStreamTag),
                      static_cast<std::uint64_t>(epoch)));
  for (int i = n - 1; i > 0; --i) {
    const int k = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[i], order[k]);
  }
  return order;
}

std::vector<int> resolved_eval_epochs(const ExperimentConfig& cfg) {
  std::set<int> epochs;
  for (int e : cfg.eval_epochs) {
    if (e >= 1 && e <= cfg.epochs) epochs.insert(e);
  }
  epochs.insert(cfg.epochs);
  return {epochs.begin(), epochs.end()};
}

TrialRecord run_cell_with_data(const ExperimentConfig& cfg, int trial,
                               const MethodSpec& method, std::optional<double> hyper,
                               const GeneratedData& data) {
  const auto start = std::chrono::steady_clock::now();

  TrialRecord rec;
  rec.method = method.label;
  rec.hyper = hyper;
  rec.trial = trial;
  rec.seed = trial_seed(cfg, trial);

  const int n_train = static_cast<int>(data.train.size());
  const int batches_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const long long total_steps =
      static_cast<long long>(cfg.epochs) * batches_per_epoch;

  Rng init_rng(derive_seed(rec.seed, kInitStreamTag));
  Vec params0 = init_params(cfg.model, init_rng);

  const bool sharp = method.kind == MethodKind::SharpDRO;
  const double theta0 =
      (method.kind == MethodKind::Coce || method.kind == MethodKind::SoftAD) &&
              method.theta_mode == ThetaMode::Joint
          ? method.theta_value
          : 0.0;
  TrainState state = make_train_state(std::move(params0), total_steps,
                                      sharp ? cfg.data.s_max + 1 : 0, theta0);

  const ObjectiveConfig objective = method_objective(method, hyper);
  const std::vector<int> eval_at = resolved_eval_epochs(cfg);

  long long batches_missing_states = 0;
  try {
    std::vector<int> batch_states;
    std::vector<char> state_seen;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      const std::vector<int> order = epoch_batch_order(rec.seed, epoch, n_train);
      for (int b = 0; b < batches_per_epoch; ++b) {
        const int lo = b * cfg.batch_size;
        const int hi = std::min(n_train, lo + cfg.batch_size);
        const std::span<const int> idx(order.data() + lo,
                                       static_cast<std::size_t>(hi - lo));
        const BatchView view(data.train.examples, idx);
        const BatchEvalFn fn = bind_batch(cfg.model, view);

        switch (method.kind) {
          case MethodKind::Erm:
          case MethodKind::Flooding:
          case MethodKind::TiltedErm: {
            BatchEval ev;
            fn(state.params, ev);
            const AggregateResult agg = aggregate(objective, ev.losses, state.theta);
            sgd_step(state, weighted_gradient_sum(agg.loss_weights, ev.grads),
                     cfg.schedule);
            break;
          }
          case MethodKind::Coce:
          case MethodKind::SoftAD:
            coce_sgd_step(state, fn, objective, cfg.schedule);
            break;
          case MethodKind::Sam:
            sam_step(state, fn, objective, cfg.schedule, *hyper);
            break;
          case MethodKind::SharpDRO: {
            batch_states.clear();
            state_seen.assign(static_cast<std::size_t>(cfg.data.s_max) + 1, 0);
            for (std::size_t k = 0; k < view.size(); ++k) {
              if (!view[k].state) {
                throw std::invalid_argument("sharpdro: example without state label");
              }
              batch_states.push_back(*view[k].state);
              state_seen[static_cast<std::size_t>(*view[k].state)] = 1;
            }
            for (char seen : state_seen) {
              if (!seen) {
                ++batches_missing_states;
                break;
              }
            }
            SharpDROConfig sd;
            sd.radius = *hyper;
            sd.prob_step = method.prob_step;
            sharpdro_step(state, fn, batch_states, cfg.schedule, sd);
            break;
          }
        }
      }
      if (std::binary_search(eval_at.begin(), eval_at.end(), epoch)) {
        EpochEval ee;
        ee.epoch = epoch;
        ee.train = evaluate(cfg.model, state.params, data.train);
        ee.val = evaluate(cfg.model, state.params, data.val);
        ee.test = evaluate(cfg.model, state.params, data.test);
        rec.evals.push_back(std::move(ee));
      }
    }
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.fail_reason = e.what();
  }

  if (batches_missing_states > 0) {
    std::cerr << "[note] sharpdro trial " << trial << ": " << batches_missing_states
              << " batch(es) missed at least one severity state; absent states kept"
                 " their probability mass\n";
  }
  rec.selected_epoch = select_model(rec);
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

TrialRecord run_cell(const ExperimentConfig& cfg, int trial, const MethodSpec& method,
                     std::optional<double> hyper) {
  DataConfig dc = cfg.data;
  dc.seed = trial_seed(cfg, trial);
  return run_cell_with_data(cfg, trial, method, hyper, generate_dataset(dc));
}

std::vector<TrialRecord> run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  std::vector<TrialRecord> records;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    DataConfig dc = cfg.data;
    dc.seed = trial_seed(cfg, trial);
    const GeneratedData data = generate_dataset(dc);
    std::set<int> test_states;
    for (const LabeledExample& ex : data.test.examples) {
      if (ex.state) test_states.insert(*ex.state);
    }
    if (static_cast<int>(test_states.size()) < cfg.data.s_max + 1) {
      std::cerr << "[note] trial " << trial << ": test split observes only "
                << test_states.size() << " of " << cfg.data.s_max + 1
                << " severity states; balanced metrics average over observed states\n";
    }
    for (const MethodSpec& method : cfg.methods) {
      const std::vector<std::optional<double>> hypers =
          method.has_hyper()
              ? [&] {
                  std::vector<std::optional<double>> hs;
                  for (double h : cfg.hyper_grid) hs.emplace_back(h);
                  return hs;
                }()
              : std::vector<std::optional<double>>{std::nullopt};
      for (const std::optional<double>& h : hypers) {
        records.push_back(run_cell_with_data(cfg, trial, method, h, data));
        const TrialRecord& r = records.back();
        std::cerr << "[cell] trial " << trial << " method " << r.method;
        if (r.hyper) std::cerr << " hyper " << *r.hyper;
        std::cerr << (r.failed ? " FAILED: " + r.fail_reason : " done") << " ("
                  << r.wall_seconds << "s)\n";
      }
    }
  }
  return records;
}

int select_model(const TrialRecord& record) {
  int best_epoch = -1;
  double best = -1.0;
  for (const EpochEval& e : record.evals) {
    if (e.val.average_accuracy > best) {
      best = e.val.average_accuracy;
      best_epoch = e.epoch;
    }
  }
  return best_epoch;
}

std::string format_value(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

int split_rank(const std::string& s) {
  if (s == "train") return 0;
  if (s == "val") return 1;
  if (s == "test") return 2;
  return 3;  // meta
}

bool row_less(const RecordRow& a, const RecordRow& b) {
  if (a.method != b.method) return a.method < b.method;
  // Hyperparameters compare numerically; the empty value sorts first.
  const double ha = a.hyper.empty() ? -std::numeric_limits<double>::infinity()
                                    : std::stod(a.hyper);
  const double hb = b.hyper.empty() ? -std::numeric_limits<double>::infinity()
                                    : std::stod(b.hyper);
  if (ha != hb) return ha < hb;
  if (a.trial != b.trial) return a.trial < b.trial;
  if (a.epoch != b.epoch) return a.epoch < b.epoch;
  if (split_rank(a.split) != split_rank(b.split)) {
    return split_rank(a.split) < split_rank(b.split);
  }
  return a.metric < b.metric;
}

void push_report(std::vector<RecordRow>& rows, const TrialRecord& r, int epoch,
                 const std::string& split, const EvalReport& rep) {
  const std::string hyper = r.hyper ? format_value(*r.hyper) : "";
  const auto add = [&](const char* metric, double v) {
    rows.push_back({r.method, hyper, r.trial, epoch, split, metric, v});
  };
  add("average_loss", rep.average_loss);
  add("average_accuracy", rep.average_accuracy);
  add("param_l2", rep.param_l2);
  if (rep.balanced_accuracy) add("balanced_accuracy", *rep.balanced_accuracy);
  if (rep.max_balance_gap) add("max_balance_gap", *rep.max_balance_gap);
}

}  // namespace

std::vector<RecordRow> to_rows(const std::vector<TrialRecord>& records) {
  std::vector<RecordRow> rows;
  for (const TrialRecord& r : records) {
    const std::string hyper = r.hyper ? format_value(*r.hyper) : "";
    for (const EpochEval& e : r.evals) {
      push_report(rows, r, e.epoch, "train", e.train);
      push_report(rows, r, e.epoch, "val", e.val);
      push_report(rows, r, e.epoch, "test", e.test);
    }
    rows.push_back({r.method, hyper, r.trial, -1, "meta", "selected_epoch",
                    static_cast<double>(r.selected_epoch)});
    rows.push_back({r.method, hyper, r.trial, -1, "meta", "failed",
                    r.failed ? 1.0 : 0.0});
  }
  std::sort(rows.begin(), rows.end(), row_less);
  return rows;
}

void write_records_csv(const std::string& path, const std::vector<RecordRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_records_csv: cannot open " + path);
  out << "method,hyper,trial,epoch,split,metric,value\n";
  for (const RecordRow& r : rows) {
    out << r.method << ',' << r.hyper << ',' << r.trial << ',' << r.epoch << ','
        << r.split << ',' << r.metric << ',' << format_value(r.value) << "\n";
  }
  if (!out) throw std::runtime_error("write_records_csv: write failed");
}

std::vector<RecordRow> read_records_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_records_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) ||
      (line != "method,hyper,trial,epoch,split,metric,value" &&
       line != "method,hyper,trial,epoch,split,metric,value\r")) {
    throw std::runtime_error("read_records_csv: unexpected header in " + path);
  }
  std::vector<RecordRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        cells.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur.push_back(c);
      }
    }
    cells.push_back(cur);
    if (cells.size() != 7) {
      throw std::runtime_error("read_records_csv: row " + std::to_string(lineno) +
                               ": expected 7 cells");
    }
    RecordRow r;
    r.method = cells[0];
    r.hyper = cells[1];
    try {
      r.trial = std::stoi(cells[2]);
      r.epoch = std::stoi(cells[3]);
      r.split = cells[4];
      r.metric = cells[5];
      r.value = std::stod(cells[6]);
    } catch (const std::exception&) {
      throw std::runtime_error("read_records_csv: row " + std::to_string(lineno) +
                               ": malformed numeric cell");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_timings_csv(const std::string& path,
                       const std::vector<TrialRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_timings_csv: cannot open " + path);
  out << "method,hyper,trial,wall_seconds,failed\n";
  for (const TrialRecord& r : records) {
    out << r.method << ',' << (r.hyper ? format_value(*r.hyper) : "") << ','
        << r.trial << ',' << format_value(r.wall_seconds) << ',' << (r.failed ? 1 : 0)
        << "\n";
  }
}

std::vector<SummaryRow> summarize(const std::vector<RecordRow>& rows) {
  struct TrialAgg {
    std::map<int, double> val_acc;                          // epoch -> accuracy
    std::map<std::pair<int, std::string>, double> test;     // (epoch, metric) -> value
    bool failed = false;
  };
  std::map<std::pair<std::string, std::string>, std::map<int, TrialAgg>> cells;

  for (const RecordRow& r : rows) {
    TrialAgg& agg = cells[{r.method, r.hyper}][r.trial];
    if (r.split == "val" && r.metric == "average_accuracy") {
      agg.val_acc[r.epoch] = r.value;
    } else if (r.split == "test") {
      agg.test[{r.epoch, r.metric}] = r.value;
    } else if (r.split == "meta" && r.metric == "failed" && r.value != 0.0) {
      agg.failed = true;
    }
  }

  const std::vector<std::string> metrics = {"balanced_accuracy", "average_accuracy",
                                            "average_loss", "param_l2"};
  std::vector<SummaryRow> out;
  for (const auto& [key, trials] : cells) {
    std::map<std::string, std::vector<double>> values;
    int failed = 0;
    for (const auto& [trial, agg] : trials) {
      if (agg.failed || agg.val_acc.empty()) {
        ++failed;
        continue;
      }
      // Model selection: highest validation average accuracy, earliest
      // epoch on ties (map iteration is in epoch order).
      int sel = -1;
      double best = -1.0;
      for (const auto& [epoch, acc] : agg.val_acc) {
        if (acc > best) {
          best = acc;
          sel = epoch;
        }
      }
      for (const std::string& m : metrics) {
        const auto it = agg.test.find({sel, m});
        if (it != agg.test.end()) values[m].push_back(it->second);
      }
    }
    for (const std::string& m : metrics) {
      const auto it = values.find(m);
      if (it == values.end() || it->second.empty()) continue;
      const std::vector<double>& v = it->second;
      const double n = static_cast<double>(v.size());
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      const double stddev = v.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
      out.push_back({key.first, key.second, m, mean, stddev,
                     static_cast<int>(v.size()), v.size() == 1, failed});
    }
  }
  return out;
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_summary_csv: cannot open " + path);
  out << "method,hyper,metric,mean,std,trials,single_trial,failed_trials\n";
  for (const SummaryRow& r : rows) {
    out << r.method << ',' << r.hyper << ',' << r.metric << ','
        << format_value(r.mean) << ',' << format_value(r.stddev) << ',' << r.trials
        << ',' << (r.single_trial ? 1 : 0) << ',' << r.failed_trials << "\n";
  }
}

}  // namespace coce
