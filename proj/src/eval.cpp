#include "coce/eval.hpp"

#include <stdexcept>

namespace coce {

namespace {

void require_states(const Dataset& dataset) {
  if (dataset.examples.empty()) {
    throw std::invalid_argument("eval: empty dataset");
  }
  for (const LabeledExample& ex : dataset.examples) {
    if (!ex.state) {
      throw std::invalid_argument("eval: example without a state label");
    }
  }
}

bool all_have_states(const Dataset& dataset) {
  for (const LabeledExample& ex : dataset.examples) {
    if (!ex.state) return false;
  }
  return !dataset.examples.empty();
}

}  // namespace

std::map<int, double> per_state_error(const ModelSpec& spec, const Vec& params,
                                      const Dataset& dataset) {
  require_states(dataset);
  std::map<int, std::pair<long long, long long>> tally;  // state -> (wrong, total)
  for (const LabeledExample& ex : dataset.examples) {
    auto& [wrong, total] = tally[*ex.state];
    if (predict(spec, params, ex.features) != ex.label) ++wrong;
    ++total;
  }
  std::map<int, double> out;
  for (const auto& [s, wt] : tally) {
    out[s] = static_cast<double>(wt.first) / static_cast<double>(wt.second);
  }
  return out;
}

double balanced_error(const ModelSpec& spec, const Vec& params, const Dataset& dataset) {
  const std::map<int, double> rates = per_state_error(spec, params, dataset);
  double sum = 0.0;
  for (const auto& [s, r] : rates) sum += r;
  return sum / static_cast<double>(rates.size());
}

std::map<int, double> per_state_expected_loss(const ModelSpec& spec, const Vec& params,
                                              const Dataset& dataset) {
  require_states(dataset);
  const Vec losses = per_example_losses(spec, params, BatchView(dataset.examples));
  std::map<int, std::pair<double, long long>> tally;  // state -> (sum, count)
  for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
    auto& [sum, count] = tally[*dataset.examples[i].state];
    sum += losses[static_cast<Eigen::Index>(i)];
    ++count;
  }
  std::map<int, double> out;
  for (const auto& [s, sc] : tally) {
    out[s] = sc.first / static_cast<double>(sc.second);
  }
  return out;
}

double max_balance_gap(const std::map<int, double>& per_state) {
  if (per_state.empty()) {
    throw std::invalid_argument("max_balance_gap: empty per-state map");
  }
  double mx = per_state.begin()->second;
  double sum = 0.0;
  for (const auto& [s, v] : per_state) {
    mx = std::max(mx, v);
    sum += v;
  }
  // max >= mean identically; clamp away summation rounding on equal values.
  return std::max(0.0, mx - sum / static_cast<double>(per_state.size()));
}

EvalReport evaluate(const ModelSpec& spec, const Vec& params, const Dataset& dataset) {
  if (dataset.examples.empty()) {
    throw std::invalid_argument("evaluate: empty dataset");
  }
  EvalReport report;
  report.param_l2 = param_norm(params);

  const Vec losses = per_example_losses(spec, params, BatchView(dataset.examples));
  report.average_loss = losses.mean();

  long long correct = 0;
  for (const LabeledExample& ex : dataset.examples) {
    if (predict(spec, params, ex.features) == ex.label) ++correct;
  }
  report.average_accuracy =
      static_cast<double>(correct) / static_cast<double>(dataset.size());

  if (all_have_states(dataset)) {
    report.per_state_error = per_state_error(spec, params, dataset);
    report.per_state_loss = per_state_expected_loss(spec, params, dataset);
    double err_sum = 0.0;
    for (const auto& [s, r] : report.per_state_error) err_sum += r;
    report.balanced_accuracy =
        1.0 - err_sum / static_cast<double>(report.per_state_error.size());
    report.max_balance_gap = max_balance_gap(report.per_state_loss);
  }
  return report;
}

}  // namespace coce
