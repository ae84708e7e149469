#pragma once

#include <map>
#include <optional>

#include "coce/data.hpp"
#include "coce/models.hpp"

namespace coce {

/// Evaluation quantities for one (model, dataset) pair. Balanced metrics
/// are present only when every example carries a state; the averaging set
/// is the states actually observed in the dataset.
struct EvalReport {
  std::optional<double> balanced_accuracy;
  double average_accuracy = 0.0;
  double average_loss = 0.0;
  std::map<int, double> per_state_loss;
  std::map<int, double> per_state_error;
  std::optional<double> max_balance_gap;
  double param_l2 = 0.0;
};

/// Mean over observed states of the within-state misclassification rate.
/// Throws if any example lacks a state.
double balanced_error(const ModelSpec& spec, const Vec& params, const Dataset& dataset);

/// Mean cross-entropy loss within each observed state.
std::map<int, double> per_state_expected_loss(const ModelSpec& spec, const Vec& params,
                                              const Dataset& dataset);

/// Within-state misclassification rates.
std::map<int, double> per_state_error(const ModelSpec& spec, const Vec& params,
                                      const Dataset& dataset);

/// max value - mean value over states. Non-negative.
double max_balance_gap(const std::map<int, double>& per_state);

EvalReport evaluate(const ModelSpec& spec, const Vec& params, const Dataset& dataset);

}  // namespace coce
