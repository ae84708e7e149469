#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coce/data.hpp"
#include "coce/eval.hpp"
#include "coce/models.hpp"
#include "coce/objectives.hpp"
#include "coce/optimizers.hpp"

namespace coce {

enum class MethodKind { Erm, Coce, SoftAD, Sam, SharpDRO, Flooding, TiltedErm };

/// One training method in the sweep. The swept hyperparameter comes from
/// the experiment's hyper_grid and means: eta for coce/softad/flooding,
/// the perturbation radius for sam/sharpdro, the tilt gamma for tilted-erm.
/// erm has no hyperparameter.
struct MethodSpec {
  MethodKind kind = MethodKind::Erm;
  std::string label;  // unique name in outputs

  // coce (softad is coce with the identity transform)
  PhiKind phi_kind = PhiKind::Identity;
  double phi_beta = 0.0;
  double phi_gamma = 0.1;
  RhoKind rho_kind = RhoKind::PseudoHuber;
  ThetaMode theta_mode = ThetaMode::Fixed;
  double theta_value = 0.0;
  double theta_lr_multiplier = 1.0;

  // sharpdro
  double prob_step = 0.01;

  bool has_hyper() const { return kind != MethodKind::Erm; }
};

struct ExperimentConfig {
  DataConfig data;
  ModelSpec model;
  Schedule schedule;
  std::vector<MethodSpec> methods;
  std::vector<double> hyper_grid = {0.01, 0.02, 0.05, 0.1, 0.2, 0.5};
  int epochs = 200;
  int batch_size = 100;
  int trials = 10;
  std::uint64_t base_seed = 0;
  std::vector<int> eval_epochs = {50, 150};  // final epoch is always evaluated
};

/// Parses the JSON experiment config; unknown keys are an error.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

/// The resolved config, defaults included, as pretty JSON.
std::string config_echo_json(const ExperimentConfig& cfg);

void validate(const ExperimentConfig& cfg);

struct EpochEval {
  int epoch = 0;
  EvalReport train;
  EvalReport val;
  EvalReport test;
};

struct TrialRecord {
  std::string method;
  std::optional<double> hyper;
  int trial = 0;
  std::uint64_t seed = 0;
  std::vector<EpochEval> evals;
  int selected_epoch = -1;
  double wall_seconds = 0.0;
  bool failed = false;
  std::string fail_reason;
};

/// base_seed + trial; shared across methods so each method sees identical
/// data, splits, initialization and batch order within a trial.
std::uint64_t trial_seed(const ExperimentConfig& cfg, int trial);

/// The mini-batch presentation order for one epoch: a pure function of
/// (trial seed, epoch), independent of the method being trained.
std::vector<int> epoch_batch_order(std::uint64_t seed, int epoch, int n);

/// Epochs at which evaluation runs (configured list clipped to the horizon,
/// final epoch appended).
std::vector<int> resolved_eval_epochs(const ExperimentConfig& cfg);

/// Trains one (method, hyperparameter, trial) cell from scratch,
/// regenerating the trial's data; deterministic given cfg and arguments.
TrialRecord run_cell(const ExperimentConfig& cfg, int trial, const MethodSpec& method,
                     std::optional<double> hyper);

/// As run_cell but reusing already-generated trial data (must equal
/// generate_dataset for this trial's seed).
TrialRecord run_cell_with_data(const ExperimentConfig& cfg, int trial,
                               const MethodSpec& method, std::optional<double> hyper,
                               const GeneratedData& data);

/// The full sweep: every method x hyperparameter x trial. Cells that fail
/// numerically are marked and the sweep continues.
std::vector<TrialRecord> run_experiment(const ExperimentConfig& cfg);

/// Epoch with the highest validation average accuracy; ties break to the
/// earliest evaluated epoch. -1 when nothing was evaluated.
int select_model(const TrialRecord& record);

/// Long-format rows of records.csv:
/// method,hyper,trial,epoch,split,metric,value.
struct RecordRow {
  std::string method;
  std::string hyper;  // empty for hyperparameter-free methods
  int trial = 0;
  int epoch = 0;
  std::string split;   // train / val / test / meta
  std::string metric;
  double value = 0.0;
};

std::vector<RecordRow> to_rows(const std::vector<TrialRecord>& records);
void write_records_csv(const std::string& path, const std::vector<RecordRow>& rows);
std::vector<RecordRow> read_records_csv(const std::string& path);

/// Wall-clock per cell; informational only and excluded from the
/// deterministic records.csv.
void write_timings_csv(const std::string& path, const std::vector<TrialRecord>& records);

/// Per (method, hyper, metric): mean and sample standard deviation over
/// trials of the test metric at each trial's selected epoch.
struct SummaryRow {
  std::string method;
  std::string hyper;
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;
  int trials = 0;
  bool single_trial = false;
  int failed_trials = 0;
};

std::vector<SummaryRow> summarize(const std::vector<RecordRow>& rows);
void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);

/// Shortest round-trip decimal form of a double (records/summary files).
std::string format_value(double v);

}  // namespace coce
