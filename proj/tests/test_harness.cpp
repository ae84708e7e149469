#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "coce/harness.hpp"

using namespace coce;

namespace {

// A deliberately tiny experiment that still exercises every moving part.
std::string tiny_config_json(bool drift = false) {
  std::string drift_str = drift ? "true" : "false";
  return std::string(R"({
    "data": {"num_classes": 2, "input_dim": 3, "samples": 60, "test_samples": 20,
             "s_max": 2, "drift_mode": )") +
         drift_str + R"(},
    "model": {"architecture": "linear"},
    "methods": [
      {"name": "erm"},
      {"name": "coce", "phi": "raw-exp", "phi_gamma": 0.1, "rho": "pseudo-huber"}
    ],
    "hyper_grid": [0.1, 0.5],
    "epochs": 3,
    "batch_size": 16,
    "trials": 2,
    "base_seed": 7,
    "eval_epochs": [2]
  })";
}

bool rows_equal(const std::vector<RecordRow>& a, const std::vector<RecordRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].method != b[i].method || a[i].hyper != b[i].hyper ||
        a[i].trial != b[i].trial || a[i].epoch != b[i].epoch ||
        a[i].split != b[i].split || a[i].metric != b[i].metric ||
        a[i].value != b[i].value) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("config parsing applies defaults and rejects unknown keys") {
  const ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  CHECK(cfg.epochs == 3);
  CHECK(cfg.data.class_separation == 3.0);       // default
  CHECK(cfg.data.train_fraction == 0.8);          // default
  CHECK(cfg.schedule.initial_lr == 0.03);         // default
  CHECK(cfg.schedule.momentum == 0.9);            // default
  CHECK(cfg.methods.size() == 2);
  CHECK(cfg.methods[1].phi_gamma == 0.1);
  CHECK(cfg.methods[1].rho_kind == RhoKind::PseudoHuber);
  CHECK(cfg.methods[1].theta_mode == ThetaMode::Fixed);  // default strategy

  CHECK_THROWS_AS(parse_experiment_config(R"({"data": {}, "mdoel": {}})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      parse_experiment_config(
          R"({"data": {"num_classes":2,"input_dim":3,"samples":60,"typo_key":1},
              "model": {"architecture":"linear"}, "methods":[{"name":"erm"}]})"),
      std::invalid_argument);
  CHECK_THROWS_AS(
      parse_experiment_config(
          R"({"data": {"num_classes":2,"input_dim":3,"samples":60},
              "model": {"architecture":"linear"},
              "methods":[{"name":"erm"},{"name":"erm"}]})"),
      std::invalid_argument);
  // sharpdro cannot train on drift-mode (clean, stateless-in-effect) data.
  CHECK_THROWS_AS(
      parse_experiment_config(
          R"({"data": {"num_classes":2,"input_dim":3,"samples":60,"drift_mode":true},
              "model": {"architecture":"linear"},
              "methods":[{"name":"sharpdro"}]})"),
      std::invalid_argument);
  // coce requires a phi kind.
  CHECK_THROWS_AS(
      parse_experiment_config(
          R"({"data": {"num_classes":2,"input_dim":3,"samples":60},
              "model": {"architecture":"linear"},
              "methods":[{"name":"coce"}]})"),
      std::invalid_argument);
}

TEST_CASE("record counting: erm runs once per trial, others per grid point") {
  const ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  const std::vector<TrialRecord> records = run_experiment(cfg);
  CHECK(records.size() == 2 * (1 + 2));  // trials * (erm + coce * grid)

  int erm_cells = 0, coce_cells = 0;
  for (const TrialRecord& r : records) {
    if (r.method == "erm") {
      ++erm_cells;
      CHECK(!r.hyper.has_value());
    } else {
      ++coce_cells;
      CHECK(r.hyper.has_value());
    }
    CHECK(!r.failed);
    // eval_epochs {2} plus the final epoch 3.
    REQUIRE(r.evals.size() == 2);
    CHECK(r.evals[0].epoch == 2);
    CHECK(r.evals[1].epoch == 3);
  }
  CHECK(erm_cells == 2);
  CHECK(coce_cells == 4);
}

TEST_CASE("identical configs produce identical rows; cells re-run exactly") {
  const ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  const std::vector<RecordRow> rows1 = to_rows(run_experiment(cfg));
  const std::vector<RecordRow> rows2 = to_rows(run_experiment(cfg));
  CHECK(rows_equal(rows1, rows2));

  // Re-run one cell in isolation and compare its rows against the sweep.
  const TrialRecord cell = run_cell(cfg, 1, cfg.methods[1], 0.5);
  const std::vector<RecordRow> cell_rows = to_rows({cell});
  std::vector<RecordRow> from_sweep;
  for (const RecordRow& r : rows1) {
    if (r.method == cell_rows[0].method && r.hyper == cell_rows[0].hyper &&
        r.trial == 1) {
      from_sweep.push_back(r);
    }
  }
  CHECK(rows_equal(cell_rows, from_sweep));
}

TEST_CASE("batch order is a pure function of trial seed and epoch") {
  const std::vector<int> a = epoch_batch_order(7, 3, 50);
  const std::vector<int> b = epoch_batch_order(7, 3, 50);
  CHECK(a == b);
  CHECK(a != epoch_batch_order(7, 4, 50));
  CHECK(a != epoch_batch_order(8, 3, 50));
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("model selection: argmax validation accuracy, earliest on ties") {
  TrialRecord rec;
  const auto eval_with = [](int epoch, double val_acc) {
    EpochEval e;
    e.epoch = epoch;
    e.val.average_accuracy = val_acc;
    return e;
  };
  rec.evals = {eval_with(50, 0.5), eval_with(150, 0.9), eval_with(200, 0.7)};
  CHECK(select_model(rec) == 150);
  rec.evals = {eval_with(50, 0.8), eval_with(150, 0.8), eval_with(200, 0.8)};
  CHECK(select_model(rec) == 50);
  rec.evals = {eval_with(50, 0.1), eval_with(150, 0.2), eval_with(200, 0.3)};
  CHECK(select_model(rec) == 200);
  rec.evals.clear();
  CHECK(select_model(rec) == -1);
}

TEST_CASE("summary statistics over trials") {
  // Two synthetic trials of one method at one hyperparameter.
  std::vector<TrialRecord> records;
  for (int trial = 0; trial < 2; ++trial) {
    TrialRecord r;
    r.method = "m";
    r.hyper = 0.1;
    r.trial = trial;
    EpochEval e;
    e.epoch = 5;
    e.val.average_accuracy = 0.9;
    e.test.average_accuracy = trial == 0 ? 0.7 : 0.9;
    e.test.balanced_accuracy = trial == 0 ? 0.6 : 0.8;
    e.test.average_loss = 1.0;
    e.test.param_l2 = 2.0;
    r.evals.push_back(e);
    r.selected_epoch = 5;
    records.push_back(r);
  }
  const std::vector<SummaryRow> summary = summarize(to_rows(records));
  bool found_acc = false, found_bal = false;
  for (const SummaryRow& row : summary) {
    if (row.metric == "average_accuracy") {
      found_acc = true;
      CHECK(row.mean == doctest::Approx(0.8));
      CHECK(row.stddev == doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));
      CHECK(row.trials == 2);
      CHECK(!row.single_trial);
    }
    if (row.metric == "balanced_accuracy") {
      found_bal = true;
      CHECK(row.mean == doctest::Approx(0.7));
    }
  }
  CHECK(found_acc);
  CHECK(found_bal);

  // A single trial reports zero deviation and a flag.
  records.pop_back();
  const std::vector<SummaryRow> single = summarize(to_rows(records));
  for (const SummaryRow& row : single) {
    CHECK(row.stddev == 0.0);
    CHECK(row.single_trial);
  }
}

TEST_CASE("records csv round trip") {
  const ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  ExperimentConfig small = cfg;
  small.trials = 1;
  const std::vector<RecordRow> rows = to_rows(run_experiment(small));
  const std::string path = "test_records.csv";
  write_records_csv(path, rows);
  const std::vector<RecordRow> loaded = read_records_csv(path);
  CHECK(rows_equal(rows, loaded));
  std::remove(path.c_str());
}

TEST_CASE("config echo reports resolved defaults") {
  const ExperimentConfig cfg = parse_experiment_config(tiny_config_json());
  const std::string echo = config_echo_json(cfg);
  CHECK(echo.find("\"epochs\": 3") != std::string::npos);
  CHECK(echo.find("\"train_fraction\": 0.8") != std::string::npos);
  CHECK(echo.find("\"momentum\": 0.9") != std::string::npos);
  CHECK(echo.find("\"test_samples\": 20") != std::string::npos);
  // The resolved eval epochs include the final epoch.
  CHECK(echo.find("\"eval_epochs\": [\n    2,\n    3\n  ]") != std::string::npos);
}

TEST_CASE("drift-mode experiment evaluates balanced accuracy on the test split") {
  ExperimentConfig cfg = parse_experiment_config(tiny_config_json(true));
  cfg.trials = 1;
  cfg.hyper_grid = {0.1};
  const std::vector<TrialRecord> records = run_experiment(cfg);
  for (const TrialRecord& r : records) {
    REQUIRE(!r.evals.empty());
    CHECK(r.evals.back().test.balanced_accuracy.has_value());
    // Training data is clean in drift mode: one observed state.
    CHECK(r.evals.back().train.per_state_error.size() == 1);
  }
}
