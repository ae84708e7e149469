#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "coce/checks.hpp"
#include "coce/data.hpp"
#include "coce/harness.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 1;
constexpr int kExitRuntimeFailure = 2;

int cmd_run(const std::string& config_path, const std::string& out_dir) {
  const coce::ExperimentConfig cfg = coce::load_experiment_config(config_path);
  fs::create_directories(out_dir);

  {
    std::ofstream echo(fs::path(out_dir) / "config-echo.json");
    echo << coce::config_echo_json(cfg);
  }

  const std::vector<coce::TrialRecord> records = coce::run_experiment(cfg);
  const std::vector<coce::RecordRow> rows = coce::to_rows(records);
  coce::write_records_csv((fs::path(out_dir) / "records.csv").string(), rows);
  coce::write_summary_csv((fs::path(out_dir) / "summary.csv").string(),
                          coce::summarize(rows));
  coce::write_timings_csv((fs::path(out_dir) / "timings.csv").string(), records);

  int failed = 0;
  for (const coce::TrialRecord& r : records) failed += r.failed ? 1 : 0;
  std::cout << "wrote " << rows.size() << " rows for " << records.size()
            << " cells to " << out_dir << "\n";
  if (failed > 0) {
    std::cerr << failed << " cell(s) failed; see timings.csv and stderr log\n";
    return kExitRuntimeFailure;
  }
  return kExitOk;
}

int cmd_summarize(const std::string& dir) {
  const auto rows =
      coce::read_records_csv((fs::path(dir) / "records.csv").string());
  const auto summary = coce::summarize(rows);
  coce::write_summary_csv((fs::path(dir) / "summary.csv").string(), summary);
  for (const coce::SummaryRow& r : summary) {
    std::cout << r.method << (r.hyper.empty() ? "" : " @" + r.hyper) << "  "
              << r.metric << " = " << r.mean << " +/- " << r.stddev << "  (n="
              << r.trials << (r.failed_trials ? ", failed=" + std::to_string(r.failed_trials) : "")
              << ")\n";
  }
  return kExitOk;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_csv) {
  const coce::ExperimentConfig cfg = coce::load_experiment_config(config_path);
  const coce::GeneratedData data = coce::generate_dataset(cfg.data);

  const fs::path base(out_csv);
  const std::string stem = (base.parent_path() / base.stem()).string();
  const std::string ext = base.extension().empty() ? ".csv" : base.extension().string();
  coce::save_csv(data.train, stem + ".train" + ext);
  coce::save_csv(data.val, stem + ".val" + ext);
  coce::save_csv(data.test, stem + ".test" + ext);
  std::cout << "wrote " << data.train.size() << "/" << data.val.size() << "/"
            << data.test.size() << " examples to " << stem << ".{train,val,test}"
            << ext << "\n";
  return kExitOk;
}

int cmd_check() {
  const std::vector<coce::CheckResult> results = coce::run_all_checks(1);
  bool all_pass = true;
  for (const coce::CheckResult& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail
              << "\n";
    all_pass = all_pass && r.pass;
  }
  return all_pass ? kExitOk : kExitRuntimeFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cocelab: concentration-penalized robust-training laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string records_dir;
  std::string gen_config;
  std::string gen_out;

  CLI::App* run = app.add_subcommand("run", "run an experiment sweep");
  run->add_option("config", config_path, "experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "output directory")->required();

  CLI::App* summ = app.add_subcommand("summarize", "rebuild summary.csv from records.csv");
  summ->add_option("dir", records_dir, "directory containing records.csv")->required();

  CLI::App* gen = app.add_subcommand("gen-data", "generate a dataset and write CSVs");
  gen->add_option("config", gen_config, "experiment config (JSON)")->required();
  gen->add_option("--out", gen_out, "output CSV path (train/val/test suffixes added)")
      ->required();

  CLI::App* check = app.add_subcommand("check", "run the invariant and oracle suite");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir);
    if (summ->parsed()) return cmd_summarize(records_dir);
    if (gen->parsed()) return cmd_gen_data(gen_config, gen_out);
    if (check->parsed()) return cmd_check();
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeFailure;
  }
  return kExitOk;
}
