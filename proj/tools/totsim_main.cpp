#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "totsim/config.hpp"
#include "totsim/errors.hpp"
#include "totsim/experiment.hpp"
#include "totsim/policy.hpp"
#include "totsim/trace.hpp"

namespace {

using namespace totsim;

struct CommonOpts {
  std::string config_path;
  std::string out_path;
  std::string format = "csv";
  std::string flags_csv;
  std::uint64_t seed = 0;
  bool baseline_only = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "experiment config file (JSON)")->required();
  cmd->add_option("--seed", o.seed, "override the config seed");
  cmd->add_option("--out", o.out_path, "report file (stdout when omitted)");
  cmd->add_option("--format", o.format, "report format")
      ->check(CLI::IsMember({"csv", "json"}));
  cmd->add_option("--flags", o.flags_csv,
                  "techniques to enable, e.g. t1,t2,t3 (overrides the config)");
  cmd->add_flag("--baseline-only", o.baseline_only, "run with every technique off");
}

ExperimentConfig load(const CLI::App* cmd, const CommonOpts& o) {
  ExperimentConfig cfg = ExperimentConfig::from_file(o.config_path);
  if (cmd->count("--seed") > 0) cfg.seed = o.seed;
  if (cmd->count("--flags") > 0) cfg.flags = flags_from_string(o.flags_csv);
  if (o.baseline_only) cfg.flags = SpexFlags{};
  return cfg;
}

void write_log(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::IoFailure, "cannot open " + path);
  for (const std::string& l : lines) f << l << "\n";
  f.flush();
  if (!f) throw Error(Errc::IoFailure, "short write to " + path);
}

std::vector<int> parse_batches(const std::string& csv) {
  std::vector<int> out;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (cur.empty()) continue;
      try {
        out.push_back(std::stoi(cur));
      } catch (const std::exception&) {
        throw Error(Errc::ConfigInvalid, "batches: not an integer: " + cur);
      }
      if (out.back() < 1) throw Error(Errc::ConfigInvalid, "batches: must be >= 1");
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (out.empty()) throw Error(Errc::ConfigInvalid, "batches: empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"simulated speculative tree search over a batched decode server"};
  app.require_subcommand(1);

  CommonOpts run_o;
  std::string run_log_path;
  CLI::App* run_cmd = app.add_subcommand("run", "run one experiment, report aggregate metrics");
  add_common(run_cmd, run_o);
  run_cmd->add_option("--log", run_log_path, "also write the repetition-0 event log (JSON lines)");

  CommonOpts sweep_o;
  std::string batches_csv = "1,2,4,8";
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "run the config across a batch-size grid");
  add_common(sweep_cmd, sweep_o);
  sweep_cmd->add_option("--batches", batches_csv, "comma list of batch sizes (default 1,2,4,8)");

  std::string replay_path;
  CLI::App* replay_cmd =
      app.add_subcommand("replay", "re-execute an event log and verify it");
  replay_cmd->add_option("log", replay_path, "event log file (JSON lines)")->required();

  CommonOpts validate_o;
  CLI::App* validate_cmd = app.add_subcommand("validate", "check a config file and exit");
  validate_cmd->add_option("--config", validate_o.config_path, "experiment config file (JSON)")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad invocation is a configuration problem
  }

  try {
    if (*run_cmd) {
      const ExperimentConfig cfg = load(run_cmd, run_o);
      const ExperimentResult res = run_experiment_full(cfg);
      if (!run_log_path.empty()) write_log(run_log_path, res.treatment_log);
      ReportRow row;
      row.algorithm = family_name(cfg.family);
      row.config = cfg.flags.to_string();
      row.batch = cfg.batch_size;
      row.seed = cfg.seed;
      row.metrics = res.metrics;
      emit_report({row}, run_o.format, run_o.out_path);
    } else if (*sweep_cmd) {
      const ExperimentConfig cfg = load(sweep_cmd, sweep_o);
      const std::vector<ReportRow> rows = run_sweep(cfg, parse_batches(batches_csv));
      emit_report(rows, sweep_o.format, sweep_o.out_path);
    } else if (*replay_cmd) {
      const ReplayReport rep = replay_log(read_trace(replay_path));
      if (!rep.ok) {
        for (const std::string& p : rep.problems) std::cerr << "replay: " << p << "\n";
        return 3;
      }
      std::cout << "replay ok: " << rep.queries << " queries, makespan " << rep.makespan
                << ", generated " << rep.generated << " = committed " << rep.committed
                << " + reused " << rep.reused << " + wasted " << rep.wasted << "\n";
    } else if (*validate_cmd) {
      ExperimentConfig::from_file(validate_o.config_path);
      std::cout << "config ok\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::ConfigInvalid ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
