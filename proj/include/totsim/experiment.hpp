#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "totsim/config.hpp"
#include "totsim/executor.hpp"
#include "totsim/metrics.hpp"
#include "totsim/trace.hpp"

namespace totsim {

// ============================================================================
// Experiment harness: repetitions, aggregation, reports
// ============================================================================

/** One executed run: its totals and its full event log. */
struct RunOutcome {
  RunTotals totals;
  std::vector<std::string> log;
};

/** Execute a single run with an explicit seed and flag set. */
RunOutcome run_once(const ExperimentConfig& cfg, std::uint64_t seed, const SpexFlags& flags);

/**
 * Full experiment: every repetition runs the configured flag set and a
 * flagless baseline under the same seed, then the pairs aggregate to mean
 * and standard deviation. With no flags set the baseline is the run, and
 * speedup is exactly 1. Repetitions may execute in parallel workers;
 * aggregation order is fixed by repetition index.
 */
struct ExperimentResult {
  RunMetrics metrics;
  std::vector<std::string> treatment_log;  // event log of repetition 0
  std::vector<std::string> baseline_log;   // baseline log of repetition 0
};
ExperimentResult run_experiment_full(const ExperimentConfig& cfg);

/** As run_experiment_full, metrics only. */
RunMetrics run_experiment(const ExperimentConfig& cfg);

/**
 * Tokens that speculation saved on the run's critical path: the sum of
 * promoted-and-kept tokens that were ready before adoption, over the query
 * that finished last. Throws IncompleteLog on a truncated log.
 */
long long compute_critical_path_savings(const std::vector<nlohmann::ordered_json>& log);

/** One report row: an aggregated experiment at one batch size. */
struct ReportRow {
  std::string algorithm;
  std::string config;  // flag set, e.g. "t1+t2+t3" or "baseline"
  int batch = 1;
  std::uint64_t seed = 0;
  RunMetrics metrics;
};

/** Batch-size grid over one config: one aggregated row per batch value. */
std::vector<ReportRow> run_sweep(const ExperimentConfig& cfg, const std::vector<int>& batches);

/**
 * Write rows as CSV (documented column order) or JSON. An empty path writes
 * to stdout. Output is byte-stable for fixed input. Throws IoFailure.
 */
void emit_report(const std::vector<ReportRow>& rows, const std::string& format,
                 const std::string& path);

/**
 * Re-execute the run recorded in `log` from its embedded config and seed,
 * compare the regenerated log line by line, and run the conservation and
 * lifecycle checks on the recorded log. Returns the replay report with any
 * mismatch listed in `problems`.
 */
ReplayReport replay_log(const std::vector<nlohmann::ordered_json>& log);

}  // namespace totsim
