#include "totsim/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "totsim/errors.hpp"
#include "totsim/rng.hpp"

namespace totsim {

RunOutcome run_once(const ExperimentConfig& cfg, std::uint64_t seed, const SpexFlags& flags) {
  TraceWriter w = TraceWriter::to_memory();
  Executor ex(cfg, seed, flags, &w);
  RunOutcome out;
  out.totals = ex.run();
  out.log = w.lines();
  return out;
}

namespace {

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double stddev_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double mu = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

}  // namespace

ExperimentResult run_experiment_full(const ExperimentConfig& cfg) {
  cfg.validate();
  const int reps = cfg.repetitions;

  struct Pair {
    RunOutcome treatment;
    RunOutcome baseline;
  };
  std::vector<Pair> pairs(reps);
  std::vector<std::string> errors(reps);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (reps > 1)
#endif
  for (int r = 0; r < reps; ++r) {
    try {
      const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(r);
      Pair p;
      p.treatment = run_once(cfg, seed, cfg.flags);
      if (cfg.flags.any()) {
        p.baseline = run_once(cfg, seed, SpexFlags{});
      } else {
        p.baseline = p.treatment;  // the run is its own baseline
      }
      pairs[r] = std::move(p);
    } catch (const std::exception& e) {
      errors[r] = e.what();
    }
  }
  for (int r = 0; r < reps; ++r)
    if (!errors[r].empty())
      throw Error(Errc::InvalidArgument,
                  "repetition " + std::to_string(r) + " failed: " + errors[r]);

  RunMetrics m;
  m.repetitions = reps;
  std::vector<double> makespans, speedups, throughputs;
  long long hits[kHitDistances + 1] = {0};
  long long misses[kHitDistances + 1] = {0};
  long long queries_total = 0, correct_total = 0, early_total = 0;
  for (const Pair& p : pairs) {
    const RunTotals& t = p.treatment.totals;
    const RunTotals& b = p.baseline.totals;
    makespans.push_back(t.makespan);
    speedups.push_back(cfg.flags.any() ? b.makespan / t.makespan : 1.0);
    throughputs.push_back(60.0 * t.queries / t.makespan);
    m.generated_tokens += t.generated_tokens;
    m.committed_tokens += t.committed_tokens;
    m.reused_tokens += t.reused_tokens;
    m.wasted_tokens += t.wasted_tokens;
    for (int d = 1; d <= kHitDistances; ++d) {
      hits[d] += t.hits[d];
      misses[d] += t.misses[d];
    }
    queries_total += t.queries;
    correct_total += t.correct_votes;
    early_total += t.early_terminated;
  }
  m.makespan = mean_of(makespans);
  m.makespan_stddev = stddev_of(makespans);
  m.speedup = mean_of(speedups);
  m.speedup_stddev = stddev_of(speedups);
  m.throughput = mean_of(throughputs);
  for (int d = 1; d <= kHitDistances; ++d) {
    const long long n = hits[d] + misses[d];
    m.hit_rate_by_distance[d - 1] =
        n == 0 ? -1.0 : static_cast<double>(hits[d]) / static_cast<double>(n);
  }
  m.vote_accuracy =
      queries_total == 0 ? 0.0
                         : static_cast<double>(correct_total) / static_cast<double>(queries_total);
  m.early_termination_rate =
      queries_total == 0 ? 0.0
                         : static_cast<double>(early_total) / static_cast<double>(queries_total);
  m.queries = pairs.empty() ? 0 : pairs.front().treatment.totals.queries;
  m.critical_path_tokens_saved =
      compute_critical_path_savings(parse_trace_lines(pairs.front().treatment.log));
  m.validate();

  ExperimentResult res;
  res.metrics = std::move(m);
  res.treatment_log = std::move(pairs.front().treatment.log);
  res.baseline_log = std::move(pairs.front().baseline.log);
  return res;
}

RunMetrics run_experiment(const ExperimentConfig& cfg) {
  return run_experiment_full(cfg).metrics;
}

long long compute_critical_path_savings(const std::vector<nlohmann::ordered_json>& log) {
  if (log.empty() || log.front().value("ev", "") != "run_begin" ||
      log.back().value("ev", "") != "run_end")
    throw Error(Errc::IncompleteLog, "log must open with run_begin and close with run_end");

  // The critical path belongs to the query that finishes last.
  int crit = -1;
  double crit_t = -1.0;
  bool any_done = false;
  for (const auto& e : log) {
    if (e.value("ev", "") != "query_done") continue;
    any_done = true;
    const double t = e["t"].get<double>();
    if (t > crit_t) {
      crit_t = t;
      crit = e["q"].get<int>();
    }
  }
  if (!any_done) throw Error(Errc::IncompleteLog, "log has no finished query");

  // Saved tokens: promoted-and-kept generations of that query.
  std::map<NodeId, std::vector<NodeId>> children;
  std::map<NodeId, long long> promoted_ready;
  std::vector<NodeId> prune_roots;
  for (const auto& e : log) {
    const std::string ev = e.value("ev", "");
    if (!e.contains("q") || e["q"].get<int>() != crit) continue;
    if (ev == "node") {
      children[e["parent"].get<NodeId>()].push_back(e["node"].get<NodeId>());
    } else if (ev == "promote") {
      promoted_ready[e["node"].get<NodeId>()] = e["ready"].get<long long>();
    } else if (ev == "prune") {
      prune_roots.push_back(e["node"].get<NodeId>());
    }
  }
  std::set<NodeId> dead;
  for (NodeId root : prune_roots) {
    std::vector<NodeId> stack{root};
    while (!stack.empty()) {
      const NodeId x = stack.back();
      stack.pop_back();
      if (!dead.insert(x).second) continue;
      auto it = children.find(x);
      if (it != children.end())
        for (NodeId c : it->second) stack.push_back(c);
    }
  }
  long long saved = 0;
  for (const auto& [node, ready] : promoted_ready)
    if (!dead.count(node)) saved += ready;
  return saved;
}

std::vector<ReportRow> run_sweep(const ExperimentConfig& cfg, const std::vector<int>& batches) {
  std::vector<ReportRow> rows;
  for (int b : batches) {
    ExperimentConfig c = cfg;
    c.batch_size = b;
    ReportRow row;
    row.algorithm = family_name(c.family);
    row.config = c.flags.to_string();
    row.batch = b;
    row.seed = c.seed;
    row.metrics = run_experiment(c);
    rows.push_back(std::move(row));
  }
  return rows;
}

void emit_report(const std::vector<ReportRow>& rows, const std::string& format,
                 const std::string& path) {
  if (format != "csv" && format != "json")
    throw Error(Errc::ConfigInvalid, "format: expected csv or json, got " + format);

  std::string body;
  if (format == "csv") {
    std::ostringstream os;
    os << metrics_csv_header() << "\n";
    for (const ReportRow& r : rows)
      os << metrics_csv_row(r.metrics, r.algorithm, r.config, r.batch, r.seed) << "\n";
    body = os.str();
  } else {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const ReportRow& r : rows) {
      nlohmann::ordered_json j;
      j["algorithm"] = r.algorithm;
      j["config"] = r.config;
      j["batch"] = r.batch;
      j["seed"] = r.seed;
      j["metrics"] = r.metrics.to_json();
      arr.push_back(std::move(j));
    }
    body = arr.dump(2);
    body.push_back('\n');
  }

  if (path.empty()) {
    std::cout << body;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::IoFailure, "cannot open " + path);
  f << body;
  f.flush();
  if (!f) throw Error(Errc::IoFailure, "short write to " + path);
}

ReplayReport replay_log(const std::vector<nlohmann::ordered_json>& log) {
  if (log.empty()) throw Error(Errc::IncompleteLog, "empty log");
  const auto& head = log.front();
  if (head.value("ev", "") != "run_begin" || !head.contains("config") || !head.contains("seed"))
    throw Error(Errc::IncompleteLog, "log does not open with a run_begin record");

  const ExperimentConfig cfg = ExperimentConfig::from_json(head["config"]);
  const std::uint64_t seed = head["seed"].get<std::uint64_t>();
  const RunOutcome redo = run_once(cfg, seed, cfg.flags);
  const std::vector<nlohmann::ordered_json> fresh = parse_trace_lines(redo.log);

  ReplayReport report = validate_trace(log);
  if (fresh.size() != log.size()) {
    report.problems.push_back("re-execution produced " + std::to_string(fresh.size()) +
                              " events, log has " + std::to_string(log.size()));
  } else {
    for (std::size_t i = 0; i < log.size(); ++i) {
      if (fresh[i] != log[i]) {
        report.problems.push_back("event " + std::to_string(i + 1) +
                                  " differs from deterministic re-execution");
        break;
      }
    }
  }
  report.ok = report.problems.empty();
  return report;
}

}  // namespace totsim
