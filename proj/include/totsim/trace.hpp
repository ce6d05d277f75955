#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace totsim {

// ============================================================================
// Event-log trace: JSON-lines emission and independent replay validation
// ============================================================================
//
// One record per line, keys in a fixed order, so identical runs produce
// byte-identical logs. Event kinds:
//
//   run_begin  {t, ev, seed, config}
//   admit      {t, ev, q, seed}
//   node       {t, ev, q, node, parent, slot, spec, tokens, terminal}
//   req        {t, ev, q, node, stream, spec, dist}
//   done       {t, ev, q, node, stream, tokens, cancelled, stale}
//   reward     {t, ev, q, node, r}
//   promote    {t, ev, q, node, ready, dist}
//   prune      {t, ev, q, node, count}
//   answer     {t, ev, q, node, label, weight, correct}
//   terminate  {t, ev, q, label, answers}
//   query_done {t, ev, q, label, correct, answers, early}
//   run_end    {t, ev, makespan, generated, committed, reused, wasted, queries}

/** Sink for trace records; writes to a file, a memory buffer, or both. */
class TraceWriter {
 public:
  static TraceWriter to_file(const std::string& path);
  static TraceWriter to_memory();

  void emit(const nlohmann::ordered_json& record);
  void flush();

  /** Lines captured so far (memory mode only; empty in file mode). */
  const std::vector<std::string>& lines() const { return lines_; }

 private:
  TraceWriter() = default;
  std::ofstream file_;
  bool to_file_ = false;
  bool keep_lines_ = false;
  std::vector<std::string> lines_;
};

/** Read a JSON-lines trace file. Throws IoFailure on open failure and
 *  IncompleteLog on an empty file or a malformed line. */
std::vector<nlohmann::ordered_json> read_trace(const std::string& path);

std::vector<nlohmann::ordered_json> parse_trace_lines(const std::vector<std::string>& lines);

struct ReplayReport {
  bool ok = true;
  std::vector<std::string> problems;
  long long generated = 0;
  long long committed = 0;
  long long reused = 0;
  long long wasted = 0;
  int queries = 0;
  double makespan = 0.0;
};

/**
 * Replay a trace against the node lifecycle rules and the token-conservation
 * identity, without consulting the executor that produced it. Verified:
 *  - structure: run_begin first, run_end last, timestamps non-decreasing;
 *  - every status change implied by node/done/reward/promote/prune events is
 *    legal under the tree module's transition table;
 *  - prune counts match the declared subtree, and pruned nodes stay silent
 *    apart from late cancelled completions;
 *  - generated == committed + reused + wasted, recomputed from events, and
 *    the run_end record agrees with the recomputation.
 * Problems are collected (up to a cap) rather than thrown.
 */
ReplayReport validate_trace(const std::vector<nlohmann::ordered_json>& events);

}  // namespace totsim
