#pragma once

#include <array>
#include <cstdint>
#include <memory>

#include "totsim/config.hpp"
#include "totsim/trace.hpp"

namespace totsim {

// ============================================================================
// Producer-consumer executor: one full search run over the simulated server
// ============================================================================

/** Distance histogram size; longer predictions clamp into the last bucket. */
inline constexpr int kMaxTrackedDistance = 8;

/** Aggregate outcome of one run (one seed, one flag setting). */
struct RunTotals {
  double makespan = 0.0;
  long long generated_tokens = 0;
  long long committed_tokens = 0;
  long long reused_tokens = 0;
  long long wasted_tokens = 0;
  std::array<long long, kMaxTrackedDistance + 1> hits{};    // index 1..8
  std::array<long long, kMaxTrackedDistance + 1> misses{};  // index 1..8
  int queries = 0;
  int correct_votes = 0;
  int early_terminated = 0;

  long long useful_tokens() const { return committed_tokens + reused_tokens; }
};

/**
 * Drives a batch of tree searches against the decode engine until every
 * admitted query has voted. The consumer loop is the single writer: stream
 * completions and reward arrivals are drained in timestamp order, each
 * follow-up request is issued in the same consumer step that freed it, and
 * speculative work fills whatever producer slots the roofline bound leaves
 * idle. Identical (config, seed, flags) inputs give identical event logs.
 */
class Executor {
 public:
  /**
   * `active` overrides the flag set in `cfg` (so one config can run both as
   * baseline and as treatment). `trace` may be null; when given, the full
   * event log is emitted to it.
   */
  Executor(const ExperimentConfig& cfg, std::uint64_t run_seed, const SpexFlags& active,
           TraceWriter* trace);
  ~Executor();

  Executor(const Executor&) = delete;
  Executor& operator=(const Executor&) = delete;

  /** Run to completion. Call once. */
  RunTotals run();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace totsim
