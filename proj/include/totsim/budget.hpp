#pragma once

#include <vector>

#include "totsim/errors.hpp"

namespace totsim {

// ----------------------------------------------------------------------------
// Inter-query speculation budgeting from a roofline cost model
// ----------------------------------------------------------------------------

struct HardwareProfile {
  double weight_bytes = 14e9;        // model weights resident per step (B)
  double mem_bandwidth = 7e11;       // HBM bandwidth (B/s)
  double peak_compute = 1e14;        // peak throughput (FLOP/s)
  double flops_per_token = 14e9;     // decode cost per token (FLOP)
  double kv_bytes_per_token = 0.0;   // cache traffic per cached token (B)
  double reward_latency = 0.1;       // scorer round-trip (virtual s)

  void validate() const;
};

enum class QueryPhase { Running, Draining, Finished };

/** Scheduler-visible state of one in-flight query. */
struct QueryState {
  int query_id = 0;
  QueryPhase phase = QueryPhase::Running;
  int capacity = 0;          // C_q: distinct speculatable expansions right now
  double hit_ema = 0.5;      // P_q: EMA of speculation hit rate
  double kv_bytes = 0.0;     // live branch cache footprint
  int pending_speculations = 0;
};

/**
 * Total speculative slack: smallest batch B* at which the step turns
 * compute-bound, minus the currently active batch. Returns `cap` when the
 * profile never becomes compute-bound (kv traffic growing as fast as compute).
 */
[[nodiscard]] int roofline_k_total(const HardwareProfile& hw, int active_batch,
                                   double avg_kv_bytes = 0.0, int cap = 1024);

/** Utility of granting this query speculative slots: C_q * P_q * saved bytes. */
[[nodiscard]] double query_score(const QueryState& q, const HardwareProfile& hw);

/**
 * Split k_total across queries: scores are min-max normalised, shares follow
 * exp(tau * score), each query is capped by its capacity, and floor leftovers
 * go one at a time to the highest-scoring queries with capacity to spare.
 */
[[nodiscard]] std::vector<int> allocate_budgets(const std::vector<QueryState>& queries,
                                                int k_total, double tau,
                                                const HardwareProfile& hw);

/** EMA update for the query's speculation hit rate. */
void update_hit_rate(QueryState& q, bool hit, double alpha = 0.2);

}  // namespace totsim
