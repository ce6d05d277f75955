#pragma once

#include <cstdint>
#include <queue>
#include <string>
#include <vector>

#include "totsim/budget.hpp"
#include "totsim/tree.hpp"

namespace totsim {

// ============================================================================
// Deterministic inference-server simulation: virtual clock, batched decode
// steps under a roofline cost model, and a content oracle for workloads
// ============================================================================

/** Timed event; FIFO within equal timestamps via the insertion sequence. */
struct SimEvent {
  double time = 0.0;
  std::uint64_t seq = 0;
  int kind = 0;
  int query = -1;
  NodeId node = kNoNode;
  int stream = -1;
};

class SimClock {
 public:
  double now() const { return now_; }
  void advance_to(double t) {
    if (t > now_) now_ = t;
  }
  void push(double time, int kind, int query, NodeId node, int stream = -1);
  bool has_events() const { return !queue_.empty(); }
  double next_time() const;
  SimEvent pop();

 private:
  struct Later {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      if (a.time != b.time) return a.time > b.time;
      return a.seq > b.seq;
    }
  };
  double now_ = 0.0;
  std::uint64_t seq_ = 0;
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> queue_;
};

// ----------------------------------------------------------------------------
// Roofline step cost
// ----------------------------------------------------------------------------

/** One active expansion inside a decode step. */
struct BatchMember {
  const SearchTree* tree = nullptr;
  NodeId node = kNoNode;      // child being generated
  int partial_tokens = 0;     // tokens of it already generated
};

struct StepCost {
  double compute_s = 0.0;
  double memory_s = 0.0;
  double total() const { return compute_s > memory_s ? compute_s : memory_s; }
  bool compute_bound() const { return compute_s >= memory_s; }
};

/** Cache-resident tokens for the batch: each distinct ancestor chain is
 *  counted once (prefix sharing), each member's own partial tokens once. */
long long unique_kv_tokens(const std::vector<BatchMember>& batch);

/** Per-token decode step time: max of compute and memory streams.
 *  Throws EmptyBatch. */
StepCost step_cost(const std::vector<BatchMember>& batch, const HardwareProfile& hw);
double step_latency(const std::vector<BatchMember>& batch, const HardwareProfile& hw);

// ----------------------------------------------------------------------------
// Workload content oracle
// ----------------------------------------------------------------------------

struct WorkloadSpec {
  double token_mu = 4.2485;      // lognormal location; exp(mu) ~ median tokens
  double token_sigma = 0.30;
  int token_min = 8;
  int token_max = 400;

  int shallow_min = 3;           // earliest solution depth for normal branches
  double shallow_p = 0.30;       // per-depth stop probability past shallow_min
  int shallow_max = 9;           // forced solution depth for normal branches
  int deep_min = 11;
  double deep_p = 0.25;
  int deep_max = 18;
  double skew = 0.0;             // probability a root branch is deep-dominant

  double golden_density = 0.55;  // per-child survival of the high-reward set
  double reward_on = 0.8;
  double reward_off = 0.3;
  double noise_sigma = 0.0;

  double correct_base = 0.95;    // answer correctness, decaying with depth
  double correct_slope = 0.07;
  double correct_floor = 0.15;
  int answer_alphabet = 6;
  int prompt_tokens = 32;

  void validate() const;
};

/**
 * Pure content functions for one query. Everything is derived from
 * (query_seed, path) hashes: token counts, terminality, reward, answer label.
 * Identical slots yield identical content no matter who expands them or when.
 */
class RewardOracle {
 public:
  RewardOracle(std::uint64_t query_seed, const WorkloadSpec& wl, int max_depth);

  std::uint64_t query_seed() const { return query_seed_; }

  /** Generated length for a child whose path hash is `child_hash`. */
  int token_len(std::uint64_t child_hash) const;

  /** Whether the node closes its chain with a final answer. */
  bool is_terminal(const SearchTree& tree, NodeId id) const;

  /** Membership in the high-reward region (chained from the root). */
  bool on_golden_path(const SearchTree& tree, NodeId id) const;

  /** Scored reward: region base plus clamped Gaussian noise. */
  double reward(const SearchTree& tree, NodeId id) const;

  std::string answer_label(const SearchTree& tree, NodeId id) const;
  std::string golden_label() const;

 private:
  bool deep_dominant(const SearchTree& tree, NodeId id) const;

  std::uint64_t query_seed_ = 0;
  WorkloadSpec wl_;
  int max_depth_ = 16;
};

struct QueryProfile {
  std::uint64_t seed = 0;
  std::string golden_label;
  int probe_depth = 0;  // solution depth of one seeded random walk
};

/** Derive per-query seeds and reference walks for an n-query workload. */
std::vector<QueryProfile> generate_workload(int n_queries, const WorkloadSpec& wl,
                                            std::uint64_t seed, int max_depth);

// ----------------------------------------------------------------------------
// Batched decode engine
// ----------------------------------------------------------------------------

/**
 * Synchronous batched decoding over a virtual clock. Every active stream
 * advances one token per step; per-step latency follows step_cost for the
 * current membership. Streams join at the first step boundary at or after
 * their ready time and leave when their token budget completes (or one step
 * after cancellation, keeping their partial output).
 */
class DecodeEngine {
 public:
  explicit DecodeEngine(const HardwareProfile& hw) : hw_(hw) {}

  void add_stream(int id, const SearchTree* tree, NodeId node, int tokens, double ready);
  /** Mark a stream for exit at the next step boundary. Returns false when the
   *  stream had not started yet; it is then removed with no completion. */
  bool cancel(int id);
  /** Remove a stream immediately with no completion record (end-of-run cleanup). */
  void drop(int id);
  bool has_work() const { return !active_.empty() || !staged_.empty(); }
  int active_count() const { return static_cast<int>(active_.size()); }
  int stream_count() const { return static_cast<int>(active_.size() + staged_.size()); }
  /** Tokens generated so far by the stream, 0 if unknown. */
  int done_tokens(int id) const;
  double next_ready() const;

  struct Finished {
    int id = -1;
    NodeId node = kNoNode;
    int tokens_done = 0;
    bool cancelled = false;
    double time = 0.0;
  };

  /**
   * Run decode steps with boundaries at or before `limit`. Stops early at the
   * first boundary where a stream finishes (reporting every stream finishing
   * there). Returns the clock position reached.
   */
  double advance(double now, double limit, std::vector<Finished>& out);

 private:
  struct Stream {
    int id = -1;
    const SearchTree* tree = nullptr;
    NodeId node = kNoNode;
    int remaining = 0;
    int done = 0;
    bool cancelled = false;
    double ready = 0.0;
  };

  void refresh_costs();
  double elapsed(int steps) const;
  int steps_within(double budget, int max_steps) const;

  HardwareProfile hw_;
  std::vector<Stream> active_;
  std::vector<Stream> staged_;
  // Cached per-epoch cost series: step i costs max(compute_, mem_a_ + i*mem_d_).
  double compute_ = 0.0;
  double mem_a_ = 0.0;
  double mem_d_ = 0.0;
  bool dirty_ = true;
};

}  // namespace totsim
