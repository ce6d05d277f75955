#pragma once

#include <map>
#include <set>
#include <unordered_map>
#include <utility>
#include <vector>

#include "totsim/policy.hpp"
#include "totsim/tree.hpp"

namespace totsim {

// ============================================================================
// Speculative selection: predict future expansions before rewards arrive
// ============================================================================

/** One planned speculative expansion: a new child of `node`, expected to be
 *  the `predicted_distance`-th future primary selection. */
struct SpecTarget {
  NodeId node = kNoNode;
  int predicted_distance = 0;
};

struct SpeculationPlan {
  std::vector<SpecTarget> targets;
  double created_at = 0.0;
};

/** Per-query bookkeeping for outstanding and resolved speculation. */
struct SpeculationLedger {
  std::set<NodeId> active_expansions;            // speculative children mid-generation
  std::map<NodeId, double> completed_speculations;  // scored, awaiting reuse
  std::map<NodeId, int> predicted_distance;
  std::set<NodeId> resolved;
  std::map<int, int> hits_by_distance;
  std::map<int, int> misses_by_distance;
  int cancelled_inflight = 0;  // excluded from the hit-rate denominator
};

/**
 * Copy-on-write view of (visits, value) over a frozen tree. Simulated
 * selection mutates only this overlay; the live tree never changes.
 */
class TreeSnapshot {
 public:
  explicit TreeSnapshot(const SearchTree& tree) : tree_(&tree) {}

  const SearchTree& tree() const { return *tree_; }
  int visits(NodeId id) const;
  double value(NodeId id) const;

  /** Visits +1 along root..leaf; values untouched. */
  void bump_path(NodeId leaf);

  /** Visits +1 on one node only. */
  void bump_node(NodeId id);

  /** One simulated backpropagation: visits +1 and running-mean value update. */
  void backprop_path(NodeId leaf, double reward);

 private:
  struct Stat {
    int visits;
    double value;
  };
  Stat stat(NodeId id) const;

  const SearchTree* tree_;
  std::unordered_map<NodeId, Stat> overlay_;
};

/** Walk budget per simulated selection before giving up on the pass. */
inline constexpr int kSpeculationWalkGuard = 4096;

/**
 * The node the primary policy would expand next, computed on the snapshot.
 *
 * The selection walk mirrors the live policy. Encounters that cannot yield a
 * fresh expansion advance the simulation instead of blocking it:
 *  - an unscored speculative or still-generating node gets a visit bump along
 *    its path (the walk assumes the primary will pass through it);
 *  - a scored speculative child has its stored reward incorporated as one
 *    simulated backpropagation, refining later picks;
 *  - terminal leaves get a simulated revisit bump.
 * Throws NothingExpandable when no fresh expansion is reachable within
 * kSpeculationWalkGuard walks.
 *
 * Encounters that end a simulated rollout (a terminal revisit or adoption, a
 * wait on invisible in-flight work, a dead end) absorb one future rollout;
 * when `consumed` is given it is incremented per absorbed rollout, so a
 * caller can convert plan positions into rollout ordinals. Passing through
 * nonterminal speculative work stays within the same simulated rollout.
 */
NodeId simulate_next(TreeSnapshot& snap, const PolicyConfig& cfg, int* consumed = nullptr);

/**
 * Plan up to k speculative expansions for a DFS-family search. Planning runs
 * on a private copy of the tree: each accepted target materializes as a
 * phantom in-flight child with a visit bump (the visit-only effect of
 * selecting it), so later steps see exactly the structure a real run of k
 * reward-free iterations would see. Target t's child slot is the parent's
 * next free slot after targets 1..t-1. May return fewer than k targets.
 */
SpeculationPlan dfs_speculative_select(const SearchTree& tree, const SpeculationLedger& ledger,
                                       int k, const PolicyConfig& cfg);

struct FrontierEntry {
  NodeId node = kNoNode;
  double reward = 0.0;
  bool finished = false;
};

/**
 * BFS speculation: the budget equals the number of finished entries and is
 * split over the finished entries by the same softmax width rule the policy
 * itself uses, in sum-preserving mode. Returns (node, width) pairs for
 * finished entries only.
 */
std::vector<std::pair<NodeId, int>> bfs_speculative_allocate(
    const std::vector<FrontierEntry>& frontier_status, const PolicyConfig& cfg);

struct VerifyResult {
  std::vector<NodeId> hits;
  std::vector<NodeId> misses;
};

/**
 * Split predicted nodes into hits (also wanted by the actual expansion) and
 * misses (caller prunes these). Order of `predicted` is preserved.
 */
VerifyResult verify_bfs_speculation(const std::vector<NodeId>& predicted,
                                    const std::vector<NodeId>& actual);

/**
 * Record the final fate of one speculative node at its predicted distance.
 * Throws UnknownSpeculation on a node never speculated or already recorded.
 */
void record_outcome(SpeculationLedger& ledger, NodeId node, bool hit, int distance);

}  // namespace totsim
