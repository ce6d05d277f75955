#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "totsim/errors.hpp"

namespace totsim {

// ============================================================================
// Thought tree: shared node store for every search family
// ============================================================================

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = static_cast<NodeId>(-1);

/**
 * Lifecycle of a node. Primary expansions move down the left column,
 * speculative ones live in the right column until promoted or discarded:
 *
 *   PendingExpansion -> Expanding -> AwaitingReward -> Committed
 *                                                   -> TerminalAnswer
 *   Speculative -> SpeculativeDone -> Committed | TerminalAnswer  (promote)
 *   Speculative -> Expanding | AwaitingReward                     (promote)
 *   any -> Pruned
 */
enum class NodeStatus : std::uint8_t {
  PendingExpansion,
  Expanding,
  AwaitingReward,
  Committed,
  Speculative,
  SpeculativeDone,
  Pruned,
  TerminalAnswer,
};

const char* status_name(NodeStatus s);

/** True when the machine above allows `from -> to`. */
bool transition_legal(NodeStatus from, NodeStatus to);

struct ThoughtNode {
  NodeId id = kNoNode;
  NodeId parent = kNoNode;
  int depth = 0;
  int slot = 0;                    // index within parent's child list
  int token_len = 0;
  std::optional<double> reward;    // set once the scorer has run
  double value = 0.0;              // running mean of propagated rewards
  int visits = 0;
  NodeStatus status = NodeStatus::Committed;
  bool speculative_origin = false; // issued by the speculative scheduler
  bool gen_done = false;           // content fully generated
  bool terminal = false;
  std::optional<std::string> answer_label;
  std::optional<double> answer_weight;
  std::uint64_t path_hash = 0;
  std::vector<NodeId> children;
};

/**
 * Append-only tree with tombstoning. Ids are dense vector indices, assigned
 * monotonically and never reused after pruning.
 */
class SearchTree {
 public:
  explicit SearchTree(int prompt_tokens = 0, std::uint64_t query_seed = 0);

  NodeId root() const { return 0; }
  int prompt_tokens() const { return prompt_tokens_; }
  std::uint64_t query_seed() const { return query_seed_; }

  std::size_t size() const { return nodes_.size(); }
  bool contains(NodeId id) const { return id < nodes_.size(); }

  const ThoughtNode& node(NodeId id) const;
  ThoughtNode& node(NodeId id);

  /**
   * Create a child of `parent` with the given generated length. Speculative
   * children start in Speculative, primary ones in Expanding.
   * Throws UnknownParent / ParentPruned.
   */
  NodeId add_node(NodeId parent, int token_len, bool speculative);

  /** As add_node(speculative=false) but starting in PendingExpansion. */
  NodeId add_pending_node(NodeId parent, int token_len);

  /**
   * Adopt a speculative node into the primary search. The target status
   * depends on how far generation and scoring have progressed; the stored
   * reward is kept. Throws NotSpeculative for non-speculative nodes.
   */
  void promote(NodeId id);

  /**
   * Tombstone `id` and every non-pruned descendant. Returns the number of
   * nodes newly pruned. The caller is responsible for cancelling any
   * in-flight generation for the pruned set.
   */
  int prune_subtree(NodeId id);

  /** Guarded status change; throws IllegalTransition. */
  void set_status(NodeId id, NodeStatus to);

  /** Tokens on the path root..id inclusive (root carries the prompt). */
  long long prefix_tokens(NodeId id) const;

  /** Tokens of the path root..parent(id): the prefix a sibling batch reuses. */
  long long shared_prefix_tokens(NodeId id) const;

  /** Slot path from root to `id` (root excluded). */
  std::vector<int> slot_path(NodeId id) const;

  /** Count of nodes currently holding TerminalAnswer status. */
  int terminal_answer_count() const;

  /** Non-pruned children of `id`, in slot order. */
  std::vector<NodeId> live_children(NodeId id) const;

  // BFS bookkeeping: the set of same-depth nodes the policy expands next.
  const std::vector<NodeId>& frontier() const { return frontier_; }
  void set_frontier(std::vector<NodeId> f) { frontier_ = std::move(f); }

  /** Debug snapshot of the whole tree as a JSON string. */
  std::string snapshot_json() const;

 private:
  void check_known(NodeId id) const;

  std::vector<ThoughtNode> nodes_;
  std::vector<NodeId> frontier_;
  int prompt_tokens_ = 0;
  std::uint64_t query_seed_ = 0;
};

}  // namespace totsim
