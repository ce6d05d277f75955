#pragma once

#include <vector>

#include "totsim/tree.hpp"

namespace totsim {

// ============================================================================
// Search policies: UCB selection, backpropagation, softmax width balancing
// ============================================================================

enum class Family { RstarDfs, RestHybrid, RebaseBfs };

const char* family_name(Family f);
Family family_from_name(const std::string& name);

/** Rounding regime for softmax-balanced widths. */
enum class WidthMode {
  HalfAwayFromZero,  // per-candidate rounding; the sum may miss the budget
  SumPreserving,     // floors plus largest-remainder top-up; sum == budget
};

struct PolicyConfig {
  Family family = Family::RstarDfs;
  double exploration_c = 1.0;
  double balance_temperature = 1.0;
  int width = 4;                    // per-depth budget (DFS branch factor / BFS B_i)
  std::vector<int> depth_widths;    // optional per-depth overrides
  int target_answers = 10;
  int max_depth = 16;

  int budget_at(int depth) const {
    if (depth >= 0 && depth < static_cast<int>(depth_widths.size())) return depth_widths[depth];
    return width;
  }
};

/**
 * UCB score Q + c * sqrt(ln N(s) / N(s,a)) with natural log.
 * Throws ZeroVisits when either visit count is zero.
 */
double ucb_score(double value, int child_visits, int parent_visits, double exploration_c);

/**
 * Argmax child of `id` by ucb_score. Unvisited children are selected before
 * any visited child, in NodeId order; score ties also break to the lowest
 * NodeId. Pruned children are ignored. Throws NoChildren.
 */
NodeId ucb_select(const SearchTree& tree, NodeId id, double exploration_c);

/**
 * Push one reward up the path leaf..root: visits increment and value becomes
 * the running mean of all rewards propagated through each node.
 */
void backpropagate(SearchTree& tree, NodeId leaf, double reward);

/**
 * Softmax width balancing: W_j = round(budget * exp(r_j/T) / sum exp(r_k/T)).
 * In SumPreserving mode floors are topped up by largest remainder so the
 * result sums exactly to `budget`. When every rounded width is zero the
 * single best-reward candidate gets width 1. Throws EmptyRewards.
 */
std::vector<int> rebase_widths(const std::vector<double>& rewards, int budget,
                               double temperature, WidthMode mode = WidthMode::HalfAwayFromZero);

/** One planned generation: a new child of `parent` at child index `slot`. */
struct ExpansionRequest {
  int query = 0;
  NodeId parent = kNoNode;
  int slot = 0;
  bool speculative = false;
  double issue_time = 0.0;
  int predicted_distance = 0;  // 0 for primary work
};

/**
 * Pure preview of the next batch of primary expansions for a quiescent tree:
 * one chain step for RstarDfs, a full sibling batch for RestHybrid, a
 * width-balanced frontier expansion for RebaseBfs. Throws SearchComplete when
 * the answer target is met or nothing is expandable.
 */
std::vector<ExpansionRequest> policy_step(const SearchTree& tree, const PolicyConfig& cfg);

}  // namespace totsim
