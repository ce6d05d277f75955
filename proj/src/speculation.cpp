#include "totsim/speculation.hpp"

#include <algorithm>
#include <cmath>

namespace totsim {

TreeSnapshot::Stat TreeSnapshot::stat(NodeId id) const {
  auto it = overlay_.find(id);
  if (it != overlay_.end()) return it->second;
  const ThoughtNode& n = tree_->node(id);
  return Stat{n.visits, n.value};
}

int TreeSnapshot::visits(NodeId id) const { return stat(id).visits; }
double TreeSnapshot::value(NodeId id) const { return stat(id).value; }

void TreeSnapshot::bump_path(NodeId leaf) {
  for (NodeId cur = leaf; cur != kNoNode; cur = tree_->node(cur).parent) {
    Stat s = stat(cur);
    s.visits += 1;
    overlay_[cur] = s;
  }
}

void TreeSnapshot::bump_node(NodeId id) {
  Stat s = stat(id);
  s.visits += 1;
  overlay_[id] = s;
}

void TreeSnapshot::backprop_path(NodeId leaf, double reward) {
  for (NodeId cur = leaf; cur != kNoNode; cur = tree_->node(cur).parent) {
    Stat s = stat(cur);
    s.visits += 1;
    s.value += (reward - s.value) / s.visits;
    overlay_[cur] = s;
  }
}

namespace {

bool unpromoted_spec(const ThoughtNode& n) {
  return n.status == NodeStatus::Speculative || n.status == NodeStatus::SpeculativeDone;
}

bool generating(const ThoughtNode& n) {
  return !n.gen_done;
}

enum class PickKind { Generate, UseSpec, Blocked, Revisit, DeadEnd };

struct Pick {
  PickKind kind;
  NodeId node;  // expansion point for Generate, child for UseSpec, walk stop otherwise
};

/** One selection walk from the root over snapshot statistics. */
Pick descend(const TreeSnapshot& snap, const PolicyConfig& cfg) {
  const SearchTree& tree = snap.tree();
  NodeId x = tree.root();
  for (;;) {
    const ThoughtNode& n = tree.node(x);
    if (n.terminal) return {PickKind::Revisit, x};
    if (generating(n)) return {PickKind::Blocked, x};

    std::vector<NodeId> cands = tree.live_children(x);

    if (cfg.family == Family::RestHybrid) {
      // Batch semantics: fill the sibling batch first, then follow the best
      // scored continuation. Stragglers without rewards block the walk here.
      int slots_used = static_cast<int>(n.children.size());
      if (slots_used < cfg.budget_at(n.depth)) return {PickKind::Generate, x};
      if (cands.empty()) return {PickKind::DeadEnd, x};
      for (NodeId c : cands)
        if (snap.visits(c) == 0 && unpromoted_spec(tree.node(c)))
          return {PickKind::UseSpec, c};
      NodeId best = kNoNode;
      for (NodeId c : cands) {
        const ThoughtNode& ch = tree.node(c);
        if (ch.terminal || !ch.reward.has_value()) continue;
        if (best == kNoNode || *ch.reward > *tree.node(best).reward) best = c;
      }
      if (best == kNoNode) return {PickKind::Blocked, x};
      x = best;
      continue;
    }

    // DFS walk: unvisited children first in slot order, then a fresh slot,
    // then the UCB argmax among visited children.
    NodeId unvisited = kNoNode;
    for (NodeId c : cands)
      if (snap.visits(c) == 0) {
        unvisited = c;
        break;
      }
    if (unvisited != kNoNode) {
      if (unpromoted_spec(tree.node(unvisited))) return {PickKind::UseSpec, unvisited};
      x = unvisited;
      continue;
    }
    int slots_used = static_cast<int>(n.children.size());
    if (slots_used < cfg.budget_at(n.depth)) return {PickKind::Generate, x};
    if (cands.empty()) return {PickKind::DeadEnd, x};

    NodeId best = kNoNode;
    double best_score = 0.0;
    int pv = std::max(snap.visits(x), 1);
    for (NodeId c : cands) {
      double s = snap.value(c) +
                 cfg.exploration_c * std::sqrt(std::log(static_cast<double>(pv)) /
                                               std::max(snap.visits(c), 1));
      if (best == kNoNode || s > best_score) {
        best = c;
        best_score = s;
      }
    }
    x = best;
  }
}

}  // namespace

NodeId simulate_next(TreeSnapshot& snap, const PolicyConfig& cfg, int* consumed) {
  if (cfg.family == Family::RebaseBfs)
    throw Error(Errc::NothingExpandable, "frontier policies plan by allocation");
  const SearchTree& tree = snap.tree();
  NodeId last_blocked = kNoNode;
  int blocked_repeats = 0;
  auto absorb = [&] {
    if (consumed) *consumed += 1;
  };
  for (int guard = 0; guard < kSpeculationWalkGuard; ++guard) {
    Pick p = descend(snap, cfg);
    switch (p.kind) {
      case PickKind::Generate:
        return p.node;
      case PickKind::UseSpec: {
        // A simulated selection lands on existing speculative work: the
        // primary would adopt it and keep descending through it, so this is
        // a pass-through of the same future rollout, not a consumed one.
        // Adopting a terminal does end the rollout with a recorded answer.
        const ThoughtNode& c = tree.node(p.node);
        if (c.gen_done && c.reward.has_value()) {
          snap.backprop_path(p.node, *c.reward);
        } else {
          snap.bump_path(p.node);
        }
        if (c.terminal) absorb();
        break;
      }
      case PickKind::Blocked:
        // The walk cannot see past an in-flight node. Decay it locally so a
        // sibling wins the next try; bumping ancestors would divert the walk
        // at the top of the tree instead of at the nearest decision point.
        if (p.node == tree.root())
          throw Error(Errc::NothingExpandable, "root not expandable");
        blocked_repeats = (p.node == last_blocked) ? blocked_repeats + 1 : 0;
        last_blocked = p.node;
        if (blocked_repeats >= 8)
          throw Error(Errc::NothingExpandable, "selection pinned behind in-flight work");
        snap.bump_node(p.node);
        absorb();
        break;
      case PickKind::Revisit:
        if (p.node == tree.root())
          throw Error(Errc::NothingExpandable, "root not expandable");
        snap.bump_path(p.node);
        absorb();
        break;
      case PickKind::DeadEnd:
        if (p.node == tree.root())
          throw Error(Errc::NothingExpandable, "tree exhausted");
        snap.bump_path(p.node);
        absorb();
        break;
    }
  }
  throw Error(Errc::NothingExpandable, "simulation failed to settle");
}

SpeculationPlan dfs_speculative_select(const SearchTree& tree, const SpeculationLedger& ledger,
                                       int k, const PolicyConfig& cfg) {
  (void)ledger;  // outstanding speculation is visible through node state
  SpeculationPlan plan;
  SearchTree scratch = tree;  // phantoms must not leak into the live tree
  TreeSnapshot snap(scratch);
  // In-flight primary work backpropagates before the next real selection
  // happens, so the simulation starts from post-backprop visit counts.
  // Rewards are unknown at plan time; the bump is visit-only.
  for (NodeId id = 0; id < scratch.size(); ++id) {
    NodeStatus st = scratch.node(id).status;
    if (st == NodeStatus::Expanding || st == NodeStatus::AwaitingReward) snap.bump_path(id);
  }
  // Distances count simulated future rollouts, not plan positions: a walk
  // that first burns through revisits or invisible in-flight work predicts
  // its fresh target further out than a walk with a clear path. Targets past
  // the query's remaining answer budget can never be reached.
  const int horizon = std::max(1, cfg.target_answers - tree.terminal_answer_count());
  int ordinal = 0;
  for (int t = 1; t <= k; ++t) {
    NodeId x;
    try {
      x = simulate_next(snap, cfg, &ordinal);
    } catch (const Error& e) {
      if (e.code() == Errc::NothingExpandable) break;
      throw;
    }
    if (ordinal >= horizon) break;
    ordinal += 1;
    plan.targets.push_back(SpecTarget{x, ordinal});
    // Materialize the planned child as an in-flight phantom and apply the
    // visit-only update, exactly as a reward-free real iteration would.
    NodeId phantom = scratch.add_node(x, 1, true);
    snap.bump_path(phantom);
  }
  return plan;
}

std::vector<std::pair<NodeId, int>> bfs_speculative_allocate(
    const std::vector<FrontierEntry>& frontier_status, const PolicyConfig& cfg) {
  std::vector<NodeId> nodes;
  std::vector<double> rewards;
  int budget = 0;
  for (const auto& e : frontier_status)
    if (e.finished) {
      nodes.push_back(e.node);
      rewards.push_back(e.reward);
      ++budget;
    }
  std::vector<std::pair<NodeId, int>> out;
  if (budget == 0) return out;
  std::vector<int> widths =
      rebase_widths(rewards, budget, cfg.balance_temperature, WidthMode::SumPreserving);
  out.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) out.emplace_back(nodes[i], widths[i]);
  return out;
}

VerifyResult verify_bfs_speculation(const std::vector<NodeId>& predicted,
                                    const std::vector<NodeId>& actual) {
  VerifyResult r;
  std::set<NodeId> wanted(actual.begin(), actual.end());
  for (NodeId p : predicted) {
    if (wanted.count(p))
      r.hits.push_back(p);
    else
      r.misses.push_back(p);
  }
  return r;
}

void record_outcome(SpeculationLedger& ledger, NodeId node, bool hit, int distance) {
  bool known = ledger.active_expansions.count(node) || ledger.completed_speculations.count(node) ||
               ledger.predicted_distance.count(node);
  if (!known || ledger.resolved.count(node))
    throw Error(Errc::UnknownSpeculation, "node " + std::to_string(node));
  ledger.resolved.insert(node);
  ledger.active_expansions.erase(node);
  ledger.completed_speculations.erase(node);
  auto& hist = hit ? ledger.hits_by_distance : ledger.misses_by_distance;
  hist[distance] += 1;
}

}  // namespace totsim
