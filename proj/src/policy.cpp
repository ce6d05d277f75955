#include "totsim/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace totsim {

const char* family_name(Family f) {
  switch (f) {
    case Family::RstarDfs: return "rstar_dfs";
    case Family::RestHybrid: return "rest_hybrid";
    case Family::RebaseBfs: return "rebase_bfs";
  }
  return "?";
}

Family family_from_name(const std::string& name) {
  if (name == "rstar_dfs") return Family::RstarDfs;
  if (name == "rest_hybrid") return Family::RestHybrid;
  if (name == "rebase_bfs") return Family::RebaseBfs;
  throw Error(Errc::ConfigInvalid, "unknown algorithm '" + name + "'");
}

double ucb_score(double value, int child_visits, int parent_visits, double exploration_c) {
  if (child_visits <= 0 || parent_visits <= 0)
    throw Error(Errc::ZeroVisits, "ucb_score needs positive visit counts");
  return value + exploration_c *
                     std::sqrt(std::log(static_cast<double>(parent_visits)) / child_visits);
}

NodeId ucb_select(const SearchTree& tree, NodeId id, double exploration_c) {
  const ThoughtNode& parent = tree.node(id);
  std::vector<NodeId> cands = tree.live_children(id);
  if (cands.empty()) throw Error(Errc::NoChildren, "node " + std::to_string(id));

  for (NodeId c : cands)
    if (tree.node(c).visits == 0) return c;  // ids ascend with slots

  NodeId best = kNoNode;
  double best_score = 0.0;
  for (NodeId c : cands) {
    const ThoughtNode& ch = tree.node(c);
    double s = ucb_score(ch.value, ch.visits, parent.visits, exploration_c);
    if (best == kNoNode || s > best_score) {
      best = c;
      best_score = s;
    }
  }
  return best;
}

void backpropagate(SearchTree& tree, NodeId leaf, double reward) {
  const ThoughtNode& n = tree.node(leaf);
  if (n.status != NodeStatus::Committed && n.status != NodeStatus::TerminalAnswer)
    throw Error(Errc::InvalidArgument,
                std::string("backpropagate from ") + status_name(n.status));
  for (NodeId cur = leaf; cur != kNoNode; cur = tree.node(cur).parent) {
    ThoughtNode& a = tree.node(cur);
    a.visits += 1;
    a.value += (reward - a.value) / a.visits;
  }
}

std::vector<int> rebase_widths(const std::vector<double>& rewards, int budget,
                               double temperature, WidthMode mode) {
  if (rewards.empty()) throw Error(Errc::EmptyRewards, "rebase_widths");
  if (budget < 0) throw Error(Errc::InvalidArgument, "negative budget");
  if (temperature <= 0.0) throw Error(Errc::InvalidArgument, "temperature must be positive");

  const std::size_t n = rewards.size();
  double rmax = *std::max_element(rewards.begin(), rewards.end());
  std::vector<double> weights(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    weights[i] = std::exp((rewards[i] - rmax) / temperature);
    total += weights[i];
  }

  std::vector<double> quota(n);
  for (std::size_t i = 0; i < n; ++i) quota[i] = budget * weights[i] / total;

  std::vector<int> widths(n, 0);
  if (mode == WidthMode::HalfAwayFromZero) {
    for (std::size_t i = 0; i < n; ++i) widths[i] = static_cast<int>(std::round(quota[i]));
    bool all_zero = std::all_of(widths.begin(), widths.end(), [](int w) { return w == 0; });
    if (all_zero && budget > 0) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (rewards[i] > rewards[best]) best = i;
      widths[best] = 1;
    }
    return widths;
  }

  // Sum-preserving: floors, then largest fractional remainders take the rest.
  int assigned = 0;
  std::vector<double> frac(n);
  for (std::size_t i = 0; i < n; ++i) {
    widths[i] = static_cast<int>(std::floor(quota[i]));
    frac[i] = quota[i] - widths[i];
    assigned += widths[i];
  }
  int leftover = budget - assigned;
  if (leftover > 0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    std::size_t k = 0;
    while (leftover > 0) {
      widths[order[k % n]] += 1;
      --leftover;
      ++k;
    }
  }
  return widths;
}

namespace {

bool content_ready(const ThoughtNode& n) { return n.gen_done; }

std::vector<ExpansionRequest> rstar_step(const SearchTree& tree, const PolicyConfig& cfg) {
  NodeId x = tree.root();
  for (;;) {
    const ThoughtNode& n = tree.node(x);
    if (n.terminal) return {};          // next iteration revisits an answer
    if (!content_ready(n)) return {};   // chain tip still generating

    std::vector<NodeId> cands = tree.live_children(x);
    NodeId unvisited = kNoNode;
    for (NodeId c : cands)
      if (tree.node(c).visits == 0) {
        unvisited = c;
        break;
      }
    if (unvisited != kNoNode) {
      x = unvisited;
      continue;
    }
    int slots_used = static_cast<int>(n.children.size());
    if (slots_used < cfg.budget_at(n.depth))
      return {ExpansionRequest{0, x, slots_used, false, 0.0, 0}};
    if (cands.empty())
      throw Error(Errc::SearchComplete, "policy path dead-ended");
    x = ucb_select(tree, x, cfg.exploration_c);
  }
}

std::vector<ExpansionRequest> rest_step(const SearchTree& tree, const PolicyConfig& cfg) {
  NodeId x = tree.root();
  for (;;) {
    const ThoughtNode& n = tree.node(x);
    if (n.terminal) return {};
    if (!content_ready(n)) return {};

    int slots_used = static_cast<int>(n.children.size());
    int b = cfg.budget_at(n.depth);
    if (slots_used < b) {
      std::vector<ExpansionRequest> reqs;
      for (int s = slots_used; s < b; ++s) reqs.push_back(ExpansionRequest{0, x, s, false, 0.0, 0});
      return reqs;
    }

    std::vector<NodeId> cands = tree.live_children(x);
    if (cands.empty()) throw Error(Errc::SearchComplete, "policy path dead-ended");
    for (NodeId c : cands)
      if (!tree.node(c).reward.has_value()) return {};  // sibling batch still scoring

    // Continuation: best process reward among unvisited non-terminal children.
    NodeId best = kNoNode;
    for (NodeId c : cands) {
      const ThoughtNode& ch = tree.node(c);
      if (ch.visits != 0 || ch.terminal) continue;
      if (best == kNoNode || *ch.reward > *tree.node(best).reward) best = c;
    }
    if (best != kNoNode) {
      x = best;
      continue;
    }

    NodeId pick = kNoNode;
    double pick_score = 0.0;
    for (NodeId c : cands) {
      const ThoughtNode& ch = tree.node(c);
      if (ch.terminal) continue;
      double s = ucb_score(ch.value, std::max(ch.visits, 1), std::max(n.visits, 1),
                           cfg.exploration_c);
      if (pick == kNoNode || s > pick_score) {
        pick = c;
        pick_score = s;
      }
    }
    if (pick == kNoNode) throw Error(Errc::SearchComplete, "subtree fully terminal");
    x = pick;
  }
}

std::vector<ExpansionRequest> rebase_step(const SearchTree& tree, const PolicyConfig& cfg) {
  std::vector<NodeId> frontier = tree.frontier();
  if (frontier.empty() && tree.size() == 1) frontier = {tree.root()};

  std::vector<NodeId> live;
  for (NodeId f : frontier) {
    const ThoughtNode& n = tree.node(f);
    if (n.status != NodeStatus::Pruned && !n.terminal && content_ready(n)) live.push_back(f);
  }
  if (live.empty()) throw Error(Errc::SearchComplete, "empty frontier");

  int depth = tree.node(live.front()).depth;
  std::vector<double> rewards;
  rewards.reserve(live.size());
  for (NodeId f : live) rewards.push_back(tree.node(f).reward.value_or(0.0));

  std::vector<int> widths =
      rebase_widths(rewards, cfg.budget_at(depth), cfg.balance_temperature);

  std::vector<ExpansionRequest> reqs;
  for (std::size_t i = 0; i < live.size(); ++i) {
    int have = static_cast<int>(tree.node(live[i]).children.size());
    for (int s = have; s < widths[i]; ++s)
      reqs.push_back(ExpansionRequest{0, live[i], s, false, 0.0, 0});
  }
  return reqs;
}

}  // namespace

std::vector<ExpansionRequest> policy_step(const SearchTree& tree, const PolicyConfig& cfg) {
  if (tree.terminal_answer_count() >= cfg.target_answers)
    throw Error(Errc::SearchComplete, "answer target reached");
  switch (cfg.family) {
    case Family::RstarDfs: return rstar_step(tree, cfg);
    case Family::RestHybrid: return rest_step(tree, cfg);
    case Family::RebaseBfs: return rebase_step(tree, cfg);
  }
  return {};
}

}  // namespace totsim
