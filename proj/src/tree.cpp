#include "totsim/tree.hpp"

#include <json.hpp>

#include "totsim/rng.hpp"

namespace totsim {

const char* status_name(NodeStatus s) {
  switch (s) {
    case NodeStatus::PendingExpansion: return "PendingExpansion";
    case NodeStatus::Expanding: return "Expanding";
    case NodeStatus::AwaitingReward: return "AwaitingReward";
    case NodeStatus::Committed: return "Committed";
    case NodeStatus::Speculative: return "Speculative";
    case NodeStatus::SpeculativeDone: return "SpeculativeDone";
    case NodeStatus::Pruned: return "Pruned";
    case NodeStatus::TerminalAnswer: return "TerminalAnswer";
  }
  return "?";
}

bool transition_legal(NodeStatus from, NodeStatus to) {
  if (to == NodeStatus::Pruned) return from != NodeStatus::Pruned;
  switch (from) {
    case NodeStatus::PendingExpansion:
      return to == NodeStatus::Expanding;
    case NodeStatus::Expanding:
      return to == NodeStatus::AwaitingReward;
    case NodeStatus::AwaitingReward:
      return to == NodeStatus::Committed || to == NodeStatus::SpeculativeDone ||
             to == NodeStatus::TerminalAnswer;
    case NodeStatus::Speculative:
      // Promotion mid-flight lands in the primary column at the matching stage.
      return to == NodeStatus::SpeculativeDone || to == NodeStatus::Expanding ||
             to == NodeStatus::AwaitingReward;
    case NodeStatus::SpeculativeDone:
      return to == NodeStatus::Committed || to == NodeStatus::TerminalAnswer;
    case NodeStatus::Committed:
    case NodeStatus::TerminalAnswer:
    case NodeStatus::Pruned:
      return false;
  }
  return false;
}

SearchTree::SearchTree(int prompt_tokens, std::uint64_t query_seed)
    : prompt_tokens_(prompt_tokens), query_seed_(query_seed) {
  ThoughtNode root;
  root.id = 0;
  root.parent = kNoNode;
  root.depth = 0;
  root.slot = 0;
  root.token_len = prompt_tokens;
  root.status = NodeStatus::Committed;
  root.gen_done = true;
  root.path_hash = rng::splitmix64(query_seed);
  nodes_.push_back(std::move(root));
}

void SearchTree::check_known(NodeId id) const {
  if (!contains(id)) throw Error(Errc::UnknownNode, "node " + std::to_string(id));
}

const ThoughtNode& SearchTree::node(NodeId id) const {
  check_known(id);
  return nodes_[id];
}

ThoughtNode& SearchTree::node(NodeId id) {
  check_known(id);
  return nodes_[id];
}

NodeId SearchTree::add_node(NodeId parent, int token_len, bool speculative) {
  if (!contains(parent)) throw Error(Errc::UnknownParent, "parent " + std::to_string(parent));
  ThoughtNode& p = nodes_[parent];
  if (p.status == NodeStatus::Pruned)
    throw Error(Errc::ParentPruned, "parent " + std::to_string(parent));
  if (token_len <= 0) throw Error(Errc::InvalidArgument, "token_len must be positive");

  ThoughtNode n;
  n.id = static_cast<NodeId>(nodes_.size());
  n.parent = parent;
  n.depth = p.depth + 1;
  n.slot = static_cast<int>(p.children.size());
  n.token_len = token_len;
  n.status = speculative ? NodeStatus::Speculative : NodeStatus::Expanding;
  n.speculative_origin = speculative;
  n.path_hash = rng::extend_hash(p.path_hash, n.slot);
  p.children.push_back(n.id);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId SearchTree::add_pending_node(NodeId parent, int token_len) {
  NodeId id = add_node(parent, token_len, false);
  nodes_[id].status = NodeStatus::PendingExpansion;
  return id;
}

void SearchTree::promote(NodeId id) {
  check_known(id);
  ThoughtNode& n = nodes_[id];
  if (n.status != NodeStatus::Speculative && n.status != NodeStatus::SpeculativeDone)
    throw Error(Errc::NotSpeculative, "node " + std::to_string(id));

  NodeStatus to;
  if (n.status == NodeStatus::SpeculativeDone) {
    to = n.terminal ? NodeStatus::TerminalAnswer : NodeStatus::Committed;
  } else if (n.gen_done) {
    to = NodeStatus::AwaitingReward;
  } else {
    to = NodeStatus::Expanding;
  }
  set_status(id, to);
}

int SearchTree::prune_subtree(NodeId id) {
  check_known(id);
  int pruned = 0;
  std::vector<NodeId> stack{id};
  while (!stack.empty()) {
    NodeId cur = stack.back();
    stack.pop_back();
    ThoughtNode& n = nodes_[cur];
    if (n.status != NodeStatus::Pruned) {
      n.status = NodeStatus::Pruned;
      ++pruned;
    }
    for (NodeId c : n.children) stack.push_back(c);
  }
  if (pruned > 0 && !frontier_.empty()) {
    std::vector<NodeId> kept;
    kept.reserve(frontier_.size());
    for (NodeId f : frontier_)
      if (nodes_[f].status != NodeStatus::Pruned) kept.push_back(f);
    frontier_ = std::move(kept);
  }
  return pruned;
}

void SearchTree::set_status(NodeId id, NodeStatus to) {
  check_known(id);
  ThoughtNode& n = nodes_[id];
  if (!transition_legal(n.status, to))
    throw Error(Errc::IllegalTransition,
                std::string(status_name(n.status)) + " -> " + status_name(to));
  n.status = to;
}

long long SearchTree::prefix_tokens(NodeId id) const {
  check_known(id);
  long long total = 0;
  for (NodeId cur = id; cur != kNoNode; cur = nodes_[cur].parent)
    total += nodes_[cur].token_len;
  return total;
}

long long SearchTree::shared_prefix_tokens(NodeId id) const {
  check_known(id);
  NodeId p = nodes_[id].parent;
  return p == kNoNode ? 0 : prefix_tokens(p);
}

std::vector<int> SearchTree::slot_path(NodeId id) const {
  check_known(id);
  std::vector<int> slots;
  for (NodeId cur = id; cur != 0; cur = nodes_[cur].parent) slots.push_back(nodes_[cur].slot);
  return {slots.rbegin(), slots.rend()};
}

int SearchTree::terminal_answer_count() const {
  int n = 0;
  for (const auto& nd : nodes_)
    if (nd.status == NodeStatus::TerminalAnswer) ++n;
  return n;
}

std::vector<NodeId> SearchTree::live_children(NodeId id) const {
  check_known(id);
  std::vector<NodeId> out;
  out.reserve(nodes_[id].children.size());
  for (NodeId c : nodes_[id].children)
    if (nodes_[c].status != NodeStatus::Pruned) out.push_back(c);
  return out;
}

std::string SearchTree::snapshot_json() const {
  nlohmann::ordered_json j;
  j["prompt_tokens"] = prompt_tokens_;
  j["nodes"] = nlohmann::ordered_json::array();
  for (const auto& n : nodes_) {
    nlohmann::ordered_json e;
    e["id"] = n.id;
    e["parent"] = n.parent == kNoNode ? -1 : static_cast<int>(n.parent);
    e["slot"] = n.slot;
    e["depth"] = n.depth;
    e["tokens"] = n.token_len;
    e["status"] = status_name(n.status);
    e["visits"] = n.visits;
    e["value"] = n.value;
    if (n.reward) e["reward"] = *n.reward;
    if (n.terminal) e["terminal"] = true;
    if (n.answer_label) e["label"] = *n.answer_label;
    j["nodes"].push_back(std::move(e));
  }
  return j.dump();
}

}  // namespace totsim
