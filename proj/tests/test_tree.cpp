#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <vector>

#include <json.hpp>

#include "totsim/rng.hpp"
#include "totsim/tree.hpp"

using namespace totsim;

namespace {

// Oracle: prefix tokens by walking parent links, independent of prefix_tokens.
long long walk_prefix(const SearchTree& t, NodeId id) {
  long long sum = 0;
  for (NodeId cur = id; cur != kNoNode; cur = t.node(cur).parent) sum += t.node(cur).token_len;
  return sum;
}

// Oracle: live nodes in a subtree by explicit traversal.
int live_subtree_count(const SearchTree& t, NodeId id) {
  int n = t.node(id).status == NodeStatus::Pruned ? 0 : 1;
  for (NodeId c : t.node(id).children) n += live_subtree_count(t, c);
  return n;
}

constexpr NodeStatus kAllStatuses[] = {
    NodeStatus::PendingExpansion, NodeStatus::Expanding,   NodeStatus::AwaitingReward,
    NodeStatus::Committed,        NodeStatus::Speculative, NodeStatus::SpeculativeDone,
    NodeStatus::Pruned,           NodeStatus::TerminalAnswer,
};

// Oracle restatement of the lifecycle machine, written as a flat pair list.
bool machine_allows(NodeStatus from, NodeStatus to) {
  using S = NodeStatus;
  static const std::pair<S, S> legal[] = {
      {S::PendingExpansion, S::Expanding},
      {S::Expanding, S::AwaitingReward},
      {S::AwaitingReward, S::Committed},
      {S::AwaitingReward, S::SpeculativeDone},
      {S::AwaitingReward, S::TerminalAnswer},
      {S::Speculative, S::SpeculativeDone},
      {S::Speculative, S::Expanding},
      {S::Speculative, S::AwaitingReward},
      {S::SpeculativeDone, S::Committed},
      {S::SpeculativeDone, S::TerminalAnswer},
  };
  if (to == S::Pruned) return from != S::Pruned;
  for (auto [f, t] : legal)
    if (f == from && t == to) return true;
  return false;
}

}  // namespace

TEST_CASE("tree: root starts committed with the prompt attached") {
  SearchTree t(32, 77);
  CHECK(t.size() == 1);
  CHECK(t.root() == 0);
  const ThoughtNode& r = t.node(0);
  CHECK(r.parent == kNoNode);
  CHECK(r.depth == 0);
  CHECK(r.token_len == 32);
  CHECK(r.status == NodeStatus::Committed);
  CHECK(r.gen_done);
  CHECK(r.path_hash == rng::splitmix64(77));
  CHECK(t.prompt_tokens() == 32);
  CHECK(t.query_seed() == 77);
}

TEST_CASE("tree: add_node assigns depth, slot, status, and hash") {
  SearchTree t(0, 5);
  NodeId a = t.add_node(t.root(), 64, false);
  CHECK(t.node(a).depth == 1);
  CHECK(t.node(a).slot == 0);
  CHECK(t.node(a).status == NodeStatus::Expanding);
  CHECK_FALSE(t.node(a).speculative_origin);

  NodeId b = t.add_node(t.root(), 10, true);
  CHECK(t.node(b).slot == 1);
  CHECK(t.node(b).status == NodeStatus::Speculative);
  CHECK(t.node(b).speculative_origin);

  NodeId c = t.add_pending_node(a, 9);
  CHECK(t.node(c).status == NodeStatus::PendingExpansion);
  CHECK(t.node(c).depth == 2);

  // Child hashes extend the parent hash by the claimed slot.
  CHECK(t.node(a).path_hash == rng::extend_hash(t.node(0).path_hash, 0));
  CHECK(t.node(b).path_hash == rng::extend_hash(t.node(0).path_hash, 1));
  CHECK(t.node(c).path_hash == rng::extend_hash(t.node(a).path_hash, 0));
}

TEST_CASE("tree: add_node rejects bad parents and lengths") {
  SearchTree t;
  try {
    t.add_node(42, 8, false);
    FAIL("expected UnknownParent");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnknownParent);
  }
  NodeId a = t.add_node(t.root(), 8, false);
  t.prune_subtree(a);
  try {
    t.add_node(a, 8, false);
    FAIL("expected ParentPruned");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ParentPruned);
  }
  try {
    t.add_node(t.root(), 0, false);
    FAIL("expected InvalidArgument");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidArgument);
  }
}

TEST_CASE("tree: prefix sums on a three-level chain") {
  SearchTree t(0, 1);
  NodeId a = t.add_node(t.root(), 50, false);
  NodeId b = t.add_node(a, 70, false);
  NodeId c = t.add_node(b, 90, false);
  CHECK(t.prefix_tokens(c) == 210);
  CHECK(t.shared_prefix_tokens(c) == 120);
  CHECK(t.shared_prefix_tokens(a) == 0);
  CHECK(t.prefix_tokens(c) == walk_prefix(t, c));

  SearchTree p(32, 1);
  NodeId pa = p.add_node(p.root(), 50, false);
  NodeId pb = p.add_node(pa, 70, false);
  NodeId pc = p.add_node(pb, 90, false);
  CHECK(p.prefix_tokens(pc) == 242);
  CHECK(p.shared_prefix_tokens(pc) == 152);
  CHECK(p.shared_prefix_tokens(pa) == 32);
  CHECK(p.prefix_tokens(pc) == walk_prefix(p, pc));
}

TEST_CASE("tree: promote lands at the stage generation progress dictates") {
  SearchTree t;

  SUBCASE("scored non-terminal becomes Committed") {
    NodeId a = t.add_node(t.root(), 8, true);
    t.node(a).gen_done = true;
    t.set_status(a, NodeStatus::SpeculativeDone);
    t.promote(a);
    CHECK(t.node(a).status == NodeStatus::Committed);
  }
  SUBCASE("scored terminal becomes TerminalAnswer") {
    NodeId a = t.add_node(t.root(), 8, true);
    t.node(a).gen_done = true;
    t.node(a).terminal = true;
    t.set_status(a, NodeStatus::SpeculativeDone);
    t.promote(a);
    CHECK(t.node(a).status == NodeStatus::TerminalAnswer);
  }
  SUBCASE("generated but unscored becomes AwaitingReward") {
    NodeId a = t.add_node(t.root(), 8, true);
    t.node(a).gen_done = true;
    t.promote(a);
    CHECK(t.node(a).status == NodeStatus::AwaitingReward);
  }
  SUBCASE("still generating becomes Expanding") {
    NodeId a = t.add_node(t.root(), 8, true);
    t.promote(a);
    CHECK(t.node(a).status == NodeStatus::Expanding);
  }
  SUBCASE("non-speculative nodes are rejected") {
    NodeId a = t.add_node(t.root(), 8, false);
    try {
      t.promote(a);
      FAIL("expected NotSpeculative");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NotSpeculative);
    }
  }
}

TEST_CASE("tree: prune_subtree counts newly pruned nodes only") {
  SearchTree t;
  NodeId a = t.add_node(t.root(), 8, false);
  NodeId b = t.add_node(a, 8, false);
  NodeId c = t.add_node(a, 8, false);
  t.add_node(b, 8, false);

  NodeId leaf = t.add_node(t.root(), 8, false);
  CHECK(t.prune_subtree(leaf) == 1);

  int live_before = live_subtree_count(t, a);
  CHECK(live_before == 4);
  CHECK(t.prune_subtree(a) == 4);
  CHECK(live_subtree_count(t, a) == 0);
  CHECK(t.prune_subtree(a) == 0);
  CHECK(t.node(b).status == NodeStatus::Pruned);
  CHECK(t.node(c).status == NodeStatus::Pruned);

  // Partial overlap: pruning above an already-pruned child counts the rest.
  SearchTree u;
  NodeId ua = u.add_node(u.root(), 8, false);
  NodeId ub = u.add_node(ua, 8, false);
  u.add_node(ua, 8, false);
  CHECK(u.prune_subtree(ub) == 1);
  CHECK(u.prune_subtree(ua) == 2);
}

TEST_CASE("tree: prune removes frontier membership") {
  SearchTree t;
  NodeId a = t.add_node(t.root(), 8, false);
  NodeId b = t.add_node(t.root(), 8, false);
  t.set_frontier({a, b});
  t.prune_subtree(a);
  REQUIRE(t.frontier().size() == 1);
  CHECK(t.frontier()[0] == b);
}

TEST_CASE("tree: transition table matches the lifecycle machine") {
  for (NodeStatus from : kAllStatuses)
    for (NodeStatus to : kAllStatuses) {
      INFO(status_name(from) << " -> " << status_name(to));
      CHECK(transition_legal(from, to) == machine_allows(from, to));
    }
}

TEST_CASE("tree: set_status enforces the table") {
  SearchTree t;
  NodeId a = t.add_node(t.root(), 8, false);
  try {
    t.set_status(a, NodeStatus::Committed);  // skips AwaitingReward
    FAIL("expected IllegalTransition");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::IllegalTransition);
  }
  t.set_status(a, NodeStatus::AwaitingReward);
  t.set_status(a, NodeStatus::Committed);
  CHECK(t.node(a).status == NodeStatus::Committed);
}

TEST_CASE("tree: slot paths reproduce stored path hashes") {
  SearchTree t(16, 9001);
  std::mt19937_64 gen(3);
  std::vector<NodeId> ids{t.root()};
  for (int i = 0; i < 40; ++i) {
    NodeId parent = ids[gen() % ids.size()];
    ids.push_back(t.add_node(parent, 1 + static_cast<int>(gen() % 50), gen() % 2 == 0));
  }
  for (NodeId id : ids) {
    std::vector<int> slots = t.slot_path(id);
    CHECK(static_cast<int>(slots.size()) == t.node(id).depth);
    CHECK(t.node(id).path_hash == rng::path_hash(t.query_seed(), slots));
  }
}

TEST_CASE("tree: live_children and terminal_answer_count") {
  SearchTree t;
  NodeId a = t.add_node(t.root(), 8, false);
  NodeId b = t.add_node(t.root(), 8, false);
  NodeId c = t.add_node(t.root(), 8, false);
  t.prune_subtree(b);
  std::vector<NodeId> live = t.live_children(t.root());
  REQUIRE(live.size() == 2);
  CHECK(live[0] == a);
  CHECK(live[1] == c);

  CHECK(t.terminal_answer_count() == 0);
  t.node(a).terminal = true;
  t.set_status(a, NodeStatus::AwaitingReward);
  t.set_status(a, NodeStatus::TerminalAnswer);
  CHECK(t.terminal_answer_count() == 1);
}

TEST_CASE("tree: random operation sequences keep the tree well-formed") {
  std::mt19937_64 gen(1234);
  for (int round = 0; round < 50; ++round) {
    SearchTree t(static_cast<int>(gen() % 64), gen());
    for (int op = 0; op < 120; ++op) {
      NodeId target = static_cast<NodeId>(gen() % t.size());
      switch (gen() % 4) {
        case 0:
        case 1:
          if (t.node(target).status != NodeStatus::Pruned)
            t.add_node(target, 1 + static_cast<int>(gen() % 30), gen() % 3 == 0);
          break;
        case 2:
          if (t.node(target).status == NodeStatus::Speculative ||
              t.node(target).status == NodeStatus::SpeculativeDone)
            t.promote(target);
          break;
        case 3:
          if (target != t.root() && gen() % 8 == 0) t.prune_subtree(target);
          break;
      }
    }
    // Full-traversal invariants: dense ids, depth chains, mutual parent/child
    // links, slot order, and prune closure.
    for (NodeId id = 0; id < t.size(); ++id) {
      const ThoughtNode& n = t.node(id);
      CHECK(n.id == id);
      if (id == t.root()) {
        CHECK(n.parent == kNoNode);
        CHECK(n.depth == 0);
      } else {
        REQUIRE(t.contains(n.parent));
        const ThoughtNode& p = t.node(n.parent);
        CHECK(p.id < id);
        CHECK(n.depth == p.depth + 1);
        REQUIRE(n.slot < static_cast<int>(p.children.size()));
        CHECK(p.children[n.slot] == id);
        if (p.status == NodeStatus::Pruned) CHECK(n.status == NodeStatus::Pruned);
      }
      for (std::size_t s = 0; s < n.children.size(); ++s) {
        CHECK(t.node(n.children[s]).parent == id);
        CHECK(t.node(n.children[s]).slot == static_cast<int>(s));
      }
      CHECK(t.prefix_tokens(id) == walk_prefix(t, id));
    }
  }
}

TEST_CASE("tree: snapshot serializes every node") {
  SearchTree t(8, 2);
  t.add_node(t.root(), 5, false);
  t.add_node(t.root(), 6, true);
  auto j = nlohmann::ordered_json::parse(t.snapshot_json());
  REQUIRE(j.contains("nodes"));
  CHECK(j["nodes"].size() == t.size());
}
