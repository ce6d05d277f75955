#include "totsim/executor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "totsim/budget.hpp"
#include "totsim/errors.hpp"
#include "totsim/policy.hpp"
#include "totsim/rng.hpp"
#include "totsim/sim.hpp"
#include "totsim/speculation.hpp"
#include "totsim/termination.hpp"
#include "totsim/tree.hpp"

namespace totsim {

namespace {

constexpr int kEvReward = 1;
constexpr double kInf = std::numeric_limits<double>::infinity();

int clamp_distance(int d) { return std::min(std::max(d, 1), kMaxTrackedDistance); }

bool unpromoted_spec(NodeStatus st) {
  return st == NodeStatus::Speculative || st == NodeStatus::SpeculativeDone;
}

}  // namespace

// ============================================================================
// Impl: all run state lives here; the consumer loop is the single writer
// ============================================================================

struct Executor::Impl {
  Impl(const ExperimentConfig& c, std::uint64_t seed, const SpexFlags& active, TraceWriter* tw)
      : cfg(c), fl(active), run_seed(seed), trace(tw), engine(cfg.hardware) {}

  ExperimentConfig cfg;
  SpexFlags fl;
  std::uint64_t run_seed = 0;
  TraceWriter* trace = nullptr;

  SimClock clock;
  DecodeEngine engine;
  double engine_now = 0.0;  // last step boundary the engine has reached
  double now = 0.0;         // consumer clock, never behind any emitted event
  int next_stream = 0;
  int producer_slots = 1;

  struct StreamRef {
    int query = -1;
    NodeId node = kNoNode;
  };
  std::map<int, StreamRef> streams;  // in-flight generations, by stream id

  struct QueryRun {
    int qid = 0;
    std::uint64_t seed = 0;
    std::string golden;
    std::unique_ptr<SearchTree> tree;
    std::unique_ptr<RewardOracle> oracle;
    AnswerTally tally;
    SpeculationLedger ledger;
    QueryState sched;
    std::unordered_map<NodeId, int> stream_of;
    std::unordered_map<NodeId, long long> ready_at_promote;
    int recorded = 0;         // answer samples taken so far
    int pending_rewards = 0;  // primary-status nodes awaiting their score
    bool admitted = false;
    bool finished = false;
    bool early = false;
    double finish_time = 0.0;

    // rollout-chain search
    bool rollout_active = false;
    NodeId chain_tip = kNoNode;

    // batched best-first descent
    NodeId rest_cur = 0;
    std::vector<NodeId> rest_stack;
    std::set<NodeId> batch_pending;

    // layered frontier search
    std::vector<NodeId> layer;
    std::vector<NodeId> cohort;
    std::set<NodeId> cohort_pending;
  };
  std::vector<QueryRun> queries;
  std::vector<QueryProfile> profiles;
  int admitted_count = 0;
  int finished_count = 0;

  RunTotals totals;
  bool ran = false;

  // --------------------------------------------------------------------------
  // trace helpers
  // --------------------------------------------------------------------------

  nlohmann::ordered_json rec(const char* ev) const {
    nlohmann::ordered_json j;
    j["t"] = now;
    j["ev"] = ev;
    return j;
  }

  void emit(nlohmann::ordered_json&& j) {
    if (trace) trace->emit(j);
  }

  // --------------------------------------------------------------------------
  // issuing work
  // --------------------------------------------------------------------------

  /** Create the next child of `parent`, emit its records, and start its
   *  generation stream. The child claims the parent's next free slot. */
  NodeId spawn_child(QueryRun& qr, NodeId parent, bool spec, int dist) {
    SearchTree& tree = *qr.tree;
    const ThoughtNode& p = tree.node(parent);
    const int slot = static_cast<int>(p.children.size());
    const std::uint64_t child_hash = rng::extend_hash(p.path_hash, slot);
    const int tokens = qr.oracle->token_len(child_hash);
    const NodeId id = tree.add_node(parent, tokens, spec);
    ThoughtNode& n = tree.node(id);
    n.terminal = qr.oracle->is_terminal(tree, id);

    if (trace) {
      auto j = rec("node");
      j["q"] = qr.qid;
      j["node"] = id;
      j["parent"] = parent;
      j["slot"] = slot;
      j["spec"] = spec;
      j["tokens"] = tokens;
      j["terminal"] = n.terminal;
      trace->emit(j);
    }

    const int sid = next_stream++;
    if (trace) {
      auto j = rec("req");
      j["q"] = qr.qid;
      j["node"] = id;
      j["stream"] = sid;
      j["spec"] = spec;
      j["dist"] = dist;
      trace->emit(j);
    }
    engine.add_stream(sid, qr.tree.get(), id, tokens, now);
    streams[sid] = {qr.qid, id};
    qr.stream_of[id] = sid;
    if (spec) {
      qr.ledger.active_expansions.insert(id);
      qr.ledger.predicted_distance[id] = dist;
    }
    return id;
  }

  /** Adopt a speculative child into the primary search. Tokens already
   *  materialized count as reused; bookkeeping records the hit. */
  void do_promote(QueryRun& qr, NodeId x) {
    SearchTree& tree = *qr.tree;
    const ThoughtNode& n = tree.node(x);
    const int dist = qr.ledger.predicted_distance.at(x);
    const long long ready = n.gen_done ? n.token_len
                                       : engine.done_tokens(qr.stream_of.at(x));
    tree.promote(x);
    qr.ready_at_promote[x] = ready;
    record_outcome(qr.ledger, x, true, dist);
    update_hit_rate(qr.sched, true, cfg.budget.ema_alpha);
    if (tree.node(x).status == NodeStatus::AwaitingReward) qr.pending_rewards += 1;
    if (trace) {
      auto j = rec("promote");
      j["q"] = qr.qid;
      j["node"] = x;
      j["ready"] = ready;
      j["dist"] = dist;
      trace->emit(j);
    }
  }

  /** Mark an in-flight generation for removal. Started streams leave at the
   *  next step boundary and report a stale completion; streams that never
   *  joined a step vanish with no record. */
  void cancel_stream(QueryRun& qr, NodeId x) {
    auto it = qr.stream_of.find(x);
    if (it == qr.stream_of.end()) return;
    const int sid = it->second;
    if (!engine.cancel(sid)) {
      streams.erase(sid);
      qr.stream_of.erase(it);
    }
  }

  // --------------------------------------------------------------------------
  // answers and termination
  // --------------------------------------------------------------------------

  void record_answer_event(QueryRun& qr, NodeId x, double r) {
    SearchTree& tree = *qr.tree;
    ThoughtNode& n = tree.node(x);
    const std::string label = qr.oracle->answer_label(tree, x);
    n.answer_label = label;
    n.answer_weight = r;
    qr.tally.record_answer(label, r);
    qr.recorded += 1;
    if (trace) {
      auto j = rec("answer");
      j["q"] = qr.qid;
      j["node"] = x;
      j["label"] = label;
      j["weight"] = r;
      j["correct"] = label == qr.golden;
      trace->emit(j);
    }
    if (qr.recorded >= cfg.policy.target_answers) {
      finish_query(qr, false);
      return;
    }
    if (fl.t3 &&
        qr.tally.should_terminate(cfg.termination.min_answers(cfg.policy.target_answers),
                                  cfg.termination.alpha)) {
      finish_query(qr, true);
    }
  }

  void finish_query(QueryRun& qr, bool early) {
    qr.finished = true;
    qr.early = early;
    qr.finish_time = now;
    qr.sched.phase = QueryPhase::Finished;
    finished_count += 1;
    SearchTree& tree = *qr.tree;

    if (early) {
      totals.early_terminated += 1;
      if (trace) {
        auto j = rec("terminate");
        j["q"] = qr.qid;
        j["label"] = qr.tally.leading_label();
        j["answers"] = qr.recorded;
        trace->emit(j);
      }
    }

    // Settle the speculation books and stop abandoned generations.
    for (NodeId id = 1; id < static_cast<NodeId>(tree.size()); ++id) {
      ThoughtNode& n = tree.node(id);
      switch (n.status) {
        case NodeStatus::Speculative:
          if (!n.gen_done) {
            // Outcome unknowable: dropped from the hit-rate books entirely.
            qr.ledger.cancelled_inflight += 1;
            qr.ledger.active_expansions.erase(id);
            cancel_stream(qr, id);
          } else {
            record_outcome(qr.ledger, id, false, qr.ledger.predicted_distance.at(id));
            update_hit_rate(qr.sched, false, cfg.budget.ema_alpha);
          }
          break;
        case NodeStatus::SpeculativeDone:
          record_outcome(qr.ledger, id, false, qr.ledger.predicted_distance.at(id));
          update_hit_rate(qr.sched, false, cfg.budget.ema_alpha);
          break;
        case NodeStatus::Expanding:
          cancel_stream(qr, id);
          break;
        default:
          break;
      }
    }

    // Tombstone everything outside the final answer set.
    for (NodeId id = 1; id < static_cast<NodeId>(tree.size()); ++id) {
      const NodeStatus st = tree.node(id).status;
      if (st == NodeStatus::Committed || st == NodeStatus::TerminalAnswer ||
          st == NodeStatus::Pruned)
        continue;
      const int cnt = tree.prune_subtree(id);
      if (trace) {
        auto j = rec("prune");
        j["q"] = qr.qid;
        j["node"] = id;
        j["count"] = cnt;
        trace->emit(j);
      }
    }

    // Conservation: classify what the run paid for.
    for (NodeId id = 1; id < static_cast<NodeId>(tree.size()); ++id) {
      const ThoughtNode& n = tree.node(id);
      if (n.status == NodeStatus::Committed || n.status == NodeStatus::TerminalAnswer) {
        auto rit = qr.ready_at_promote.find(id);
        const long long ready = rit == qr.ready_at_promote.end() ? 0 : rit->second;
        totals.reused_tokens += ready;
        totals.committed_tokens += n.token_len - ready;
      } else if (n.gen_done) {
        // Pruned after completing; the partially generated remainder is
        // charged when its stale completion surfaces.
        totals.wasted_tokens += n.token_len;
      }
    }

    for (const auto& [d, c] : qr.ledger.hits_by_distance) totals.hits[clamp_distance(d)] += c;
    for (const auto& [d, c] : qr.ledger.misses_by_distance)
      totals.misses[clamp_distance(d)] += c;

    std::string label;
    if (qr.tally.total_answers() > 0) label = qr.tally.leading_label();
    const bool correct = !label.empty() && label == qr.golden;
    if (trace) {
      auto j = rec("query_done");
      j["q"] = qr.qid;
      j["label"] = label;
      j["correct"] = correct;
      j["answers"] = qr.recorded;
      j["early"] = early;
      trace->emit(j);
    }
    totals.queries += 1;
    if (correct) totals.correct_votes += 1;
    if (totals.makespan < now) totals.makespan = now;

    if (finished_count == static_cast<int>(queries.size())) {
      drain_remaining();
    } else if (admitted_count < static_cast<int>(queries.size())) {
      admit(admitted_count);
    }
  }

  /** After the last query: whatever still occupies the engine is dead work.
   *  Flush it instantly so the log closes at the makespan. */
  void drain_remaining() {
    for (const auto& [sid, ref] : streams) {
      QueryRun& qr = queries[ref.query];
      const long long part = engine.done_tokens(sid);
      totals.generated_tokens += part;
      totals.wasted_tokens += part;
      if (trace) {
        auto j = rec("done");
        j["q"] = ref.query;
        j["node"] = ref.node;
        j["stream"] = sid;
        j["tokens"] = part;
        j["cancelled"] = true;
        j["stale"] = true;
        trace->emit(j);
      }
      engine.drop(sid);
      qr.stream_of.erase(ref.node);
    }
    streams.clear();
  }

  // --------------------------------------------------------------------------
  // event handlers
  // --------------------------------------------------------------------------

  void on_stream_done(const DecodeEngine::Finished& f) {
    auto sit = streams.find(f.id);
    if (sit == streams.end())
      throw Error(Errc::UnknownNode, "completion for unknown stream " + std::to_string(f.id));
    const int q = sit->second.query;
    const NodeId x = sit->second.node;
    streams.erase(sit);
    QueryRun& qr = queries[q];
    qr.stream_of.erase(x);
    SearchTree& tree = *qr.tree;
    ThoughtNode& n = tree.node(x);

    totals.generated_tokens += f.tokens_done;
    if (n.status == NodeStatus::Pruned) {
      totals.wasted_tokens += f.tokens_done;
      if (trace) {
        auto j = rec("done");
        j["q"] = q;
        j["node"] = x;
        j["stream"] = f.id;
        j["tokens"] = f.tokens_done;
        j["cancelled"] = f.cancelled;
        j["stale"] = true;
        trace->emit(j);
      }
      return;
    }

    n.gen_done = true;
    if (trace) {
      auto j = rec("done");
      j["q"] = q;
      j["node"] = x;
      j["stream"] = f.id;
      j["tokens"] = f.tokens_done;
      j["cancelled"] = false;
      j["stale"] = false;
      trace->emit(j);
    }
    if (n.status == NodeStatus::Expanding) {
      tree.set_status(x, NodeStatus::AwaitingReward);
      qr.pending_rewards += 1;
    }
    clock.push(now + cfg.hardware.reward_latency, kEvReward, q, x);
    if (cfg.family == Family::RstarDfs) dfs_on_done(qr, x);
  }

  void on_reward(const SimEvent& e) {
    QueryRun& qr = queries[e.query];
    SearchTree& tree = *qr.tree;
    const NodeId x = e.node;
    if (tree.node(x).status == NodeStatus::Pruned) return;  // branch abandoned

    const double r = qr.oracle->reward(tree, x);
    tree.node(x).reward = r;
    if (trace) {
      auto j = rec("reward");
      j["q"] = qr.qid;
      j["node"] = x;
      j["r"] = r;
      trace->emit(j);
    }

    if (tree.node(x).status == NodeStatus::Speculative) {
      tree.set_status(x, NodeStatus::SpeculativeDone);
      qr.ledger.active_expansions.erase(x);
      qr.ledger.completed_speculations[x] = r;
      return;
    }

    // Primary (or promoted) node: commit it and hand the score to the policy.
    const bool terminal = tree.node(x).terminal;
    tree.set_status(x, terminal ? NodeStatus::TerminalAnswer : NodeStatus::Committed);
    qr.pending_rewards -= 1;
    qr.batch_pending.erase(x);
    qr.cohort_pending.erase(x);
    if (cfg.family == Family::RstarDfs) backpropagate(tree, x, r);
    if (terminal) record_answer_event(qr, x, r);
  }

  // --------------------------------------------------------------------------
  // rollout-chain search (UCB over children, depth-first chains)
  // --------------------------------------------------------------------------

  void dfs_on_done(QueryRun& qr, NodeId x) {
    if (x != qr.chain_tip) return;  // a speculative completion elsewhere
    qr.chain_tip = kNoNode;
    SearchTree& tree = *qr.tree;
    if (tree.node(x).terminal) {
      // Chain reached an answer; the rollout closes when its scores land.
      qr.rollout_active = false;
      return;
    }
    // Freshly finished nodes have no children yet: the chain claims slot 0
    // in the same consumer step, ahead of any speculative planning.
    const NodeId c = spawn_child(qr, x, false, 0);
    qr.chain_tip = c;
  }

  enum class Rollout { Issued, Ended, Finished };

  Rollout dfs_one_rollout(QueryRun& qr) {
    SearchTree& tree = *qr.tree;
    NodeId x = tree.root();
    for (;;) {
      if (tree.node(x).terminal) {
        // Revisit of a known answer: one more sample for the vote.
        const double r = *tree.node(x).reward;
        backpropagate(tree, x, r);
        record_answer_event(qr, x, r);
        return qr.finished ? Rollout::Finished : Rollout::Ended;
      }
      const std::vector<NodeId> cands = tree.live_children(x);
      NodeId pick = kNoNode;
      for (NodeId c : cands)
        if (tree.node(c).visits == 0) {
          pick = c;
          break;
        }
      if (pick != kNoNode) {
        if (unpromoted_spec(tree.node(pick).status)) {
          const bool mid_gen = !tree.node(pick).gen_done;
          const bool scored = tree.node(pick).reward.has_value();
          do_promote(qr, pick);
          if (mid_gen) {
            // Adopt the running generation as the chain tip.
            qr.chain_tip = pick;
            qr.rollout_active = true;
            return Rollout::Issued;
          }
          if (scored) {
            const double r = *tree.node(pick).reward;
            backpropagate(tree, pick, r);
            if (tree.node(pick).terminal) {
              record_answer_event(qr, pick, r);
              return qr.finished ? Rollout::Finished : Rollout::Ended;
            }
          } else if (tree.node(pick).terminal) {
            // The answer's score is still in flight; the rollout closes on it.
            return Rollout::Ended;
          }
          // Unscored completions behave like any chain node: descend on.
        }
        x = pick;
        continue;
      }
      ThoughtNode& n = tree.node(x);
      if (static_cast<int>(n.children.size()) < cfg.policy.budget_at(n.depth)) {
        const NodeId c = spawn_child(qr, x, false, 0);
        qr.chain_tip = c;
        qr.rollout_active = true;
        return Rollout::Issued;
      }
      if (cands.empty()) {
        finish_query(qr, false);  // nothing left to try
        return Rollout::Finished;
      }
      x = ucb_select(tree, x, cfg.policy.exploration_c);
    }
  }

  void advance_dfs(QueryRun& qr) {
    while (!qr.finished && !qr.rollout_active && qr.pending_rewards == 0) {
      if (dfs_one_rollout(qr) != Rollout::Ended) break;
    }
  }

  // --------------------------------------------------------------------------
  // batched best-first descent (sibling batch, then follow the top score)
  // --------------------------------------------------------------------------

  void advance_rest(QueryRun& qr) {
    SearchTree& tree = *qr.tree;
    while (!qr.finished) {
      const NodeId cur = qr.rest_cur;
      const int width = cfg.policy.budget_at(tree.node(cur).depth);

      // Adopt predictions for this sibling batch.
      for (NodeId c : tree.live_children(cur)) {
        if (!unpromoted_spec(tree.node(c).status)) continue;
        do_promote(qr, c);
        const NodeStatus st = tree.node(c).status;
        if (st == NodeStatus::Expanding || st == NodeStatus::AwaitingReward) {
          qr.batch_pending.insert(c);
        } else if (tree.node(c).terminal) {
          record_answer_event(qr, c, *tree.node(c).reward);
          if (qr.finished) return;
        }
      }

      // Fill the remaining sibling slots.
      while (static_cast<int>(tree.node(cur).children.size()) < width)
        qr.batch_pending.insert(spawn_child(qr, cur, false, 0));
      if (!qr.batch_pending.empty()) return;  // stragglers still scoring

      // Whole batch scored: follow the best continuation not yet taken.
      NodeId best = kNoNode;
      for (NodeId c : tree.live_children(cur)) {
        const ThoughtNode& ch = tree.node(c);
        if (ch.terminal || ch.visits > 0 || !ch.reward.has_value()) continue;
        if (best == kNoNode || *ch.reward > *tree.node(best).reward) best = c;
      }
      if (best != kNoNode) {
        backpropagate(tree, best, *tree.node(best).reward);
        qr.rest_stack.push_back(cur);
        qr.rest_cur = best;
        continue;
      }
      if (qr.rest_stack.empty()) {
        finish_query(qr, false);
        return;
      }
      qr.rest_cur = qr.rest_stack.back();
      qr.rest_stack.pop_back();
    }
  }

  // --------------------------------------------------------------------------
  // layered frontier search (reward-weighted widths per layer)
  // --------------------------------------------------------------------------

  void advance_layer(QueryRun& qr) {
    SearchTree& tree = *qr.tree;
    while (!qr.finished) {
      if (!qr.cohort.empty()) {
        // The scored cohort's survivors become the next parent layer.
        std::vector<NodeId> next;
        for (NodeId c : qr.cohort) {
          const ThoughtNode& ch = tree.node(c);
          if (ch.status == NodeStatus::Committed && !ch.terminal) next.push_back(c);
        }
        qr.layer = std::move(next);
        qr.cohort.clear();
      }
      if (qr.layer.empty()) {
        finish_query(qr, false);
        return;
      }

      std::vector<int> widths;
      if (qr.layer.size() == 1 && qr.layer[0] == tree.root()) {
        widths = {cfg.policy.budget_at(1)};  // the root takes the full budget
      } else {
        std::vector<double> rewards;
        rewards.reserve(qr.layer.size());
        for (NodeId p : qr.layer) rewards.push_back(*tree.node(p).reward);
        const int child_depth = tree.node(qr.layer.front()).depth + 1;
        widths = rebase_widths(rewards, cfg.policy.budget_at(child_depth),
                               cfg.policy.balance_temperature);
      }

      for (std::size_t i = 0; i < qr.layer.size(); ++i) {
        const NodeId parent = qr.layer[i];
        const int w = widths[i];
        // Verify predictions: slots under the width are hits, the rest are
        // mispredictions and die immediately, finished or not.
        for (NodeId c : tree.node(parent).children) {
          if (!unpromoted_spec(tree.node(c).status)) continue;
          if (tree.node(c).slot < w) {
            const bool scored = tree.node(c).reward.has_value();
            do_promote(qr, c);
            qr.cohort.push_back(c);
            if (!scored) qr.cohort_pending.insert(c);
            if (tree.node(c).status == NodeStatus::TerminalAnswer) {
              record_answer_event(qr, c, *tree.node(c).reward);
              if (qr.finished) return;
            }
          } else {
            record_outcome(qr.ledger, c, false, qr.ledger.predicted_distance.at(c));
            update_hit_rate(qr.sched, false, cfg.budget.ema_alpha);
            if (!tree.node(c).gen_done) cancel_stream(qr, c);
            const int cnt = tree.prune_subtree(c);
            if (trace) {
              auto j = rec("prune");
              j["q"] = qr.qid;
              j["node"] = c;
              j["count"] = cnt;
              trace->emit(j);
            }
          }
        }
        while (static_cast<int>(tree.node(parent).children.size()) < w) {
          const NodeId c = spawn_child(qr, parent, false, 0);
          qr.cohort.push_back(c);
          qr.cohort_pending.insert(c);
        }
      }
      qr.layer.clear();
      if (!qr.cohort_pending.empty()) return;  // wait for the cohort's scores
    }
  }

  // --------------------------------------------------------------------------
  // speculation scheduling
  // --------------------------------------------------------------------------

  long long live_cache_tokens(const QueryRun& qr) const {
    const SearchTree& tree = *qr.tree;
    long long toks = 0;
    for (NodeId id = 0; id < static_cast<NodeId>(tree.size()); ++id) {
      const ThoughtNode& n = tree.node(id);
      if (n.status == NodeStatus::Pruned) continue;
      if (id != 0 && !n.gen_done) continue;
      toks += n.token_len;
    }
    return toks;
  }

  void issue_speculation(QueryRun& qr, int k_q) {
    if (cfg.family == Family::RebaseBfs) {
      SearchTree& tree = *qr.tree;
      std::vector<FrontierEntry> entries;
      for (NodeId c : qr.cohort) {
        const ThoughtNode& ch = tree.node(c);
        if (ch.status == NodeStatus::Pruned || ch.terminal) continue;
        FrontierEntry fe;
        fe.node = c;
        fe.finished = ch.reward.has_value();
        fe.reward = fe.finished ? *ch.reward : 0.0;
        entries.push_back(fe);
      }
      if (entries.empty()) return;
      const auto alloc = bfs_speculative_allocate(entries, cfg.policy);
      int left = k_q;
      for (const auto& [parent, w] : alloc) {
        while (left > 0 && static_cast<int>(tree.node(parent).children.size()) < w) {
          spawn_child(qr, parent, true, 1);
          left -= 1;
        }
        if (left == 0) break;
      }
      return;
    }
    const SpeculationPlan plan =
        dfs_speculative_select(*qr.tree, qr.ledger, k_q, cfg.policy);
    for (const SpecTarget& t : plan.targets)
      spawn_child(qr, t.node, true, t.predicted_distance);
  }

  void scheduling_round() {
    if (!fl.t1) return;

    std::vector<int> cand;
    std::vector<QueryState> states;
    for (int q = 0; q < static_cast<int>(queries.size()); ++q) {
      QueryRun& qr = queries[q];
      if (!qr.admitted || qr.finished) continue;
      const int outstanding = static_cast<int>(qr.ledger.active_expansions.size());
      const int cap = cfg.spec_k - outstanding;
      if (cap <= 0) continue;
      qr.sched.query_id = q;
      qr.sched.capacity = cap;
      qr.sched.pending_speculations = outstanding;
      if (fl.t2)
        qr.sched.kv_bytes = cfg.hardware.kv_bytes_per_token * live_cache_tokens(qr);
      cand.push_back(q);
      states.push_back(qr.sched);
    }
    if (cand.empty()) return;

    std::vector<int> grant(cand.size(), 0);
    if (fl.t2) {
      // Budgeting spends only the concurrency the roofline says is free;
      // past that point extra streams dilute everyone's step time.
      const int idle = producer_slots - engine.stream_count();
      if (idle <= 0) return;
      grant = allocate_budgets(states, idle, cfg.budget.tau, cfg.hardware);
    } else {
      // Bare speculation fills every query to its cap and lets the decode
      // engine's batch scaling be the backpressure.
      for (std::size_t i = 0; i < cand.size(); ++i) grant[i] = states[i].capacity;
    }
    for (std::size_t i = 0; i < cand.size(); ++i)
      if (grant[i] > 0) issue_speculation(queries[cand[i]], grant[i]);
  }

  // --------------------------------------------------------------------------
  // the consumer loop
  // --------------------------------------------------------------------------

  void consumer_step_followups() {
    for (int q = 0; q < static_cast<int>(queries.size()); ++q) {
      QueryRun& qr = queries[q];
      if (!qr.admitted || qr.finished) continue;
      switch (cfg.family) {
        case Family::RstarDfs:
          if (!qr.rollout_active && qr.pending_rewards == 0) advance_dfs(qr);
          break;
        case Family::RestHybrid:
          if (qr.batch_pending.empty()) advance_rest(qr);
          break;
        case Family::RebaseBfs:
          if (qr.cohort_pending.empty()) advance_layer(qr);
          break;
      }
    }
    scheduling_round();
  }

  void admit(int q) {
    admitted_count += 1;
    QueryRun& qr = queries[q];
    qr.qid = q;
    qr.seed = profiles[q].seed;
    qr.golden = profiles[q].golden_label;
    qr.tree = std::make_unique<SearchTree>(cfg.workload.prompt_tokens, qr.seed);
    qr.oracle = std::make_unique<RewardOracle>(qr.seed, cfg.workload, cfg.policy.max_depth);
    qr.sched.query_id = q;
    qr.sched.hit_ema = cfg.budget.initial_hit_ema;
    qr.admitted = true;
    if (cfg.family == Family::RebaseBfs) qr.layer = {qr.tree->root()};
    if (trace) {
      auto j = rec("admit");
      j["q"] = q;
      j["seed"] = qr.seed;
      trace->emit(j);
    }
  }

  void main_loop() {
    std::vector<DecodeEngine::Finished> fins;
    while (finished_count < static_cast<int>(queries.size())) {
      const double t_evt = clock.has_events() ? clock.next_time() : kInf;
      if (engine.has_work()) {
        fins.clear();
        engine_now = engine.advance(engine_now, t_evt, fins);
        if (!fins.empty()) {
          if (now < engine_now) now = engine_now;
          for (const auto& f : fins) on_stream_done(f);
          consumer_step_followups();
          continue;
        }
      }
      if (!clock.has_events())
        throw Error(Errc::NothingExpandable, "scheduler stalled with queries unfinished");
      const SimEvent e = clock.pop();
      if (now < e.time) now = e.time;
      if (!engine.has_work() && engine_now < e.time) engine_now = e.time;
      if (e.kind == kEvReward) on_reward(e);
      consumer_step_followups();
    }
  }

  RunTotals run() {
    if (ran) throw Error(Errc::InvalidArgument, "run() may be called once");
    ran = true;
    cfg.validate();

    const int n = cfg.n_queries;
    profiles = generate_workload(n, cfg.workload, run_seed, cfg.policy.max_depth);
    queries.resize(n);
    producer_slots =
        std::max(1, std::min(cfg.max_producers, roofline_k_total(cfg.hardware, 0)));

    if (trace) {
      nlohmann::ordered_json cj = cfg.to_json();
      nlohmann::ordered_json fj = nlohmann::ordered_json::array();
      if (fl.t1) fj.push_back("t1");
      if (fl.t2) fj.push_back("t2");
      if (fl.t3) fj.push_back("t3");
      cj["run"]["flags"] = fj;
      auto j = rec("run_begin");
      j["seed"] = run_seed;
      j["config"] = cj;
      trace->emit(j);
    }

    const int first = std::min(cfg.batch_size, n);
    for (int q = 0; q < first; ++q) admit(q);
    consumer_step_followups();
    main_loop();

    now = totals.makespan;
    if (trace) {
      auto j = rec("run_end");
      j["makespan"] = totals.makespan;
      j["generated"] = totals.generated_tokens;
      j["committed"] = totals.committed_tokens;
      j["reused"] = totals.reused_tokens;
      j["wasted"] = totals.wasted_tokens;
      j["queries"] = totals.queries;
      trace->emit(j);
      trace->flush();
    }
    return totals;
  }
};

Executor::Executor(const ExperimentConfig& cfg, std::uint64_t run_seed, const SpexFlags& active,
                   TraceWriter* trace)
    : impl_(std::make_unique<Impl>(cfg, run_seed, active, trace)) {}

Executor::~Executor() = default;

RunTotals Executor::run() { return impl_->run(); }

}  // namespace totsim
