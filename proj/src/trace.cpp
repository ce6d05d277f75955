#include "totsim/trace.hpp"

#include <cmath>
#include <map>
#include <set>

#include "totsim/errors.hpp"
#include "totsim/tree.hpp"

namespace totsim {

using nlohmann::ordered_json;

// ----------------------------------------------------------------------------
// TraceWriter
// ----------------------------------------------------------------------------

TraceWriter TraceWriter::to_file(const std::string& path) {
  TraceWriter w;
  w.file_.open(path, std::ios::out | std::ios::trunc);
  if (!w.file_) throw Error(Errc::IoFailure, "cannot open trace file: " + path);
  w.to_file_ = true;
  return w;
}

TraceWriter TraceWriter::to_memory() {
  TraceWriter w;
  w.keep_lines_ = true;
  return w;
}

void TraceWriter::emit(const ordered_json& record) {
  std::string line = record.dump();
  if (to_file_) file_ << line << '\n';
  if (keep_lines_) lines_.push_back(std::move(line));
}

void TraceWriter::flush() {
  if (to_file_) file_.flush();
}

std::vector<ordered_json> read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoFailure, "cannot open trace file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  if (lines.empty()) throw Error(Errc::IncompleteLog, "empty trace: " + path);
  return parse_trace_lines(lines);
}

std::vector<ordered_json> parse_trace_lines(const std::vector<std::string>& lines) {
  std::vector<ordered_json> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    ordered_json j = ordered_json::parse(lines[i], nullptr, false);
    if (j.is_discarded())
      throw Error(Errc::IncompleteLog, "malformed trace line " + std::to_string(i + 1));
    out.push_back(std::move(j));
  }
  return out;
}

// ----------------------------------------------------------------------------
// Replay validation
// ----------------------------------------------------------------------------

namespace {

constexpr std::size_t kMaxProblems = 32;

struct NodeState {
  bool declared = false;
  bool spec = false;
  bool terminal = false;
  bool done_seen = false;
  bool promoted = false;
  bool rewarded = false;
  int planned_tokens = 0;
  long long gen_total = 0;
  long long ready = 0;
  NodeStatus status = NodeStatus::Committed;
  std::vector<std::uint32_t> children;
};

struct QueryState {
  bool admitted = false;
  bool finished = false;
  bool terminated = false;
  std::map<std::uint32_t, NodeState> nodes;
};

class Replayer {
 public:
  ReplayReport run(const std::vector<ordered_json>& events) {
    if (events.empty()) {
      flag("empty event list");
      return finish();
    }
    if (kind(events.front()) != "run_begin") flag("first event is not run_begin");
    if (kind(events.back()) != "run_end") flag("last event is not run_end");

    double prev_t = -1.0;
    for (std::size_t i = 0; i < events.size(); ++i) {
      const ordered_json& e = events[i];
      line_ = i + 1;
      if (!e.contains("t") || !e.contains("ev")) {
        flag("record missing t/ev");
        continue;
      }
      double t = e["t"].get<double>();
      if (t + 1e-12 < prev_t) flag("timestamps decrease");
      prev_t = std::max(prev_t, t);
      dispatch(kind(e), e);
      if (report_.problems.size() >= kMaxProblems) break;
    }
    return finish();
  }

 private:
  static std::string kind(const ordered_json& e) {
    return e.contains("ev") ? e["ev"].get<std::string>() : std::string();
  }

  void flag(const std::string& msg) {
    if (report_.problems.size() < kMaxProblems)
      report_.problems.push_back("line " + std::to_string(line_) + ": " + msg);
    report_.ok = false;
  }

  /** Status change guarded by the tree module's legality table. */
  void move_status(NodeState& n, NodeStatus to, const char* why) {
    if (!transition_legal(n.status, to))
      flag(std::string(why) + ": illegal transition " + status_name(n.status) + " -> " +
           status_name(to));
    n.status = to;
  }

  QueryState* query(const ordered_json& e) {
    if (!e.contains("q")) {
      flag("event missing q");
      return nullptr;
    }
    int q = e["q"].get<int>();
    auto it = queries_.find(q);
    if (it == queries_.end()) {
      flag("event for unadmitted query " + std::to_string(q));
      return nullptr;
    }
    return &it->second;
  }

  NodeState* node_of(QueryState& qs, const ordered_json& e) {
    if (!e.contains("node")) {
      flag("event missing node");
      return nullptr;
    }
    auto id = e["node"].get<std::uint32_t>();
    auto it = qs.nodes.find(id);
    if (it == qs.nodes.end() || !it->second.declared) {
      flag("event for undeclared node " + std::to_string(id));
      return nullptr;
    }
    return &it->second;
  }

  void dispatch(const std::string& ev, const ordered_json& e) {
    if (ev == "run_begin") {
      if (begun_) flag("duplicate run_begin");
      begun_ = true;
    } else if (ev == "admit") {
      on_admit(e);
    } else if (ev == "node") {
      on_node(e);
    } else if (ev == "req") {
      on_req(e);
    } else if (ev == "done") {
      on_done(e);
    } else if (ev == "reward") {
      on_reward(e);
    } else if (ev == "promote") {
      on_promote(e);
    } else if (ev == "prune") {
      on_prune(e);
    } else if (ev == "answer") {
      on_answer(e);
    } else if (ev == "terminate") {
      on_terminate(e);
    } else if (ev == "query_done") {
      on_query_done(e);
    } else if (ev == "run_end") {
      on_run_end(e);
    } else {
      flag("unknown event kind: " + ev);
    }
  }

  void on_admit(const ordered_json& e) {
    int q = e["q"].get<int>();
    if (queries_.count(q)) {
      flag("query admitted twice");
      return;
    }
    QueryState qs;
    qs.admitted = true;
    NodeState root;
    root.declared = true;
    root.done_seen = true;
    root.status = NodeStatus::Committed;
    qs.nodes[0] = root;
    queries_[q] = std::move(qs);
  }

  void on_node(const ordered_json& e) {
    QueryState* qs = query(e);
    if (!qs) return;
    if (qs->finished) flag("node declared after query_done");
    auto id = e["node"].get<std::uint32_t>();
    auto parent = e["parent"].get<std::uint32_t>();
    if (qs->nodes.count(id)) {
      flag("node declared twice");
      return;
    }
    auto pit = qs->nodes.find(parent);
    if (pit == qs->nodes.end()) {
      flag("child of undeclared parent");
      return;
    }
    if (pit->second.status == NodeStatus::Pruned) flag("child of pruned parent");
    int slot = e["slot"].get<int>();
    if (slot != static_cast<int>(pit->second.children.size()))
      flag("slot " + std::to_string(slot) + " out of claim order");
    pit->second.children.push_back(id);
    NodeState n;
    n.declared = true;
    n.spec = e["spec"].get<bool>();
    n.terminal = e["terminal"].get<bool>();
    n.planned_tokens = e["tokens"].get<int>();
    n.status = n.spec ? NodeStatus::Speculative : NodeStatus::Expanding;
    qs->nodes[id] = n;
  }

  void on_req(const ordered_json& e) {
    QueryState* qs = query(e);
    if (!qs) return;
    NodeState* n = node_of(*qs, e);
    if (!n) return;
    auto key = std::make_pair(e["q"].get<int>(), e["node"].get<std::uint32_t>());
    if (!requested_.insert(key).second) flag("duplicate generation request for node");
    if (e["spec"].get<bool>() != n->spec) flag("request/node speculative tag mismatch");
  }

  void on_done(const ordered_json& e) {
    QueryState* qs = query(e);
    if (!qs) return;
    NodeState* n = node_of(*qs, e);
    if (!n) return;
    if (n->done_seen) {
      flag("second completion for node");
      return;
    }
    n->done_seen = true;
    n->gen_total = e["tokens"].get<long long>();
    report_.generated += n->gen_total;
    bool stale = e["stale"].get<bool>();
    if (stale != (n->status == NodeStatus::Pruned)) flag("stale flag disagrees with prune state");
    if (n->status == NodeStatus::Pruned) return;  // late completion of cancelled work
    bool cancelled = e["cancelled"].get<bool>();
    if (!cancelled && n->gen_total != n->planned_tokens)
      flag("full completion with unexpected token count");
    if (n->spec && !n->promoted) {
      if (n->status != NodeStatus::Speculative) flag("completion in state " + std::string(status_name(n->status)));
    } else {
      move_status(*n, NodeStatus::AwaitingReward, "done");
    }
  }

  void on_reward(const ordered_json& e) {
    QueryState* qs = query(e);
    if (!qs) return;
    NodeState* n = node_of(*qs, e);
    if (!n) return;
    if (n->status == NodeStatus::Pruned) {
      flag("reward for pruned node");
      return;
    }
    if (!n->done_seen) flag("reward before completion");
    if (n->rewarded) flag("second reward for node");
    n->rewarded = true;
    if (n->spec && !n->promoted)
      move_status(*n, NodeStatus::SpeculativeDone, "reward");
    else
      move_status(*n, n->terminal ? NodeStatus::TerminalAnswer : NodeStatus::Committed, "reward");
  }

  void on_promote(const ordered_json& e) {
    QueryState* qs = query(e);
    if (!qs) return;
    NodeState* n = node_of(*qs, e);
    if (!n) return;
    if (!n->spec || n->promoted || n->status == NodeStatus::Pruned) {
      flag("promote on non-promotable node");
      return;
    }
    n->promoted = true;
    n->ready = e["ready"].get<long long>();
    if (n->ready < 0 || n->ready > n->planned_tokens) flag("promote ready tokens out of range");
    if (n->status == NodeStatus::SpeculativeDone) {
      if (n->ready != n->gen_total) flag("scored promote must reuse the full generation");
      move_status(*n, n->terminal ? NodeStatus::TerminalAnswer : NodeStatus::Committed, "promote");
    } else if (n->done_seen) {
      move_status(*n, NodeStatus::AwaitingReward, "promote");
    } else {
      move_status(*n, NodeStatus::Expanding, "promote");
    }
  }

  void on_prune(const ordered_json& e) {
    QueryState* qs = query(e);
    if (!qs) return;
    NodeState* n = node_of(*qs, e);
    if (!n) return;
    // Tombstone the whole declared subtree and check the reported count.
    std::vector<std::uint32_t> stack{e["node"].get<std::uint32_t>()};
    int count = 0;
    while (!stack.empty()) {
      auto id = stack.back();
      stack.pop_back();
      NodeState& cur = qs->nodes[id];
      for (auto c : cur.children) stack.push_back(c);
      if (cur.status == NodeStatus::Pruned) continue;
      move_status(cur, NodeStatus::Pruned, "prune");
      ++count;
    }
    if (count != e["count"].get<int>()) flag("prune count mismatch");
  }

  void on_answer(const ordered_json& e) {
    QueryState* qs = query(e);
    if (!qs) return;
    NodeState* n = node_of(*qs, e);
    if (!n) return;
    if (!n->terminal) flag("answer from non-terminal node");
    if (n->status != NodeStatus::TerminalAnswer) flag("answer before terminal commit");
    if (!(e["weight"].get<double>() >= 0.0)) flag("negative answer weight");
  }

  void on_terminate(const ordered_json& e) {
    QueryState* qs = query(e);
    if (!qs) return;
    if (qs->terminated) flag("query terminated twice");
    qs->terminated = true;
  }

  void on_query_done(const ordered_json& e) {
    QueryState* qs = query(e);
    if (!qs) return;
    if (qs->finished) {
      flag("query finished twice");
      return;
    }
    qs->finished = true;
    report_.queries += 1;
    if (e["early"].get<bool>() && !qs->terminated) flag("early finish without terminate event");
  }

  void on_run_end(const ordered_json& e) {
    for (const auto& [q, qs] : queries_) {
      if (!qs.finished) flag("query " + std::to_string(q) + " never finished");
      for (const auto& [id, n] : qs.nodes) {
        if (id == 0) continue;
        if (n.status != NodeStatus::Committed && n.status != NodeStatus::TerminalAnswer &&
            n.status != NodeStatus::Pruned)
          flag("query " + std::to_string(q) + " node " + std::to_string(id) +
               " left in state " + status_name(n.status));
        bool useful =
            n.status == NodeStatus::Committed || n.status == NodeStatus::TerminalAnswer;
        if (useful && !n.done_seen) flag("useful node without completion");
        if (useful) {
          report_.reused += n.promoted ? n.ready : 0;
          report_.committed += n.gen_total - (n.promoted ? n.ready : 0);
        } else {
          report_.wasted += n.gen_total;
        }
      }
    }
    if (report_.generated != report_.committed + report_.reused + report_.wasted)
      flag("token conservation identity broken");
    auto check = [&](const char* key, long long mine) {
      if (e[key].get<long long>() != mine)
        flag(std::string("run_end ") + key + " disagrees with replay");
    };
    check("generated", report_.generated);
    check("committed", report_.committed);
    check("reused", report_.reused);
    check("wasted", report_.wasted);
    if (e["queries"].get<int>() != report_.queries) flag("run_end queries disagrees with replay");
    report_.makespan = e["makespan"].get<double>();
    if (std::abs(report_.makespan - e["t"].get<double>()) > 1e-9)
      flag("run_end timestamp disagrees with makespan");
  }

  ReplayReport finish() {
    report_.ok = report_.problems.empty();
    return report_;
  }

  ReplayReport report_;
  std::map<int, QueryState> queries_;
  std::set<std::pair<int, std::uint32_t>> requested_;
  std::size_t line_ = 0;
  bool begun_ = false;
};

}  // namespace

ReplayReport validate_trace(const std::vector<ordered_json>& events) {
  Replayer r;
  try {
    return r.run(events);
  } catch (const ordered_json::exception& ex) {
    ReplayReport bad;
    bad.ok = false;
    bad.problems.push_back(std::string("malformed record: ") + ex.what());
    return bad;
  }
}

}  // namespace totsim
