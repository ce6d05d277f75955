#include "totsim/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "totsim/rng.hpp"

namespace totsim {

namespace {

constexpr double kTimeEps = 1e-9;  // slack for boundary-vs-event comparisons

std::uint64_t member_key(const SearchTree* tree, NodeId node) {
  return rng::mix(reinterpret_cast<std::uintptr_t>(tree) >> 4, node);
}

}  // namespace

// ----------------------------------------------------------------------------
// SimClock
// ----------------------------------------------------------------------------

void SimClock::push(double time, int kind, int query, NodeId node, int stream) {
  SimEvent e;
  e.time = time;
  e.seq = seq_++;
  e.kind = kind;
  e.query = query;
  e.node = node;
  e.stream = stream;
  queue_.push(e);
}

double SimClock::next_time() const {
  if (queue_.empty()) return std::numeric_limits<double>::infinity();
  return queue_.top().time;
}

SimEvent SimClock::pop() {
  if (queue_.empty()) throw Error(Errc::InvalidArgument, "SimClock::pop on empty queue");
  SimEvent e = queue_.top();
  queue_.pop();
  if (e.time > now_) now_ = e.time;
  return e;
}

// ----------------------------------------------------------------------------
// Roofline step cost
// ----------------------------------------------------------------------------

long long unique_kv_tokens(const std::vector<BatchMember>& batch) {
  long long total = 0;
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(batch.size() * 8);
  for (const BatchMember& m : batch) {
    total += m.partial_tokens;
    NodeId cur = m.tree->node(m.node).parent;
    while (cur != kNoNode) {
      if (!seen.insert(member_key(m.tree, cur)).second) break;  // prefix already counted
      total += m.tree->node(cur).token_len;
      cur = m.tree->node(cur).parent;
    }
  }
  return total;
}

StepCost step_cost(const std::vector<BatchMember>& batch, const HardwareProfile& hw) {
  if (batch.empty()) throw Error(Errc::EmptyBatch, "step_cost on empty batch");
  hw.validate();
  StepCost c;
  c.compute_s = static_cast<double>(batch.size()) * hw.flops_per_token / hw.peak_compute;
  double kv_bytes = hw.kv_bytes_per_token * static_cast<double>(unique_kv_tokens(batch));
  c.memory_s = (hw.weight_bytes + kv_bytes) / hw.mem_bandwidth;
  return c;
}

double step_latency(const std::vector<BatchMember>& batch, const HardwareProfile& hw) {
  return step_cost(batch, hw).total();
}

// ----------------------------------------------------------------------------
// WorkloadSpec / RewardOracle
// ----------------------------------------------------------------------------

void WorkloadSpec::validate() const {
  auto fail = [](const char* what) { throw Error(Errc::ConfigInvalid, what); };
  if (token_min < 1 || token_max < token_min) fail("workload: bad token bounds");
  if (!(token_sigma >= 0.0) || !std::isfinite(token_mu)) fail("workload: bad token distribution");
  if (shallow_min < 1 || shallow_max < shallow_min) fail("workload: bad shallow depth range");
  if (deep_min <= shallow_max || deep_max < deep_min) fail("workload: deep range must sit above shallow range");
  if (shallow_p < 0.0 || shallow_p > 1.0 || deep_p < 0.0 || deep_p > 1.0) fail("workload: bad stop probability");
  if (skew < 0.0 || skew > 1.0) fail("workload: bad skew");
  if (golden_density < 0.0 || golden_density > 1.0) fail("workload: bad golden density");
  if (reward_on < 0.0 || reward_on > 1.0 || reward_off < 0.0 || reward_off > 1.0) fail("workload: rewards outside [0,1]");
  if (noise_sigma < 0.0) fail("workload: negative noise sigma");
  if (correct_base <= 0.0 || correct_base > 1.0 || correct_slope < 0.0 || correct_floor < 0.0 ||
      correct_floor > correct_base)
    fail("workload: bad correctness curve");
  if (answer_alphabet < 2) fail("workload: alphabet needs at least two labels");
  if (prompt_tokens < 0) fail("workload: negative prompt length");
}

RewardOracle::RewardOracle(std::uint64_t query_seed, const WorkloadSpec& wl, int max_depth)
    : query_seed_(query_seed), wl_(wl), max_depth_(max_depth) {
  wl_.validate();
  if (max_depth_ < 1) throw Error(Errc::ConfigInvalid, "oracle: max_depth < 1");
}

int RewardOracle::token_len(std::uint64_t child_hash) const {
  return rng::lognormal_tokens(child_hash, rng::kSaltTokens, wl_.token_mu, wl_.token_sigma,
                               wl_.token_min, wl_.token_max);
}

bool RewardOracle::deep_dominant(const SearchTree& tree, NodeId id) const {
  // The root branch (depth-1 ancestor) decides the depth regime for the
  // whole subtree.
  const ThoughtNode* n = &tree.node(id);
  if (n->depth == 0) return false;
  while (n->depth > 1) n = &tree.node(n->parent);
  return rng::uniform01(n->path_hash, rng::kSaltDeep) < wl_.skew;
}

bool RewardOracle::is_terminal(const SearchTree& tree, NodeId id) const {
  const ThoughtNode& n = tree.node(id);
  if (n.depth == 0) return false;
  bool deep = deep_dominant(tree, id);
  int lo = deep ? wl_.deep_min : wl_.shallow_min;
  int hi = deep ? wl_.deep_max : wl_.shallow_max;
  double p = deep ? wl_.deep_p : wl_.shallow_p;
  if (hi > max_depth_) hi = max_depth_;
  if (n.depth >= hi) return true;
  if (n.depth < lo) return false;
  return rng::uniform01(n.path_hash, rng::kSaltTerminal) < p;
}

bool RewardOracle::on_golden_path(const SearchTree& tree, NodeId id) const {
  for (const ThoughtNode* n = &tree.node(id); n->depth > 0; n = &tree.node(n->parent)) {
    if (rng::uniform01(n->path_hash, rng::kSaltGolden) >= wl_.golden_density) return false;
  }
  return true;
}

double RewardOracle::reward(const SearchTree& tree, NodeId id) const {
  double base = on_golden_path(tree, id) ? wl_.reward_on : wl_.reward_off;
  double r = base;
  if (wl_.noise_sigma > 0.0)
    r += wl_.noise_sigma * rng::normal01(tree.node(id).path_hash, rng::kSaltNoise);
  return std::clamp(r, 0.0, 1.0);
}

std::string RewardOracle::golden_label() const {
  auto idx = rng::splitmix64(query_seed_ ^ rng::kSaltLabel) %
             static_cast<std::uint64_t>(wl_.answer_alphabet);
  return "a" + std::to_string(idx);
}

std::string RewardOracle::answer_label(const SearchTree& tree, NodeId id) const {
  const ThoughtNode& n = tree.node(id);
  double p = wl_.correct_base - wl_.correct_slope * n.depth;
  p = std::clamp(p, wl_.correct_floor, wl_.correct_base);
  if (rng::uniform01(n.path_hash, rng::kSaltCorrect) < p) return golden_label();
  auto alpha = static_cast<std::uint64_t>(wl_.answer_alphabet);
  auto gold = rng::splitmix64(query_seed_ ^ rng::kSaltLabel) % alpha;
  auto off = 1 + rng::splitmix64(n.path_hash ^ rng::kSaltLabel) % (alpha - 1);
  return "a" + std::to_string((gold + off) % alpha);
}

std::vector<QueryProfile> generate_workload(int n_queries, const WorkloadSpec& wl,
                                            std::uint64_t seed, int max_depth) {
  wl.validate();
  if (n_queries < 0) throw Error(Errc::InvalidArgument, "generate_workload: negative count");
  std::vector<QueryProfile> out;
  out.reserve(static_cast<std::size_t>(n_queries));
  std::uint64_t base = rng::splitmix64(seed ^ rng::kSaltQuery);
  for (int q = 0; q < n_queries; ++q) {
    QueryProfile p;
    p.seed = rng::mix(base, static_cast<std::uint64_t>(q) + 1);
    RewardOracle oracle(p.seed, wl, max_depth);
    p.golden_label = oracle.golden_label();
    // Reference walk: one hash-driven path down to a terminal node.
    SearchTree probe(wl.prompt_tokens, p.seed);
    NodeId cur = probe.root();
    for (;;) {
      int slot = static_cast<int>(rng::splitmix64(probe.node(cur).path_hash ^ rng::kSaltQuery) % 4);
      std::uint64_t child_hash = rng::extend_hash(probe.node(cur).path_hash, slot);
      NodeId child = probe.add_node(cur, oracle.token_len(child_hash), false);
      probe.node(child).path_hash = child_hash;  // walk follows `slot`, not the dense slot index
      cur = child;
      if (oracle.is_terminal(probe, cur)) break;
    }
    p.probe_depth = probe.node(cur).depth;
    out.push_back(std::move(p));
  }
  return out;
}

// ----------------------------------------------------------------------------
// DecodeEngine
// ----------------------------------------------------------------------------

void DecodeEngine::add_stream(int id, const SearchTree* tree, NodeId node, int tokens,
                              double ready) {
  if (tokens <= 0) throw Error(Errc::InvalidArgument, "add_stream: non-positive token budget");
  if (tree == nullptr) throw Error(Errc::InvalidArgument, "add_stream: null tree");
  Stream s;
  s.id = id;
  s.tree = tree;
  s.node = node;
  s.remaining = tokens;
  s.ready = ready;
  staged_.push_back(s);
}

bool DecodeEngine::cancel(int id) {
  for (Stream& s : active_) {
    if (s.id == id && !s.cancelled) {
      // Leaves at the next step boundary, keeping the partial output.
      s.cancelled = true;
      s.remaining = 1;
      return true;
    }
  }
  for (auto it = staged_.begin(); it != staged_.end(); ++it) {
    if (it->id == id) {
      staged_.erase(it);  // never started: nothing generated, nothing reported
      return false;
    }
  }
  return true;
}

void DecodeEngine::drop(int id) {
  for (auto it = active_.begin(); it != active_.end(); ++it) {
    if (it->id == id) {
      active_.erase(it);
      dirty_ = true;
      return;
    }
  }
  for (auto it = staged_.begin(); it != staged_.end(); ++it) {
    if (it->id == id) {
      staged_.erase(it);
      return;
    }
  }
}

int DecodeEngine::done_tokens(int id) const {
  for (const Stream& s : active_)
    if (s.id == id) return s.done;
  for (const Stream& s : staged_)
    if (s.id == id) return s.done;
  return 0;
}

double DecodeEngine::next_ready() const {
  double r = std::numeric_limits<double>::infinity();
  for (const Stream& s : staged_) r = std::min(r, s.ready);
  return r;
}

void DecodeEngine::refresh_costs() {
  std::vector<BatchMember> batch;
  batch.reserve(active_.size());
  for (const Stream& s : active_) batch.push_back({s.tree, s.node, s.done});
  StepCost c = step_cost(batch, hw_);
  // Memory time grows linearly: each step appends one token per stream.
  compute_ = c.compute_s;
  mem_a_ = c.memory_s;
  mem_d_ = hw_.kv_bytes_per_token * static_cast<double>(active_.size()) / hw_.mem_bandwidth;
  dirty_ = false;
}

double DecodeEngine::elapsed(int steps) const {
  if (steps <= 0) return 0.0;
  double m = static_cast<double>(steps);
  if (mem_d_ <= 0.0) return m * std::max(compute_, mem_a_);
  // Steps 0..i0-1 are compute-bound, the rest memory-bound.
  int i0 = 0;
  if (compute_ > mem_a_) {
    double cross = (compute_ - mem_a_) / mem_d_;
    i0 = std::min(steps, static_cast<int>(std::floor(cross)) + 1);
  }
  double tail = static_cast<double>(steps - i0);
  return i0 * compute_ + tail * mem_a_ + mem_d_ * (static_cast<double>(i0) + m - 1.0) * tail / 2.0;
}

int DecodeEngine::steps_within(double budget, int max_steps) const {
  if (budget < -kTimeEps || max_steps <= 0) return 0;
  if (elapsed(max_steps) <= budget + kTimeEps) return max_steps;
  int lo = 0, hi = max_steps;  // elapsed(lo) fits, elapsed(hi) does not
  while (hi - lo > 1) {
    int mid = lo + (hi - lo) / 2;
    if (elapsed(mid) <= budget + kTimeEps)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

double DecodeEngine::advance(double now, double limit, std::vector<Finished>& out) {
  for (;;) {
    // Admit staged streams whose ready time has arrived.
    bool joined = false;
    for (auto it = staged_.begin(); it != staged_.end();) {
      if (it->ready <= now + kTimeEps) {
        active_.push_back(*it);
        it = staged_.erase(it);
        joined = true;
      } else {
        ++it;
      }
    }
    if (joined) dirty_ = true;

    if (active_.empty()) {
      if (staged_.empty()) return limit;
      double r = next_ready();
      if (r > limit + kTimeEps) return limit;
      now = r;
      continue;
    }

    if (dirty_) refresh_costs();

    int m_complete = active_.front().remaining;
    for (const Stream& s : active_) m_complete = std::min(m_complete, s.remaining);

    int m_limit = steps_within(limit - now, m_complete);

    // A pending join interrupts the epoch at its first reachable boundary.
    int target = m_complete;
    if (!staged_.empty()) {
      double r = next_ready();
      int cap = std::min(m_complete, m_limit);
      if (cap >= 1 && now + elapsed(cap) >= r - kTimeEps) {
        int lo = 1, hi = cap;  // elapsed(hi) reaches r
        while (hi > lo) {
          int mid = lo + (hi - lo) / 2;
          if (now + elapsed(mid) >= r - kTimeEps)
            hi = mid;
          else
            lo = mid + 1;
        }
        target = lo;
      }
    }

    if (target > m_limit) {
      // Partial epoch: stop at the last boundary inside the window.
      if (m_limit > 0) {
        now += elapsed(m_limit);
        for (Stream& s : active_) {
          s.done += m_limit;
          s.remaining -= m_limit;
        }
        dirty_ = true;  // memory term moved with the longer prefixes
      }
      return now;
    }

    now += elapsed(target);
    bool finished_any = false;
    for (Stream& s : active_) {
      s.done += target;
      s.remaining -= target;
    }
    for (auto it = active_.begin(); it != active_.end();) {
      if (it->remaining <= 0) {
        out.push_back({it->id, it->node, it->done, it->cancelled, now});
        it = active_.erase(it);
        finished_any = true;
      } else {
        ++it;
      }
    }
    dirty_ = true;
    if (finished_any) return now;
  }
}

}  // namespace totsim
