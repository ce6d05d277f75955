#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "totsim/rng.hpp"
#include "totsim/sim.hpp"

using namespace totsim;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

TEST_CASE("sim: the clock pops events in time order, ties by insertion") {
  SimClock clock;
  clock.push(2.0, 1, 0, kNoNode);
  clock.push(1.0, 2, 0, kNoNode);
  clock.push(1.0, 3, 0, kNoNode);
  clock.push(3.0, 4, 0, kNoNode);

  CHECK(clock.next_time() == 1.0);
  CHECK(clock.pop().kind == 2);
  CHECK(clock.pop().kind == 3);  // same timestamp: first pushed wins
  CHECK(clock.now() == 1.0);
  CHECK(clock.pop().kind == 1);
  CHECK(clock.pop().kind == 4);
  CHECK(clock.now() == 3.0);

  SUBCASE("time never runs backwards") {
    clock.advance_to(2.5);
    CHECK(clock.now() == 3.0);
    clock.advance_to(4.5);
    CHECK(clock.now() == 4.5);
  }
  SUBCASE("an empty queue has no next event") {
    CHECK_FALSE(clock.has_events());
    CHECK(clock.next_time() == kInf);
    try {
      clock.pop();
      FAIL("expected InvalidArgument");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::InvalidArgument);
    }
  }
}

TEST_CASE("sim: step cost follows the roofline with prefix sharing") {
  HardwareProfile hw;  // weights 14e9, bw 7e11, peak 1e14, flops 14e9, kv 0

  SearchTree t(32, 9);
  NodeId parent = t.add_node(t.root(), 100, false);
  NodeId c1 = t.add_node(parent, 60, false);
  NodeId c2 = t.add_node(parent, 60, false);
  NodeId parent2 = t.add_node(t.root(), 100, false);
  NodeId c3 = t.add_node(parent2, 60, false);

  SUBCASE("shared prefixes are cached once") {
    // Siblings: own partials plus parent(100) + root(32) counted once.
    CHECK(unique_kv_tokens({{&t, c1, 10}, {&t, c2, 20}}) == 162);
    // Cousins: the second 100-token parent is a fresh prefix.
    CHECK(unique_kv_tokens({{&t, c1, 10}, {&t, c3, 20}}) == 262);
    // Same member repeated: partials double, the chain does not.
    CHECK(unique_kv_tokens({{&t, c1, 10}, {&t, c1, 10}}) == 152);
  }
  SUBCASE("a lone stream with no cache traffic pays the weight fetch") {
    StepCost c = step_cost({{&t, c1, 0}}, hw);
    CHECK(c.memory_s == 14e9 / 7e11);
    CHECK(c.compute_s == 14e9 / 1e14);
    CHECK_FALSE(c.compute_bound());
    CHECK(step_latency({{&t, c1, 0}}, hw) == 14e9 / 7e11);
  }
  SUBCASE("the 100-token prefix gap prices in exactly") {
    hw.kv_bytes_per_token = 7e5;
    double shared = step_cost({{&t, c1, 10}, {&t, c2, 20}}, hw).memory_s;
    double split = step_cost({{&t, c1, 10}, {&t, c3, 20}}, hw).memory_s;
    CHECK(split - shared == doctest::Approx(100 * 7e5 / 7e11).epsilon(1e-9));
    CHECK(split > shared);
  }
  SUBCASE("the compute bound takes over at the roofline knee") {
    std::vector<BatchMember> batch;
    for (int i = 0; i < 143; ++i) batch.push_back({&t, t.add_node(t.root(), 5, false), 0});
    StepCost at_knee = step_cost(batch, hw);
    CHECK(at_knee.compute_bound());
    batch.pop_back();
    StepCost below = step_cost(batch, hw);
    CHECK_FALSE(below.compute_bound());
    // Both sides sit within one token's compute quantum of the crossing.
    double quantum = hw.flops_per_token / hw.peak_compute;
    CHECK(std::abs(at_knee.compute_s - at_knee.memory_s) <= quantum);
    CHECK(std::abs(below.compute_s - below.memory_s) <= quantum);
  }
  SUBCASE("doubling a memory-bound batch barely moves the step") {
    hw.kv_bytes_per_token = 1e5;
    for (int b : {1, 2, 4, 8, 16, 32}) {
      std::vector<BatchMember> small, big;
      for (int i = 0; i < 2 * b; ++i) {
        NodeId p = t.add_node(t.root(), 100, false);
        NodeId c = t.add_node(p, 60, false);
        if (i < b) small.push_back({&t, c, 50});
        big.push_back({&t, c, 50});
      }
      double ratio = step_latency(big, hw) / step_latency(small, hw);
      CHECK(ratio < 1.05);
      CHECK(ratio >= 1.0);
    }
  }
  SUBCASE("an empty batch is rejected") {
    try {
      step_cost({}, hw);
      FAIL("expected EmptyBatch");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::EmptyBatch);
    }
  }
}

TEST_CASE("sim: workload validation rejects impossible shapes") {
  WorkloadSpec wl;
  CHECK_NOTHROW(wl.validate());

  SUBCASE("deep range must sit above shallow range") {
    wl.deep_min = wl.shallow_max;
    try {
      wl.validate();
      FAIL("expected ConfigInvalid");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::ConfigInvalid);
    }
  }
  SUBCASE("token bounds must be ordered") {
    wl.token_max = wl.token_min - 1;
    try {
      wl.validate();
      FAIL("expected ConfigInvalid");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::ConfigInvalid);
    }
  }
  SUBCASE("answers need at least two labels") {
    wl.answer_alphabet = 1;
    try {
      wl.validate();
      FAIL("expected ConfigInvalid");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::ConfigInvalid);
    }
  }
}

TEST_CASE("sim: the oracle is a pure function of seed and path") {
  WorkloadSpec wl;
  wl.noise_sigma = 0.1;
  RewardOracle oracle(4711, wl, 16);

  SearchTree a(wl.prompt_tokens, 4711);
  SearchTree b(wl.prompt_tokens, 4711);
  for (int i = 0; i < 3; ++i) {
    a.add_node(a.root(), 10, false);
    b.add_node(b.root(), 10, false);
  }
  NodeId deep_a = a.add_node(1, 10, false);
  NodeId deep_b = b.add_node(1, 10, false);

  for (NodeId id = 1; id < a.size(); ++id) {
    CHECK(oracle.reward(a, id) == oracle.reward(b, id));
    CHECK(oracle.token_len(a.node(id).path_hash) == oracle.token_len(b.node(id).path_hash));
    CHECK(oracle.is_terminal(a, id) == oracle.is_terminal(b, id));
    CHECK(oracle.answer_label(a, id) == oracle.answer_label(b, id));
  }
  CHECK(oracle.reward(a, deep_a) == oracle.reward(b, deep_b));
  CHECK(oracle.reward(a, deep_a) == oracle.reward(a, deep_a));  // visit-independent
}

TEST_CASE("sim: rewards split into two noiseless levels by golden membership") {
  WorkloadSpec wl;  // noise_sigma 0
  RewardOracle oracle(31337, wl, 16);
  SearchTree t(wl.prompt_tokens, 31337);

  bool saw_on = false;
  bool saw_off = false;
  for (int i = 0; i < 40; ++i) {
    NodeId c = t.add_node(t.root(), 10, false);
    if (oracle.on_golden_path(t, c)) {
      CHECK(oracle.reward(t, c) == 0.8);
      saw_on = true;
    } else {
      CHECK(oracle.reward(t, c) == 0.3);
      saw_off = true;
    }
  }
  CHECK(saw_on);
  CHECK(saw_off);

  SUBCASE("membership chains from the root") {
    // A child on the golden path forces every ancestor on it as well.
    const NodeId existing = t.size();
    for (NodeId id = 1; id < existing; ++id) {
      NodeId child = t.add_node(id, 10, false);
      if (oracle.on_golden_path(t, child)) CHECK(oracle.on_golden_path(t, id));
    }
  }
}

TEST_CASE("sim: reward noise is unbiased and clamped") {
  WorkloadSpec wl;
  wl.noise_sigma = 0.1;
  RewardOracle oracle(777, wl, 16);
  SearchTree t(wl.prompt_tokens, 777);

  double drift = 0.0;
  for (int i = 0; i < 10000; ++i) {
    NodeId c = t.add_node(t.root(), 10, false);
    double base = oracle.on_golden_path(t, c) ? wl.reward_on : wl.reward_off;
    double r = oracle.reward(t, c);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
    drift += r - base;
  }
  CHECK(std::abs(drift / 10000.0) < 0.01);

  SUBCASE("wild noise still lands inside the unit interval") {
    WorkloadSpec wild = wl;
    wild.noise_sigma = 5.0;
    RewardOracle loud(777, wild, 16);
    for (int i = 0; i < 200; ++i) {
      double r = loud.reward(t, static_cast<NodeId>(1 + i));
      CHECK(r >= 0.0);
      CHECK(r <= 1.0);
    }
  }
}

TEST_CASE("sim: token lengths follow the configured distribution") {
  WorkloadSpec wl;

  SUBCASE("zero spread collapses to the median length") {
    wl.token_sigma = 0.0;
    RewardOracle oracle(5, wl, 16);
    for (int i = 0; i < 50; ++i) CHECK(oracle.token_len(rng::splitmix64(i)) == 70);
  }
  SUBCASE("default spread has its median between 50 and 100 tokens") {
    RewardOracle oracle(5, wl, 16);
    std::vector<int> lens;
    lens.reserve(10000);
    for (int i = 0; i < 10000; ++i) lens.push_back(oracle.token_len(rng::splitmix64(i)));
    std::sort(lens.begin(), lens.end());
    CHECK(lens[5000] >= 50);
    CHECK(lens[5000] <= 100);
    CHECK(lens.front() >= wl.token_min);
    CHECK(lens.back() <= wl.token_max);
  }
}

TEST_CASE("sim: terminality respects the depth windows") {
  WorkloadSpec wl;  // shallow window [3, 9], skew 0
  RewardOracle oracle(99, wl, 16);
  SearchTree t(wl.prompt_tokens, 99);

  CHECK_FALSE(oracle.is_terminal(t, t.root()));
  for (int chain = 0; chain < 20; ++chain) {
    NodeId cur = t.root();
    for (int depth = 1; depth <= 12; ++depth) {
      cur = t.add_node(cur, 10, false);
      bool term = oracle.is_terminal(t, cur);
      if (depth < wl.shallow_min) CHECK_FALSE(term);
      if (depth >= wl.shallow_max) CHECK(term);
    }
  }
  SUBCASE("the tree depth limit clips the window") {
    RewardOracle clipped(99, wl, 5);
    NodeId cur = t.root();
    for (int depth = 1; depth <= 5; ++depth) cur = t.add_node(cur, 10, false);
    CHECK(clipped.is_terminal(t, cur));
  }
}

TEST_CASE("sim: workloads are deterministic with the configured depth skew") {
  WorkloadSpec wl;
  wl.skew = 0.1;

  std::vector<QueryProfile> first = generate_workload(1000, wl, 11, 20);
  std::vector<QueryProfile> second = generate_workload(1000, wl, 11, 20);
  REQUIRE(first.size() == 1000);
  int deep = 0;
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(first[i].seed == second[i].seed);
    CHECK(first[i].golden_label == second[i].golden_label);
    CHECK(first[i].probe_depth == second[i].probe_depth);
    CHECK(first[i].probe_depth >= wl.shallow_min);
    CHECK(first[i].probe_depth <= wl.deep_max);
    if (first[i].probe_depth > 10) ++deep;
  }
  // One query in ten rides a deep-dominant branch past depth 10.
  CHECK(deep >= 80);
  CHECK(deep <= 120);

  SUBCASE("different seeds give different workloads") {
    std::vector<QueryProfile> other = generate_workload(4, wl, 12, 20);
    CHECK(other[0].seed != first[0].seed);
  }
  SUBCASE("an empty workload is empty") { CHECK(generate_workload(0, wl, 11, 20).empty()); }
}

TEST_CASE("sim: answers are likelier correct at shallow depths") {
  WorkloadSpec wl;
  std::vector<QueryProfile> queries = generate_workload(400, wl, 5, 16);
  int hit_shallow = 0, n_shallow = 0, hit_deep = 0, n_deep = 0;
  for (const QueryProfile& q : queries) {
    RewardOracle oracle(q.seed, wl, 16);
    SearchTree t(wl.prompt_tokens, q.seed);
    NodeId cur = t.root();
    for (int depth = 1; depth <= 14; ++depth) {
      cur = t.add_node(cur, 10, false);
      bool correct = oracle.answer_label(t, cur) == oracle.golden_label();
      if (depth <= 5) {
        ++n_shallow;
        hit_shallow += correct;
      } else if (depth > 10) {
        ++n_deep;
        hit_deep += correct;
      }
    }
  }
  double rate_shallow = static_cast<double>(hit_shallow) / n_shallow;
  double rate_deep = static_cast<double>(hit_deep) / n_deep;
  CHECK(rate_shallow > rate_deep + 0.3);
}

TEST_CASE("sim: the decode engine batches, staggers and cancels exactly") {
  HardwareProfile hw;  // kv 0: every step costs 0.02 s at any small batch
  SearchTree t(32, 1);
  NodeId n1 = t.add_node(t.root(), 10, false);
  NodeId n2 = t.add_node(t.root(), 10, false);

  SUBCASE("a lone stream finishes in tokens times step time") {
    DecodeEngine eng(hw);
    eng.add_stream(1, &t, n1, 25, 0.0);
    std::vector<DecodeEngine::Finished> out;
    double now = eng.advance(0.0, kInf, out);
    REQUIRE(out.size() == 1);
    CHECK(out[0].id == 1);
    CHECK(out[0].tokens_done == 25);
    CHECK_FALSE(out[0].cancelled);
    CHECK(out[0].time == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(now == doctest::Approx(0.5).epsilon(1e-9));
    CHECK_FALSE(eng.has_work());
  }
  SUBCASE("a late stream joins at the next step boundary") {
    DecodeEngine eng(hw);
    eng.add_stream(1, &t, n1, 10, 0.0);
    eng.add_stream(2, &t, n2, 10, 0.05);
    CHECK(eng.next_ready() == 0.0);  // both still staged before the first call
    std::vector<DecodeEngine::Finished> out;
    double now = eng.advance(0.0, kInf, out);
    // Stream 1: 3 solo steps to 0.06, then 7 batched: done at 0.2.
    REQUIRE(out.size() == 1);
    CHECK(out[0].id == 1);
    CHECK(out[0].time == doctest::Approx(0.2).epsilon(1e-9));
    CHECK(eng.done_tokens(2) == 7);
    out.clear();
    now = eng.advance(now, kInf, out);
    REQUIRE(out.size() == 1);
    CHECK(out[0].id == 2);
    CHECK(out[0].tokens_done == 10);
    CHECK(out[0].time == doctest::Approx(0.26).epsilon(1e-9));
  }
  SUBCASE("a limit pauses mid-flight without completions") {
    DecodeEngine eng(hw);
    eng.add_stream(1, &t, n1, 10, 0.0);
    std::vector<DecodeEngine::Finished> out;
    double now = eng.advance(0.0, 0.04, out);
    CHECK(out.empty());
    CHECK(now == doctest::Approx(0.04).epsilon(1e-9));
    CHECK(eng.done_tokens(1) == 2);
  }
  SUBCASE("cancelling an active stream grants one farewell step") {
    DecodeEngine eng(hw);
    eng.add_stream(1, &t, n1, 10, 0.0);
    std::vector<DecodeEngine::Finished> out;
    double now = eng.advance(0.0, 0.04, out);
    CHECK(eng.cancel(1));
    now = eng.advance(now, kInf, out);
    REQUIRE(out.size() == 1);
    CHECK(out[0].cancelled);
    CHECK(out[0].tokens_done == 3);
    CHECK(out[0].time == doctest::Approx(0.06).epsilon(1e-9));
  }
  SUBCASE("cancelling a staged stream erases it silently") {
    DecodeEngine eng(hw);
    eng.add_stream(1, &t, n1, 10, 5.0);
    CHECK_FALSE(eng.cancel(1));
    CHECK_FALSE(eng.has_work());
    std::vector<DecodeEngine::Finished> out;
    CHECK(eng.advance(0.0, 1.0, out) == 1.0);
    CHECK(out.empty());
  }
  SUBCASE("dropping removes without a completion record") {
    DecodeEngine eng(hw);
    eng.add_stream(1, &t, n1, 10, 0.0);
    std::vector<DecodeEngine::Finished> out;
    eng.advance(0.0, 0.04, out);
    eng.drop(1);
    CHECK_FALSE(eng.has_work());
    CHECK(eng.advance(0.04, 1.0, out) == 1.0);
    CHECK(out.empty());
  }
  SUBCASE("invalid streams are rejected up front") {
    DecodeEngine eng(hw);
    try {
      eng.add_stream(1, &t, n1, 0, 0.0);
      FAIL("expected InvalidArgument");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::InvalidArgument);
    }
    try {
      eng.add_stream(1, nullptr, n1, 5, 0.0);
      FAIL("expected InvalidArgument");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::InvalidArgument);
    }
  }
  SUBCASE("identical runs produce identical schedules") {
    auto run = [&] {
      DecodeEngine eng(hw);
      eng.add_stream(1, &t, n1, 10, 0.0);
      eng.add_stream(2, &t, n2, 6, 0.03);
      std::vector<DecodeEngine::Finished> all, out;
      double now = 0.0;
      while (eng.has_work()) {
        out.clear();
        now = eng.advance(now, kInf, out);
        all.insert(all.end(), out.begin(), out.end());
      }
      return all;
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].id == b[i].id);
      CHECK(a[i].tokens_done == b[i].tokens_done);
      CHECK(a[i].time == b[i].time);
    }
  }
}
