#include <doctest.h>

#include <random>
#include <string>
#include <vector>

#include "totsim/config.hpp"
#include "totsim/termination.hpp"

using namespace totsim;

namespace {

AnswerTally split_tally() {
  // A: 0.9 + 0.8 + 0.7 = 2.4; B: 0.5 + 0.4 = 0.9 (mean 0.45); n = 5.
  AnswerTally tally;
  tally.record_answer("A", 0.9);
  tally.record_answer("A", 0.8);
  tally.record_answer("A", 0.7);
  tally.record_answer("B", 0.5);
  tally.record_answer("B", 0.4);
  return tally;
}

}  // namespace

TEST_CASE("termination: tallies accumulate weighted votes") {
  AnswerTally tally;
  tally.record_answer("42", 0.9);
  CHECK(tally.total_answers() == 1);
  CHECK(tally.hypothesis_count() == 1);
  CHECK(tally.confidence("42") == doctest::Approx(0.9));

  tally.record_answer("42", 0.8);
  tally.record_answer("7", 0.5);
  CHECK(tally.total_answers() == 3);
  CHECK(tally.hypothesis_count() == 2);
  CHECK(tally.confidence("42") == doctest::Approx(1.7));
  CHECK(tally.confidence("7") == doctest::Approx(0.5));
  CHECK(tally.confidence("never-seen") == 0.0);

  SUBCASE("zero weight counts toward n but not confidence") {
    tally.record_answer("7", 0.0);
    CHECK(tally.total_answers() == 4);
    CHECK(tally.confidence("7") == doctest::Approx(0.5));
  }
  SUBCASE("negative weight is rejected") {
    try {
      tally.record_answer("42", -0.1);
      FAIL("expected NegativeWeight");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NegativeWeight);
    }
    CHECK(tally.total_answers() == 3);  // rejected vote leaves no trace
  }
}

TEST_CASE("termination: the leading label is the weighted-vote winner") {
  AnswerTally tally;
  try {
    tally.leading_label();
    FAIL("expected EmptyTally");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::EmptyTally);
  }

  tally.record_answer("b", 1.0);
  CHECK(tally.leading_label() == "b");

  // One heavy vote outranks three light ones.
  tally.record_answer("c", 0.3);
  tally.record_answer("c", 0.3);
  tally.record_answer("c", 0.3);
  CHECK(tally.leading_label() == "b");

  SUBCASE("ties break to the smallest label") {
    tally.record_answer("a", 0.1);
    tally.record_answer("a", 0.9);  // "a" and "b" both at 1.0
    CHECK(tally.leading_label() == "a");
  }
}

TEST_CASE("termination: the stopping rule needs volume and a clear margin") {
  SUBCASE("never fires below the answer floor") {
    AnswerTally tally;
    tally.record_answer("A", 1.0);
    tally.record_answer("A", 1.0);
    tally.record_answer("A", 1.0);
    CHECK_FALSE(tally.should_terminate(5, 0.5));  // n=3 < 5, margin irrelevant
    CHECK(tally.should_terminate(3, 0.5));
  }
  SUBCASE("worked margin: 1.5 beats half of 0.45") {
    AnswerTally tally = split_tally();
    CHECK(tally.should_terminate(5, 0.5));
    CHECK_FALSE(tally.should_terminate(6, 0.5));  // the n >= t gate is exact
  }
  SUBCASE("the gate is exactly n >= t") {
    AnswerTally tally = split_tally();
    for (int t = 1; t <= 8; ++t) CHECK(tally.should_terminate(t, 0.5) == (5 >= t));
  }
  SUBCASE("a single hypothesis terminates once the floor is met") {
    AnswerTally tally;
    tally.record_answer("42", 0.2);
    tally.record_answer("42", 0.1);
    tally.record_answer("42", 0.0);
    CHECK(tally.should_terminate(2, 0.5));
    CHECK_FALSE(tally.should_terminate(4, 0.5));
  }
  SUBCASE("empty tallies never terminate") {
    AnswerTally tally;
    CHECK_FALSE(tally.should_terminate(0, 0.5));
  }
  SUBCASE("ranking uses total weight, not vote count") {
    AnswerTally tally;
    tally.record_answer("A", 2.0);
    tally.record_answer("B", 0.3);
    tally.record_answer("B", 0.3);
    tally.record_answer("B", 0.3);
    // top-1 is A at 2.0; margin 1.1 over B, alpha * avg(B) = 0.15.
    CHECK(tally.should_terminate(4, 0.5));
  }
  SUBCASE("zero slack demands a strictly positive margin") {
    AnswerTally tally;
    tally.record_answer("A", 1.0);
    tally.record_answer("B", 1.0);
    CHECK_FALSE(tally.should_terminate(2, 0.0));
    tally.record_answer("A", 0.01);
    CHECK(tally.should_terminate(2, 0.0));
  }
  SUBCASE("unbounded caution yields only to unanimous weight") {
    AnswerTally opposed = split_tally();
    CHECK_FALSE(opposed.should_terminate(5, 1e18));

    AnswerTally unanimous;
    unanimous.record_answer("A", 0.9);
    unanimous.record_answer("A", 0.8);
    unanimous.record_answer("B", 0.0);  // a hypothesis with zero confidence
    CHECK(unanimous.should_terminate(3, 1e18));
  }
  SUBCASE("feeding the winner never flips a stop decision back") {
    std::mt19937_64 gen(2026);
    std::uniform_real_distribution<double> w(0.0, 1.0);
    const std::vector<std::string> labels{"a", "b", "c"};
    for (int round = 0; round < 200; ++round) {
      AnswerTally tally;
      int n = 2 + static_cast<int>(gen() % 10);
      for (int i = 0; i < n; ++i) tally.record_answer(labels[gen() % labels.size()], w(gen));
      if (!tally.should_terminate(n, 0.5)) continue;
      tally.record_answer(tally.leading_label(), w(gen));
      CHECK(tally.should_terminate(n, 0.5));
    }
  }
}

TEST_CASE("termination: finalizing prunes everything still in flight") {
  AnswerTally tally = split_tally();
  SearchTree t;

  SUBCASE("empty tally cannot finalize") {
    AnswerTally empty;
    try {
      on_terminate(t, empty);
      FAIL("expected EmptyTally");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::EmptyTally);
    }
  }

  // One settled branch that must survive.
  NodeId a = t.add_node(t.root(), 40, false);
  t.node(a).gen_done = true;
  t.set_status(a, NodeStatus::AwaitingReward);
  t.set_status(a, NodeStatus::Committed);
  NodeId done = t.add_node(a, 20, false);
  t.node(done).gen_done = true;
  t.node(done).terminal = true;
  t.set_status(done, NodeStatus::AwaitingReward);
  t.set_status(done, NodeStatus::TerminalAnswer);

  // In-flight and speculative work that must not survive.
  NodeId expanding = t.add_node(a, 30, false);
  NodeId waiting = t.add_node(a, 25, false);
  t.node(waiting).gen_done = true;
  t.set_status(waiting, NodeStatus::AwaitingReward);
  NodeId spec = t.add_node(t.root(), 15, true);
  NodeId spec_done = t.add_node(t.root(), 15, true);
  t.node(spec_done).gen_done = true;
  t.set_status(spec_done, NodeStatus::SpeculativeDone);
  NodeId chained = t.add_node(spec_done, 10, true);  // dies with its parent

  TerminateResult r = on_terminate(t, tally);
  CHECK(r.label == "A");
  CHECK(r.pruned == 5);
  for (NodeId id : {expanding, waiting, spec, spec_done, chained})
    CHECK(t.node(id).status == NodeStatus::Pruned);
  CHECK(t.node(a).status == NodeStatus::Committed);
  CHECK(t.node(done).status == NodeStatus::TerminalAnswer);
  // Full quiescence: only settled or pruned nodes remain.
  for (NodeId id = 0; id < t.size(); ++id) {
    NodeStatus s = t.node(id).status;
    CHECK((s == NodeStatus::Committed || s == NodeStatus::TerminalAnswer ||
           s == NodeStatus::Pruned));
  }
}

TEST_CASE("termination: the answer floor defaults to 60% of the target") {
  TerminationConfig cfg;
  CHECK(cfg.min_answers(5) == 3);
  CHECK(cfg.min_answers(10) == 6);
  CHECK(cfg.min_answers(8) == 5);
  CHECK(cfg.min_answers(16) == 10);
  CHECK(cfg.min_answers(1) == 1);
}
