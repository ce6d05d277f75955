#pragma once

#include <map>
#include <string>

#include "totsim/tree.hpp"

namespace totsim {

// ============================================================================
// Confidence-margin early termination over weighted answer votes
// ============================================================================

/** Running weighted vote over answer hypotheses. */
class AnswerTally {
 public:
  /** Add one answer with confidence weight w >= 0. Throws NegativeWeight. */
  void record_answer(const std::string& label, double weight);

  int total_answers() const { return n_total_; }
  int hypothesis_count() const { return static_cast<int>(by_label_.size()); }

  /** Weighted-vote winner; ties break to the lexicographically smallest
   *  label. Throws EmptyTally. */
  std::string leading_label() const;

  double confidence(const std::string& label) const;

  /**
   * True once n >= min_answers and the leading confidence beats the runner-up
   * by more than alpha times the runner-up's mean answer weight. With fewer
   * than two hypotheses the margin test passes by definition.
   */
  bool should_terminate(int min_answers, double alpha) const;

 private:
  struct Agg {
    int count = 0;
    double weight_sum = 0.0;
  };
  std::map<std::string, Agg> by_label_;
  int n_total_ = 0;
};

struct TerminateResult {
  std::string label;
  int pruned = 0;
};

/**
 * Finalize a query: pick the winning label and prune every node still in
 * flight or speculative. The caller cancels the matching simulated work.
 * Throws EmptyTally when no answer was ever recorded.
 */
TerminateResult on_terminate(SearchTree& tree, const AnswerTally& tally);

}  // namespace totsim
