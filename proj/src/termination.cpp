#include "totsim/termination.hpp"

#include <algorithm>

namespace totsim {

void AnswerTally::record_answer(const std::string& label, double weight) {
  if (weight < 0.0) throw Error(Errc::NegativeWeight, "answer weight " + std::to_string(weight));
  Agg& a = by_label_[label];
  a.count += 1;
  a.weight_sum += weight;
  n_total_ += 1;
}

std::string AnswerTally::leading_label() const {
  if (by_label_.empty()) throw Error(Errc::EmptyTally, "no answers recorded");
  // by_label_ is label-ordered, so the first strict maximum is the
  // lexicographically smallest winner.
  auto best = by_label_.begin();
  for (auto it = std::next(by_label_.begin()); it != by_label_.end(); ++it)
    if (it->second.weight_sum > best->second.weight_sum) best = it;
  return best->first;
}

double AnswerTally::confidence(const std::string& label) const {
  auto it = by_label_.find(label);
  return it == by_label_.end() ? 0.0 : it->second.weight_sum;
}

bool AnswerTally::should_terminate(int min_answers, double alpha) const {
  if (n_total_ < min_answers || by_label_.empty()) return false;
  if (by_label_.size() < 2) return true;

  const Agg* first = nullptr;
  const Agg* second = nullptr;
  for (const auto& [label, agg] : by_label_) {
    (void)label;
    if (!first || agg.weight_sum > first->weight_sum) {
      second = first;
      first = &agg;
    } else if (!second || agg.weight_sum > second->weight_sum) {
      second = &agg;
    }
  }
  double margin = first->weight_sum - second->weight_sum;
  double avg_second = second->count > 0 ? second->weight_sum / second->count : 0.0;
  return margin > alpha * avg_second;
}

TerminateResult on_terminate(SearchTree& tree, const AnswerTally& tally) {
  TerminateResult r;
  r.label = tally.leading_label();
  for (NodeId id = 0; id < tree.size(); ++id) {
    switch (tree.node(id).status) {
      case NodeStatus::PendingExpansion:
      case NodeStatus::Expanding:
      case NodeStatus::AwaitingReward:
      case NodeStatus::Speculative:
      case NodeStatus::SpeculativeDone:  // unused predictions die with the query
        r.pruned += tree.prune_subtree(id);
        break;
      default:
        break;
    }
  }
  return r;
}

}  // namespace totsim
