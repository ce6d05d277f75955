#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "totsim/budget.hpp"
#include "totsim/policy.hpp"
#include "totsim/sim.hpp"

namespace totsim {

// ============================================================================
// Experiment configuration: sections mirror the module parameter structs
// ============================================================================

/** Independently toggleable speculation techniques. */
struct SpexFlags {
  bool t1 = false;  // intra-query speculative selection
  bool t2 = false;  // inter-query budget allocation
  bool t3 = false;  // confidence-margin early termination

  bool any() const { return t1 || t2 || t3; }
  std::string to_string() const;  // "t1+t3", "baseline" when empty
};

struct BudgetConfig {
  double tau = 2.0;            // softmax temperature for budget shares
  double ema_alpha = 0.2;      // hit-rate EMA step
  double initial_hit_ema = 0.5;
};

struct TerminationConfig {
  double alpha = 0.5;     // margin multiplier on the runner-up's mean weight
  double min_frac = 0.6;  // fraction of the answer target required first

  int min_answers(int target) const;
};

struct ExperimentConfig {
  Family family = Family::RstarDfs;
  PolicyConfig policy;
  WorkloadSpec workload;
  HardwareProfile hardware;
  BudgetConfig budget;
  TerminationConfig termination;

  int batch_size = 1;      // concurrent queries
  int n_queries = 1;
  int spec_k = 8;          // per-query cap on concurrent speculative expansions
  int max_producers = 64;  // producer slots; the roofline can lower this
  SpexFlags flags;
  std::uint64_t seed = 1;
  int repetitions = 1;

  /** Field-level checks; mirrors sub-config validators. Throws ConfigInvalid. */
  void validate() const;

  nlohmann::ordered_json to_json() const;

  /** Strict parse: unknown keys anywhere are ConfigInvalid errors. */
  static ExperimentConfig from_json(const nlohmann::ordered_json& j);
  static ExperimentConfig from_file(const std::string& path);
};

/** Parse "t1,t2,t3" style flag lists. Throws ConfigInvalid on unknown names. */
SpexFlags flags_from_string(const std::string& csv);

}  // namespace totsim
