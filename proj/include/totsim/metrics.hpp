#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace totsim {

// ============================================================================
// Run metrics: per-experiment summary, serialization, and report rows
// ============================================================================

inline constexpr int kHitDistances = 5;  // reported distance buckets 1..5

struct RunMetrics {
  double makespan = 0.0;          // virtual seconds, first admit to last finish
  double makespan_stddev = 0.0;
  double throughput = 0.0;        // finished queries per virtual minute
  double speedup = 1.0;           // baseline makespan / this makespan
  double speedup_stddev = 0.0;
  std::vector<double> hit_rate_by_distance;  // size kHitDistances; -1 = no samples
  long long generated_tokens = 0;
  long long committed_tokens = 0;
  long long reused_tokens = 0;
  long long wasted_tokens = 0;
  long long critical_path_tokens_saved = 0;
  double vote_accuracy = 0.0;
  double early_termination_rate = 0.0;
  int repetitions = 1;
  int queries = 0;

  RunMetrics() : hit_rate_by_distance(kHitDistances, -1.0) {}

  /** Throws ConfigInvalid when the conservation identity or ranges break. */
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static RunMetrics from_json(const nlohmann::ordered_json& j);
};

/** Documented report column order; the CSV header matches this exactly. */
std::string metrics_csv_header();

/** One CSV row; floating-point fields print with round-trip precision. */
std::string metrics_csv_row(const RunMetrics& m, const std::string& algorithm,
                            const std::string& config, int batch, std::uint64_t seed);

}  // namespace totsim
