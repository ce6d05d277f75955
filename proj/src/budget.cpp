#include "totsim/budget.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace totsim {

void HardwareProfile::validate() const {
  auto pos = [](double v, const char* name) {
    if (!(v > 0.0)) throw Error(Errc::ConfigInvalid, std::string(name) + " must be positive");
  };
  pos(weight_bytes, "weight_bytes");
  pos(mem_bandwidth, "mem_bandwidth");
  pos(peak_compute, "peak_compute");
  pos(flops_per_token, "flops_per_token");
  if (kv_bytes_per_token < 0.0)
    throw Error(Errc::ConfigInvalid, "kv_bytes_per_token must be non-negative");
  if (reward_latency < 0.0)
    throw Error(Errc::ConfigInvalid, "reward_latency must be non-negative");
}

int roofline_k_total(const HardwareProfile& hw, int active_batch, double avg_kv_bytes, int cap) {
  // Compute time per step: B * flops / peak. Memory time: (W + B * kv) / bw.
  // B* solves B*flops/peak >= (W + B*kv)/bw.
  double compute_slope = hw.flops_per_token / hw.peak_compute;   // s per batch row
  double memory_slope = avg_kv_bytes / hw.mem_bandwidth;         // s per batch row
  double weight_time = hw.weight_bytes / hw.mem_bandwidth;       // s, batch-independent
  int b_star;
  if (compute_slope <= memory_slope) {
    b_star = cap;  // never compute-bound
  } else {
    // Cap before the integer cast: a near-flat compute slope puts the knee
    // far past INT_MAX.
    double knee = std::ceil(weight_time / (compute_slope - memory_slope));
    b_star = knee < static_cast<double>(cap) ? static_cast<int>(knee) : cap;
  }
  return std::max(0, b_star - active_batch);
}

double query_score(const QueryState& q, const HardwareProfile& hw) {
  return q.capacity * q.hit_ema * (hw.weight_bytes + q.kv_bytes);
}

std::vector<int> allocate_budgets(const std::vector<QueryState>& queries, int k_total, double tau,
                                  const HardwareProfile& hw) {
  const std::size_t n = queries.size();
  std::vector<int> out(n, 0);
  if (n == 0 || k_total <= 0) return out;

  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) score[i] = query_score(queries[i], hw);

  double lo = *std::min_element(score.begin(), score.end());
  double hi = *std::max_element(score.begin(), score.end());
  std::vector<double> norm(n, 0.0);
  if (hi > lo)
    for (std::size_t i = 0; i < n; ++i) norm[i] = (score[i] - lo) / (hi - lo);

  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::exp(tau * norm[i]);
    total += w[i];
  }

  // Floor shares; the capacity cap is applied after flooring and capped
  // surplus is not redistributed, only the flooring loss is.
  int floor_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    int f = static_cast<int>(std::floor(k_total * w[i] / total));
    floor_sum += f;
    out[i] = std::min(queries[i].capacity, f);
  }

  int leftover = k_total - floor_sum;
  if (leftover > 0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    bool progress = true;
    while (leftover > 0 && progress) {
      progress = false;
      for (std::size_t idx : order) {
        if (leftover == 0) break;
        if (out[idx] < queries[idx].capacity) {
          out[idx] += 1;
          --leftover;
          progress = true;
        }
      }
    }
  }
  return out;
}

void update_hit_rate(QueryState& q, bool hit, double alpha) {
  q.hit_ema = (1.0 - alpha) * q.hit_ema + alpha * (hit ? 1.0 : 0.0);
}

}  // namespace totsim
