#include "totsim/metrics.hpp"

#include <cmath>
#include <sstream>

#include "totsim/errors.hpp"

namespace totsim {

using nlohmann::ordered_json;

void RunMetrics::validate() const {
  if (!(speedup > 0.0)) throw Error(Errc::ConfigInvalid, "metrics: speedup must be positive");
  if (makespan < 0.0) throw Error(Errc::ConfigInvalid, "metrics: negative makespan");
  if (generated_tokens != committed_tokens + reused_tokens + wasted_tokens)
    throw Error(Errc::ConfigInvalid, "metrics: token conservation identity broken");
  if (static_cast<int>(hit_rate_by_distance.size()) != kHitDistances)
    throw Error(Errc::ConfigInvalid, "metrics: wrong hit-rate vector size");
}

ordered_json RunMetrics::to_json() const {
  ordered_json j;
  j["makespan"] = makespan;
  j["makespan_stddev"] = makespan_stddev;
  j["throughput"] = throughput;
  j["speedup"] = speedup;
  j["speedup_stddev"] = speedup_stddev;
  j["hit_rate_by_distance"] = hit_rate_by_distance;
  j["generated_tokens"] = generated_tokens;
  j["committed_tokens"] = committed_tokens;
  j["reused_tokens"] = reused_tokens;
  j["wasted_tokens"] = wasted_tokens;
  j["critical_path_tokens_saved"] = critical_path_tokens_saved;
  j["vote_accuracy"] = vote_accuracy;
  j["early_termination_rate"] = early_termination_rate;
  j["repetitions"] = repetitions;
  j["queries"] = queries;
  return j;
}

RunMetrics RunMetrics::from_json(const ordered_json& j) {
  RunMetrics m;
  try {
    m.makespan = j.at("makespan").get<double>();
    m.makespan_stddev = j.at("makespan_stddev").get<double>();
    m.throughput = j.at("throughput").get<double>();
    m.speedup = j.at("speedup").get<double>();
    m.speedup_stddev = j.at("speedup_stddev").get<double>();
    m.hit_rate_by_distance = j.at("hit_rate_by_distance").get<std::vector<double>>();
    m.generated_tokens = j.at("generated_tokens").get<long long>();
    m.committed_tokens = j.at("committed_tokens").get<long long>();
    m.reused_tokens = j.at("reused_tokens").get<long long>();
    m.wasted_tokens = j.at("wasted_tokens").get<long long>();
    m.critical_path_tokens_saved = j.at("critical_path_tokens_saved").get<long long>();
    m.vote_accuracy = j.at("vote_accuracy").get<double>();
    m.early_termination_rate = j.at("early_termination_rate").get<double>();
    m.repetitions = j.at("repetitions").get<int>();
    m.queries = j.at("queries").get<int>();
  } catch (const ordered_json::exception& e) {
    throw Error(Errc::ConfigInvalid, std::string("metrics json: ") + e.what());
  }
  return m;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string metrics_csv_header() {
  return "algorithm,config,batch,seed,makespan,speedup,"
         "hit_rate_d1,hit_rate_d2,hit_rate_d3,hit_rate_d4,hit_rate_d5,vote_accuracy";
}

std::string metrics_csv_row(const RunMetrics& m, const std::string& algorithm,
                            const std::string& config, int batch, std::uint64_t seed) {
  std::ostringstream os;
  os << algorithm << ',' << config << ',' << batch << ',' << seed << ',' << fmt(m.makespan)
     << ',' << fmt(m.speedup);
  for (int d = 0; d < kHitDistances; ++d) os << ',' << fmt(m.hit_rate_by_distance[d]);
  os << ',' << fmt(m.vote_accuracy);
  return os.str();
}

}  // namespace totsim
