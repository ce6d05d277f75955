#include "totsim/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "totsim/errors.hpp"

namespace totsim {

using nlohmann::ordered_json;

std::string SpexFlags::to_string() const {
  std::string s;
  auto add = [&](const char* name) {
    if (!s.empty()) s += '+';
    s += name;
  };
  if (t1) add("t1");
  if (t2) add("t2");
  if (t3) add("t3");
  return s.empty() ? "baseline" : s;
}

SpexFlags flags_from_string(const std::string& csv) {
  SpexFlags f;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "t1")
      f.t1 = true;
    else if (item == "t2")
      f.t2 = true;
    else if (item == "t3")
      f.t3 = true;
    else
      throw Error(Errc::ConfigInvalid, "unknown flag: " + item);
  }
  return f;
}

int TerminationConfig::min_answers(int target) const {
  return static_cast<int>(std::ceil(min_frac * target));
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::ConfigInvalid, what); };
  if (policy.exploration_c < 0.0) fail("policy.exploration_c: must be >= 0");
  if (policy.balance_temperature <= 0.0) fail("policy.balance_temperature: must be > 0");
  if (policy.width < 1) fail("policy.width: must be >= 1");
  for (int w : policy.depth_widths)
    if (w < 1) fail("policy.depth_widths: entries must be >= 1");
  if (policy.target_answers < 1) fail("policy.target_answers: must be >= 1");
  if (policy.max_depth < 1) fail("policy.max_depth: must be >= 1");
  workload.validate();
  hardware.validate();
  if (budget.tau < 0.0) fail("budget.tau: must be >= 0");
  if (budget.ema_alpha <= 0.0 || budget.ema_alpha > 1.0) fail("budget.ema_alpha: must be in (0,1]");
  if (budget.initial_hit_ema < 0.0 || budget.initial_hit_ema > 1.0)
    fail("budget.initial_hit_ema: must be in [0,1]");
  if (termination.alpha < 0.0) fail("termination.alpha: must be >= 0");
  if (termination.min_frac < 0.0 || termination.min_frac > 1.0)
    fail("termination.min_frac: must be in [0,1]");
  if (batch_size < 1) fail("run.batch_size: must be >= 1");
  if (n_queries < 1) fail("run.n_queries: must be >= 1");
  if (spec_k < 0) fail("run.spec_k: must be >= 0");
  if (max_producers < 1) fail("run.max_producers: must be >= 1");
  if (repetitions < 1) fail("run.repetitions: must be >= 1");
  if (policy.family != family) fail("family: policy section disagrees with top-level family");
}

ordered_json ExperimentConfig::to_json() const {
  ordered_json j;
  j["family"] = family_name(family);
  ordered_json p;
  p["exploration_c"] = policy.exploration_c;
  p["balance_temperature"] = policy.balance_temperature;
  p["width"] = policy.width;
  p["depth_widths"] = policy.depth_widths;
  p["target_answers"] = policy.target_answers;
  p["max_depth"] = policy.max_depth;
  j["policy"] = p;
  ordered_json w;
  w["token_mu"] = workload.token_mu;
  w["token_sigma"] = workload.token_sigma;
  w["token_min"] = workload.token_min;
  w["token_max"] = workload.token_max;
  w["shallow_min"] = workload.shallow_min;
  w["shallow_p"] = workload.shallow_p;
  w["shallow_max"] = workload.shallow_max;
  w["deep_min"] = workload.deep_min;
  w["deep_p"] = workload.deep_p;
  w["deep_max"] = workload.deep_max;
  w["skew"] = workload.skew;
  w["golden_density"] = workload.golden_density;
  w["reward_on"] = workload.reward_on;
  w["reward_off"] = workload.reward_off;
  w["noise_sigma"] = workload.noise_sigma;
  w["correct_base"] = workload.correct_base;
  w["correct_slope"] = workload.correct_slope;
  w["correct_floor"] = workload.correct_floor;
  w["answer_alphabet"] = workload.answer_alphabet;
  w["prompt_tokens"] = workload.prompt_tokens;
  j["workload"] = w;
  ordered_json h;
  h["weight_bytes"] = hardware.weight_bytes;
  h["mem_bandwidth"] = hardware.mem_bandwidth;
  h["peak_compute"] = hardware.peak_compute;
  h["flops_per_token"] = hardware.flops_per_token;
  h["kv_bytes_per_token"] = hardware.kv_bytes_per_token;
  h["reward_latency"] = hardware.reward_latency;
  j["hardware"] = h;
  ordered_json b;
  b["tau"] = budget.tau;
  b["ema_alpha"] = budget.ema_alpha;
  b["initial_hit_ema"] = budget.initial_hit_ema;
  j["budget"] = b;
  ordered_json t;
  t["alpha"] = termination.alpha;
  t["min_frac"] = termination.min_frac;
  j["termination"] = t;
  ordered_json r;
  r["batch_size"] = batch_size;
  r["n_queries"] = n_queries;
  r["spec_k"] = spec_k;
  r["max_producers"] = max_producers;
  std::vector<std::string> fl;
  if (flags.t1) fl.push_back("t1");
  if (flags.t2) fl.push_back("t2");
  if (flags.t3) fl.push_back("t3");
  r["flags"] = fl;
  r["seed"] = seed;
  r["repetitions"] = repetitions;
  j["run"] = r;
  return j;
}

namespace {

/** Applies known keys and rejects the rest with a section-qualified message. */
class SectionReader {
 public:
  SectionReader(const ordered_json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw Error(Errc::ConfigInvalid, name_ + ": expected an object");
  }

  template <typename T>
  void field(const char* key, T& out) {
    known_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const ordered_json::exception&) {
      throw Error(Errc::ConfigInvalid, name_ + "." + key + ": wrong type");
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      bool ok = false;
      for (const char* k : known_)
        if (key == k) ok = true;
      if (!ok) throw Error(Errc::ConfigInvalid, name_ + "." + key + ": unknown key");
    }
  }

 private:
  const ordered_json& j_;
  std::string name_;
  std::vector<const char*> known_;
};

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const ordered_json& j) {
  ExperimentConfig cfg;
  if (!j.is_object()) throw Error(Errc::ConfigInvalid, "config: expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "family" && key != "policy" && key != "workload" && key != "hardware" &&
        key != "budget" && key != "termination" && key != "run")
      throw Error(Errc::ConfigInvalid, key + ": unknown section");
  }
  if (j.contains("family")) {
    if (!j["family"].is_string()) throw Error(Errc::ConfigInvalid, "family: expected a string");
    cfg.family = family_from_name(j["family"].get<std::string>());
  }
  if (j.contains("policy")) {
    SectionReader s(j["policy"], "policy");
    s.field("exploration_c", cfg.policy.exploration_c);
    s.field("balance_temperature", cfg.policy.balance_temperature);
    s.field("width", cfg.policy.width);
    s.field("depth_widths", cfg.policy.depth_widths);
    s.field("target_answers", cfg.policy.target_answers);
    s.field("max_depth", cfg.policy.max_depth);
    s.finish();
  }
  if (j.contains("workload")) {
    SectionReader s(j["workload"], "workload");
    s.field("token_mu", cfg.workload.token_mu);
    s.field("token_sigma", cfg.workload.token_sigma);
    s.field("token_min", cfg.workload.token_min);
    s.field("token_max", cfg.workload.token_max);
    s.field("shallow_min", cfg.workload.shallow_min);
    s.field("shallow_p", cfg.workload.shallow_p);
    s.field("shallow_max", cfg.workload.shallow_max);
    s.field("deep_min", cfg.workload.deep_min);
    s.field("deep_p", cfg.workload.deep_p);
    s.field("deep_max", cfg.workload.deep_max);
    s.field("skew", cfg.workload.skew);
    s.field("golden_density", cfg.workload.golden_density);
    s.field("reward_on", cfg.workload.reward_on);
    s.field("reward_off", cfg.workload.reward_off);
    s.field("noise_sigma", cfg.workload.noise_sigma);
    s.field("correct_base", cfg.workload.correct_base);
    s.field("correct_slope", cfg.workload.correct_slope);
    s.field("correct_floor", cfg.workload.correct_floor);
    s.field("answer_alphabet", cfg.workload.answer_alphabet);
    s.field("prompt_tokens", cfg.workload.prompt_tokens);
    s.finish();
  }
  if (j.contains("hardware")) {
    SectionReader s(j["hardware"], "hardware");
    s.field("weight_bytes", cfg.hardware.weight_bytes);
    s.field("mem_bandwidth", cfg.hardware.mem_bandwidth);
    s.field("peak_compute", cfg.hardware.peak_compute);
    s.field("flops_per_token", cfg.hardware.flops_per_token);
    s.field("kv_bytes_per_token", cfg.hardware.kv_bytes_per_token);
    s.field("reward_latency", cfg.hardware.reward_latency);
    s.finish();
  }
  if (j.contains("budget")) {
    SectionReader s(j["budget"], "budget");
    s.field("tau", cfg.budget.tau);
    s.field("ema_alpha", cfg.budget.ema_alpha);
    s.field("initial_hit_ema", cfg.budget.initial_hit_ema);
    s.finish();
  }
  if (j.contains("termination")) {
    SectionReader s(j["termination"], "termination");
    s.field("alpha", cfg.termination.alpha);
    s.field("min_frac", cfg.termination.min_frac);
    s.finish();
  }
  if (j.contains("run")) {
    SectionReader s(j["run"], "run");
    s.field("batch_size", cfg.batch_size);
    s.field("n_queries", cfg.n_queries);
    s.field("spec_k", cfg.spec_k);
    s.field("max_producers", cfg.max_producers);
    s.field("seed", cfg.seed);
    s.field("repetitions", cfg.repetitions);
    std::vector<std::string> fl;
    s.field("flags", fl);
    s.finish();
    if (j["run"].contains("flags")) {
      SpexFlags f;
      for (const std::string& name : fl) {
        if (name == "t1")
          f.t1 = true;
        else if (name == "t2")
          f.t2 = true;
        else if (name == "t3")
          f.t3 = true;
        else
          throw Error(Errc::ConfigInvalid, "run.flags: unknown flag " + name);
      }
      cfg.flags = f;
    }
  }
  cfg.policy.family = cfg.family;
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoFailure, "cannot open config: " + path);
  ordered_json j = ordered_json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(Errc::ConfigInvalid, "config is not valid JSON: " + path);
  return from_json(j);
}

}  // namespace totsim
