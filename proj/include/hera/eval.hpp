#pragma once

// Evaluation harness: per-method success/cost reports over seeds, Pareto
// sweeps over routing knobs, and replay-based step analyses.

#include <map>

#include "hera/rollout.hpp"

namespace hera {

struct EvalRow {
  std::uint64_t seed = 0;
  std::string task_id;
  double ret = 0.0;
  bool success = false;
  int cloud_calls = 0;
  int steps = 0;
  double api_cost = 0.0;
  double latency = 0.0;
};

struct EvalReport {
  std::string method;
  int n_tasks = 0;
  std::vector<std::uint64_t> seeds;
  double success_threshold = 1.0;
  double success_rate = 0.0;
  double success_std = 0.0;  // across seeds
  double mean_return = 0.0;
  double mean_cloud_calls = 0.0;  // per trajectory
  double mean_steps = 0.0;
  double cloud_step_fraction = 0.0;  // cloud calls / all executed steps
  double mean_api_cost = 0.0;
  double mean_latency = 0.0;
  std::vector<EvalRow> rows;
};

// Recomputes every aggregate from the per-task rows.
inline void aggregate(EvalReport& rep) {
  if (rep.rows.empty()) throw UsageError("aggregate: no rows");
  std::map<std::uint64_t, std::pair<double, int>> per_seed;
  double ret = 0, calls = 0, steps = 0, cost = 0, lat = 0, succ = 0;
  for (const auto& r : rep.rows) {
    auto& ps = per_seed[r.seed];
    ps.first += r.success ? 1.0 : 0.0;
    ps.second += 1;
    succ += r.success ? 1.0 : 0.0;
    ret += r.ret;
    calls += r.cloud_calls;
    steps += r.steps;
    cost += r.api_cost;
    lat += r.latency;
  }
  const double n = static_cast<double>(rep.rows.size());
  rep.mean_return = ret / n;
  rep.mean_cloud_calls = calls / n;
  rep.mean_steps = steps / n;
  rep.cloud_step_fraction = steps > 0 ? calls / steps : 0.0;
  rep.mean_api_cost = cost / n;
  rep.mean_latency = lat / n;
  std::vector<double> rates;
  for (const auto& [seed, v] : per_seed) rates.push_back(v.first / v.second);
  double mean = 0.0;
  for (double r : rates) mean += r;
  mean /= static_cast<double>(rates.size());
  rep.success_rate = mean;
  double var = 0.0;
  for (double r : rates) var += (r - mean) * (r - mean);
  rep.success_std = rates.size() > 1 ? std::sqrt(var / static_cast<double>(rates.size() - 1)) : 0.0;
}

struct EvalContext {
  const ScriptedPolicy* device = nullptr;
  const ScriptedPolicy* cloud = nullptr;
  CostModel cost{};
  double success_threshold = 1.0;
  unsigned jobs = 1;
};

// One episode per (seed, task); a task's stream depends only on the seed and
// the task id, so every method sees the same action draws.
inline EvalReport evaluate(const std::string& method, const RoutingMode& mode, const std::vector<TaskSpec>& tasks,
                           const std::vector<std::uint64_t>& seeds, const EvalContext& ctx) {
  if (tasks.empty()) throw UsageError("evaluate: empty task set");
  if (seeds.empty()) throw UsageError("evaluate: at least one seed is required");
  validate_mode(mode);
  EvalReport rep;
  rep.method = method;
  rep.n_tasks = static_cast<int>(tasks.size());
  rep.seeds = seeds;
  rep.success_threshold = ctx.success_threshold;
  const std::size_t n = seeds.size() * tasks.size();
  rep.rows = parallel_map<EvalRow>(n, ctx.jobs, [&](std::size_t k) {
    const auto seed = seeds[k / tasks.size()];
    const auto& task = tasks[k % tasks.size()];
    const Trajectory tr = run_episode(task, *ctx.device, *ctx.cloud, mode, seed, 0, "eval");
    const Accounting acc = account(tr, ctx.cost);
    EvalRow row;
    row.seed = seed;
    row.task_id = task.task_id;
    row.ret = tr.ret;
    row.success = tr.ret >= ctx.success_threshold;
    row.cloud_calls = tr.cloud_calls;
    row.steps = static_cast<int>(tr.steps.size());
    row.api_cost = acc.api_cost;
    row.latency = acc.latency;
    return row;
  });
  aggregate(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Pareto sweeps.

enum class KnobKind { kRandomP, kRouterThreshold, kEntropyThreshold };

struct SweepSpec {
  std::string method;
  KnobKind kind = KnobKind::kRandomP;
  std::vector<double> knobs;
  const RouterParams* params = nullptr;
};

struct ParetoPoint {
  std::string method;
  double knob = 0.0;
  double mean_cloud_calls = 0.0;
  double success_rate = 0.0;
  double success_std = 0.0;
};

inline RoutingMode mode_for_knob(const SweepSpec& s, double knob) {
  switch (s.kind) {
    case KnobKind::kRandomP: return RandomRoute{knob};
    case KnobKind::kRouterThreshold: return RouterRoute{s.params, 1.0, false, knob};
    case KnobKind::kEntropyThreshold: return EntropyRoute{knob};
  }
  throw UsageError("unknown knob kind");
}

inline std::vector<ParetoPoint> pareto_sweep(const std::vector<SweepSpec>& specs, const std::vector<TaskSpec>& tasks,
                                             const std::vector<std::uint64_t>& seeds, const EvalContext& ctx) {
  std::vector<ParetoPoint> out;
  for (const auto& s : specs) {
    if (s.knobs.empty()) throw UsageError("pareto_sweep: empty knob grid for " + s.method);
    for (double k : s.knobs) {
      const EvalReport rep = evaluate(s.method, mode_for_knob(s, k), tasks, seeds, ctx);
      out.push_back({s.method, k, rep.mean_cloud_calls, rep.success_rate, rep.success_std});
    }
  }
  return out;
}

// Success at a given cloud-call budget by linear interpolation along a curve
// ordered by cloud calls.
inline double interpolate_success(std::vector<ParetoPoint> curve, double calls) {
  if (curve.empty()) throw UsageError("interpolate_success: empty curve");
  std::sort(curve.begin(), curve.end(),
            [](const ParetoPoint& a, const ParetoPoint& b) { return a.mean_cloud_calls < b.mean_cloud_calls; });
  if (calls <= curve.front().mean_cloud_calls) return curve.front().success_rate;
  if (calls >= curve.back().mean_cloud_calls) return curve.back().success_rate;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto& a = curve[i - 1];
    const auto& b = curve[i];
    if (calls <= b.mean_cloud_calls) {
      const double w = b.mean_cloud_calls > a.mean_cloud_calls
                           ? (calls - a.mean_cloud_calls) / (b.mean_cloud_calls - a.mean_cloud_calls)
                           : 1.0;
      return a.success_rate + w * (b.success_rate - a.success_rate);
    }
  }
  return curve.back().success_rate;
}

inline std::vector<EvalReport> entropy_threshold_baseline(const std::vector<TaskSpec>& tasks,
                                                          const std::vector<double>& thresholds,
                                                          const std::vector<std::uint64_t>& seeds,
                                                          const EvalContext& ctx) {
  std::vector<EvalReport> out;
  for (double h : thresholds) {
    if (!(h >= 0.0)) throw ConfigError("entropy baseline: thresholds must be >= 0");
    out.push_back(evaluate("entropy(" + format_double(h) + ")", EntropyRoute{h}, tasks, seeds, ctx));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Step analysis.

struct Summary {
  std::size_t count = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double min = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
  double median = std::numeric_limits<double>::quiet_NaN();
};

inline Summary summarize(std::vector<double> xs) {
  Summary s;
  s.count = xs.size();
  if (xs.empty()) return s;
  std::sort(xs.begin(), xs.end());
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  s.min = xs.front();
  s.max = xs.back();
  const std::size_t m = xs.size() / 2;
  s.median = xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
  return s;
}

struct PositionMatch {
  int t = 1;
  std::size_t matched = 0;
  std::size_t total = 0;
  double rate() const { return total ? static_cast<double>(matched) / static_cast<double>(total) : 0.0; }
};

struct StepAnalysis {
  std::size_t steps = 0;
  std::size_t matched = 0;
  double match_rate_overall = 0.0;
  std::vector<PositionMatch> match_rate_by_position;
  Summary entropy_matched, entropy_mismatched;
  Summary length_matched, length_mismatched;
  // Empirical CDF of per-trajectory match rates: (rate, cumulative fraction).
  std::vector<std::pair<double, double>> cdf;
};

inline StepAnalysis analyze_steps(const std::vector<Trajectory>& cloud_trajectories, const std::vector<TaskSpec>& tasks,
                                  const ScriptedPolicy& device, ReplaySampling sampling, std::uint64_t master_seed) {
  std::map<std::string, const TaskSpec*> by_id;
  int horizon = 0;
  for (const auto& t : tasks) {
    by_id.emplace(t.task_id, &t);
    horizon = std::max(horizon, t.horizon);
  }
  StepAnalysis a;
  a.match_rate_by_position.resize(static_cast<std::size_t>(horizon));
  for (int t = 1; t <= horizon; ++t) a.match_rate_by_position[static_cast<std::size_t>(t - 1)].t = t;
  std::vector<double> ent[2], len[2], traj_rates;
  for (const auto& tr : cloud_trajectories) {
    auto it = by_id.find(tr.task_id);
    if (it == by_id.end()) throw DataError("analyze_steps: unknown task " + tr.task_id);
    const auto replay = replay_device_on(tr, *it->second, device, sampling, master_seed);
    std::size_t hits = 0;
    for (const auto& r : replay) {
      auto& pos = a.match_rate_by_position[static_cast<std::size_t>(r.t - 1)];
      ++pos.total;
      ++a.steps;
      if (r.matched) {
        ++pos.matched;
        ++a.matched;
        ++hits;
      }
      ent[r.matched ? 1 : 0].push_back(r.device_entropy);
      len[r.matched ? 1 : 0].push_back(r.device_length);
    }
    if (!replay.empty()) traj_rates.push_back(static_cast<double>(hits) / static_cast<double>(replay.size()));
  }
  while (!a.match_rate_by_position.empty() && a.match_rate_by_position.back().total == 0)
    a.match_rate_by_position.pop_back();
  a.match_rate_overall = a.steps ? static_cast<double>(a.matched) / static_cast<double>(a.steps) : 0.0;
  a.entropy_matched = summarize(ent[1]);
  a.entropy_mismatched = summarize(ent[0]);
  a.length_matched = summarize(len[1]);
  a.length_mismatched = summarize(len[0]);
  std::sort(traj_rates.begin(), traj_rates.end());
  for (std::size_t i = 0; i < traj_rates.size(); ++i) {
    if (i + 1 < traj_rates.size() && traj_rates[i + 1] == traj_rates[i]) continue;
    a.cdf.emplace_back(traj_rates[i], static_cast<double>(i + 1) / static_cast<double>(traj_rates.size()));
  }
  return a;
}

}  // namespace hera
