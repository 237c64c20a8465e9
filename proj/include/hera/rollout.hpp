#pragma once

// Episode execution under pure or routed policies, replay of cloud
// trajectories on the device policy, and cost/latency accounting.

#include <variant>

#include "hera/env.hpp"
#include "hera/router.hpp"

namespace hera {

struct StepRecord {
  int t = 1;
  std::string canonical_key;
  std::vector<double> features;
  int decision = 0;  // 0 = device, 1 = cloud
  double route_prob = 0.0;
  int action = 0;
  double reward = 0.0;
  double device_entropy = 0.0;
  int reasoning_length = 0;

  bool operator==(const StepRecord&) const = default;
};

enum class TerminalStatus { kSuccess, kFailure, kHorizonExhausted };

inline std::string_view to_string(TerminalStatus s) {
  switch (s) {
    case TerminalStatus::kSuccess: return "success";
    case TerminalStatus::kFailure: return "failure";
    case TerminalStatus::kHorizonExhausted: return "horizon_exhausted";
  }
  return "?";
}

inline TerminalStatus parse_terminal_status(std::string_view s) {
  if (s == "success") return TerminalStatus::kSuccess;
  if (s == "failure") return TerminalStatus::kFailure;
  if (s == "horizon_exhausted") return TerminalStatus::kHorizonExhausted;
  throw DataError("unknown terminal_status '" + std::string(s) + "'");
}

struct Trajectory {
  std::string trajectory_id;
  std::string task_id;
  std::string mode;
  std::vector<StepRecord> steps;
  double ret = 0.0;
  int cloud_calls = 0;
  TerminalStatus status = TerminalStatus::kHorizonExhausted;

  bool operator==(const Trajectory&) const = default;
};

struct CostModel {
  double cloud_cost_per_call = 1e-3;
  double device_latency_per_step = 0.5;
  double cloud_latency_per_step = 2.0;
  double router_latency_per_step = 0.061;

  void validate() const {
    for (double v : {cloud_cost_per_call, device_latency_per_step, cloud_latency_per_step, router_latency_per_step})
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("cost_model: all entries must be finite and >= 0");
  }
};

// ---------------------------------------------------------------------------
// Routing modes.

struct DeviceOnly {};
struct CloudOnly {};
struct RandomRoute {
  double p = 0.5;
};
struct RouterRoute {
  const RouterParams* params = nullptr;
  double gamma = 1.0;
  bool sampling = false;
  double threshold = 0.5;
};
// Cloud iff the device's predictive entropy exceeds the threshold.
struct EntropyRoute {
  double threshold = 0.0;
};

using RoutingMode = std::variant<DeviceOnly, CloudOnly, RandomRoute, RouterRoute, EntropyRoute>;

inline std::string mode_name(const RoutingMode& m) {
  struct V {
    std::string operator()(const DeviceOnly&) const { return "device_only"; }
    std::string operator()(const CloudOnly&) const { return "cloud_only"; }
    std::string operator()(const RandomRoute& r) const { return "random(" + format_double(r.p) + ")"; }
    std::string operator()(const RouterRoute& r) const {
      return r.sampling ? "router(sample,gamma=" + format_double(r.gamma) + ")"
                        : "router(greedy,threshold=" + format_double(r.threshold) + ")";
    }
    std::string operator()(const EntropyRoute& e) const { return "entropy(" + format_double(e.threshold) + ")"; }
  };
  return std::visit(V{}, m);
}

inline void validate_mode(const RoutingMode& m) {
  if (const auto* r = std::get_if<RandomRoute>(&m)) {
    if (!(r->p >= 0.0 && r->p <= 1.0)) throw ConfigError("random route: p must lie in [0, 1]");
  } else if (const auto* rr = std::get_if<RouterRoute>(&m)) {
    if (rr->params == nullptr) throw UsageError("router route: missing parameters");
    if (!(rr->gamma > 0.0)) throw ConfigError("router route: temperature must be > 0");
    if (!rr->sampling && !(rr->threshold > 0.0 && rr->threshold < 1.0))
      throw ConfigError("router route: threshold must lie in (0, 1)");
  }
}

// Streams of one episode, derived from (master seed, task, trajectory index).
struct EpisodeStreams {
  std::uint64_t action_key;
  std::uint64_t length_key;
  Rng route;

  EpisodeStreams(std::uint64_t master_seed, std::string_view task_id, std::uint64_t index)
      : action_key(hash_path(master_seed, {static_cast<std::uint64_t>(Stream::kAction), fnv1a(task_id), index})),
        length_key(hash_path(master_seed, {static_cast<std::uint64_t>(Stream::kLength), fnv1a(task_id), index})),
        route(Rng::derive(master_seed, {static_cast<std::uint64_t>(Stream::kRoute), fnv1a(task_id), index})) {}
};

inline std::string make_trajectory_id(std::string_view task_id, std::string_view tag, std::uint64_t index) {
  return std::string(task_id) + "/" + std::string(tag) + "/" + std::to_string(index);
}

// The routing decision picks which policy's action distribution is sampled
// at each step. Action draws use a per-step counter stream shared by both
// tiers, so two modes that agree on acceptability see the same outcomes.
inline Trajectory run_episode(const TaskSpec& task, const ScriptedPolicy& device, const ScriptedPolicy& cloud,
                              const RoutingMode& mode, std::uint64_t master_seed, std::uint64_t index = 0,
                              std::string_view tag = "run") {
  validate_mode(mode);
  EpisodeStreams streams(master_seed, task.task_id, index);
  Trajectory traj;
  traj.trajectory_id = make_trajectory_id(task.task_id, tag, index);
  traj.task_id = task.task_id;
  traj.mode = mode_name(mode);
  traj.steps.reserve(static_cast<std::size_t>(task.horizon));

  State state = initial_state(task);
  while (!state.terminal) {
    const ActionDist device_dist = policy_dist(device, state, task);
    const double h = entropy(device_dist);
    int d = 0;
    double prob = 0.0;
    if (std::holds_alternative<CloudOnly>(mode)) {
      d = 1;
      prob = 1.0;
    } else if (const auto* r = std::get_if<RandomRoute>(&mode)) {
      prob = r->p;
      d = sample_decision(prob, streams.route);
    } else if (const auto* rr = std::get_if<RouterRoute>(&mode)) {
      const double l = logit(*rr->params, state.features);
      if (rr->sampling) {
        prob = route_prob(l, rr->gamma);
        d = sample_decision(prob, streams.route);
      } else {
        prob = route_prob(l, 1.0);
        d = decide_greedy(prob, rr->threshold);
      }
    } else if (const auto* e = std::get_if<EntropyRoute>(&mode)) {
      d = h > e->threshold ? 1 : 0;
      prob = d;
    }
    const auto t = static_cast<std::uint64_t>(state.step_index);
    const int action = sample_action(d == 1 ? cloud : device, state, task, counter_uniform(streams.action_key, t));
    StepRecord rec;
    rec.t = state.step_index;
    rec.canonical_key = state.canonical_key;
    rec.features = state.features;
    rec.decision = d;
    rec.route_prob = prob;
    rec.action = action;
    rec.device_entropy = h;
    rec.reasoning_length = reasoning_length(task, state.subgoal(), counter_uniform(streams.length_key, t));
    StepResult res = step(state, task, action);
    rec.reward = res.reward;
    traj.cloud_calls += d;
    traj.steps.push_back(std::move(rec));
    state = std::move(res.next);
  }
  traj.ret = episode_return(state, task);
  if (state.failed) {
    traj.status = TerminalStatus::kFailure;
  } else if (state.progress >= task.horizon) {
    traj.status = TerminalStatus::kSuccess;
  } else {
    traj.status = TerminalStatus::kHorizonExhausted;
  }
  return traj;
}

// N trajectories from the shared initial state with independent streams.
inline std::vector<Trajectory> collect_group(const TaskSpec& task, int n, const ScriptedPolicy& device,
                                             const ScriptedPolicy& cloud, const RoutingMode& mode,
                                             std::uint64_t master_seed, std::string_view tag = "group") {
  if (n < 1) throw ConfigError("collect_group: N must be >= 1");
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out.push_back(run_episode(task, device, cloud, mode, master_seed, static_cast<std::uint64_t>(i), tag));
  return out;
}

// ---------------------------------------------------------------------------
// Replay.

enum class ReplaySampling { kSample, kGreedy };

inline std::string_view to_string(ReplaySampling s) { return s == ReplaySampling::kSample ? "sample" : "greedy"; }

inline ReplaySampling parse_replay_sampling(std::string_view s) {
  if (s == "sample") return ReplaySampling::kSample;
  if (s == "greedy") return ReplaySampling::kGreedy;
  throw ConfigError("replay sampling must be 'sample' or 'greedy', got '" + std::string(s) + "'");
}

struct ReplayStep {
  int t = 1;
  int subgoal = 1;
  std::string canonical_key;
  std::vector<double> features;
  int device_action = 0;
  int cloud_action = 0;
  bool matched = false;
  double device_entropy = 0.0;
  int device_length = 0;
};

// Feeds every state of a cloud-only trajectory to the device policy.
inline std::vector<ReplayStep> replay_device_on(const Trajectory& traj, const TaskSpec& task,
                                                const ScriptedPolicy& device, ReplaySampling sampling,
                                                std::uint64_t master_seed) {
  if (traj.task_id != task.task_id) throw UsageError("replay: trajectory belongs to another task");
  for (const auto& s : traj.steps)
    if (s.decision != 1) throw UsageError("replay: trajectory " + traj.trajectory_id + " is not cloud-only");
  const std::uint64_t key = hash_path(master_seed, {static_cast<std::uint64_t>(Stream::kReplay), fnv1a(traj.trajectory_id)});
  const std::uint64_t len_key = hash_combine(key, 0x5eed);
  std::vector<ReplayStep> out;
  out.reserve(traj.steps.size());
  State state = initial_state(task);
  for (const auto& rec : traj.steps) {
    if (state.terminal || state.canonical_key != rec.canonical_key || state.step_index != rec.t)
      throw DataError("replay: trajectory " + traj.trajectory_id + " is inconsistent with task " + task.task_id);
    ReplayStep r;
    r.t = rec.t;
    r.subgoal = state.subgoal();
    r.canonical_key = state.canonical_key;
    r.features = state.features;
    r.cloud_action = rec.action;
    r.device_action = sampling == ReplaySampling::kSample
                          ? sample_action(device, state, task, counter_uniform(key, static_cast<std::uint64_t>(rec.t)))
                          : greedy_action(device, state, task);
    r.matched = r.device_action == r.cloud_action;
    r.device_entropy = entropy(policy_dist(device, state, task));
    r.device_length = reasoning_length(task, r.subgoal, counter_uniform(len_key, static_cast<std::uint64_t>(rec.t)));
    out.push_back(std::move(r));
    state = step(state, task, rec.action).next;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Accounting.

struct Accounting {
  double api_cost = 0.0;
  double latency = 0.0;
};

inline Accounting account(const Trajectory& traj, const CostModel& cost) {
  cost.validate();
  Accounting a;
  a.api_cost = traj.cloud_calls * cost.cloud_cost_per_call;
  for (const auto& s : traj.steps)
    a.latency += cost.router_latency_per_step + (s.decision ? cost.cloud_latency_per_step : cost.device_latency_per_step);
  return a;
}

// Cloud decisions at steps >= t (1-based), the current step included.
inline int future_cloud_count(const Trajectory& traj, int t) {
  if (t < 1 || t > static_cast<int>(traj.steps.size()))
    throw UsageError("future_cloud_count: t=" + std::to_string(t) + " outside [1, " +
                     std::to_string(traj.steps.size()) + "]");
  int c = 0;
  for (std::size_t i = static_cast<std::size_t>(t - 1); i < traj.steps.size(); ++i) c += traj.steps[i].decision;
  return c;
}

}  // namespace hera
