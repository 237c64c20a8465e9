#pragma once

// Synthetic long-horizon task families and scripted device/cloud policies.
//
// A task is a chain of `horizon` subgoals. At every step the agent works on
// subgoal progress+1 and must emit an acceptable action to advance. Routine
// subgoals tolerate a wrong action (the step is wasted), critical subgoals do
// not (binary mode fails the episode). Flexible subgoals are routine subgoals
// with two acceptable actions, so two competent policies can disagree
// without either being wrong.
//
// The observable state is the subgoal reached, so a wasted step revisits the
// same state. Features and canonical keys are functions of that semantic
// content only.

#include <numeric>
#include <set>
#include <sstream>

#include "hera/common.hpp"

namespace hera {

enum class StepKind { kRoutine, kFlexible, kCritical };

enum class Tier { kDevice, kCloud };

inline std::string_view to_string(Tier t) { return t == Tier::kDevice ? "device" : "cloud"; }

struct LengthRange {
  int min = 1;
  int max = 1;
};

struct EnvConfig {
  int horizon = 12;
  int action_count = 5;
  // 1-based subgoal indices; when non-empty every task uses exactly these.
  std::vector<int> critical_steps;
  int critical_count = 3;
  // 0: critical/flexible positions drawn per task. k > 0: k task families,
  // each with a fixed position template exposed through the task descriptor.
  int families = 0;
  int flexible_count = 0;
  double marker_observability = 0.9;
  bool partial_credit = false;
  LengthRange routine_length{8, 24};
  LengthRange critical_length{20, 48};
  std::uint64_t seed = 1;

  int num_critical() const {
    return critical_steps.empty() ? critical_count : static_cast<int>(critical_steps.size());
  }

  int feature_size() const { return horizon + 2 + families; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("env: " + m); };
    if (horizon < 1) fail("horizon must be >= 1");
    if (action_count < 2) fail("action_count must be >= 2");
    if (!(marker_observability >= 0.0 && marker_observability <= 1.0))
      fail("marker_observability must lie in [0, 1]");
    if (families < 0) fail("families must be >= 0");
    if (critical_steps.empty()) {
      if (critical_count < 1 || critical_count > horizon)
        fail("critical_count must lie in [1, horizon]");
    } else {
      std::set<int> uniq(critical_steps.begin(), critical_steps.end());
      if (uniq.size() != critical_steps.size()) fail("critical_steps contains duplicates");
      if (*uniq.begin() < 1 || *uniq.rbegin() > horizon)
        fail("critical_steps must lie in [1, horizon]");
    }
    if (flexible_count < 0 || flexible_count > horizon - num_critical())
      fail("flexible_count must lie in [0, horizon - critical count]");
    if (flexible_count > 0 && action_count < 3) fail("flexible subgoals need action_count >= 3");
    for (const auto* r : {&routine_length, &critical_length})
      if (r->min < 0 || r->max < r->min) fail("length ranges need 0 <= min <= max");
  }
};

struct ScriptedPolicy {
  Tier tier = Tier::kDevice;
  double p_routine_correct = 0.95;
  double p_critical_correct = 0.2;
  // Residual mass over wrong actions decays as spread^rank; 1 is uniform,
  // 0 puts it all on one wrong action.
  double spread = 1.0;
  // Share of the acceptable mass placed on the alternate action at flexible
  // subgoals.
  double p_alternate = 0.0;

  void validate() const {
    const std::string who(to_string(tier));
    for (double p : {p_routine_correct, p_critical_correct, p_alternate})
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("policy " + who + ": probabilities must lie in [0, 1]");
    if (!(spread >= 0.0) || !std::isfinite(spread))
      throw ConfigError("policy " + who + ": spread must be finite and >= 0");
  }
};

struct TaskSpec {
  std::string task_id;
  int horizon = 0;
  int action_count = 0;
  std::vector<int> critical_steps;  // sorted, 1-based
  std::vector<int> flexible_steps;  // sorted, 1-based
  double marker_observability = 1.0;
  bool partial_credit = false;
  std::uint64_t seed = 0;
  int family = 0;
  int families = 0;
  LengthRange routine_length{8, 24};
  LengthRange critical_length{20, 48};

  // Realized per-subgoal content (index = subgoal - 1).
  std::vector<int> correct_action;
  std::vector<int> alternate_action;  // -1 unless flexible
  std::vector<std::uint8_t> marker;   // flagged critical subgoals

  StepKind kind(int subgoal) const {
    if (std::binary_search(critical_steps.begin(), critical_steps.end(), subgoal))
      return StepKind::kCritical;
    if (std::binary_search(flexible_steps.begin(), flexible_steps.end(), subgoal))
      return StepKind::kFlexible;
    return StepKind::kRoutine;
  }

  int feature_size() const { return horizon + 2 + families; }
};

struct State {
  int step_index = 1;
  int progress = 0;
  bool failed = false;
  bool terminal = false;
  std::vector<double> features;
  std::string canonical_key;

  int subgoal() const { return progress + 1; }
};

struct ActionDist {
  std::vector<double> probabilities;
};

// ---------------------------------------------------------------------------
// Task generation.

namespace detail {

inline std::vector<int> draw_positions(Rng& rng, std::vector<int> pool, int k) {
  rng.shuffle(pool);
  pool.resize(static_cast<std::size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline std::vector<int> all_positions(int horizon) {
  std::vector<int> v(static_cast<std::size_t>(horizon));
  std::iota(v.begin(), v.end(), 1);
  return v;
}

struct Layout {
  std::vector<int> critical;
  std::vector<int> flexible;
};

inline Layout draw_layout(const EnvConfig& cfg, Rng& rng) {
  Layout out;
  out.critical = cfg.critical_steps.empty()
                     ? draw_positions(rng, all_positions(cfg.horizon), cfg.critical_count)
                     : std::vector<int>(cfg.critical_steps);
  std::sort(out.critical.begin(), out.critical.end());
  if (cfg.flexible_count > 0) {
    std::vector<int> rest;
    for (int t = 1; t <= cfg.horizon; ++t)
      if (!std::binary_search(out.critical.begin(), out.critical.end(), t)) rest.push_back(t);
    out.flexible = draw_positions(rng, std::move(rest), cfg.flexible_count);
  }
  return out;
}

inline std::string format_task_id(std::string_view prefix, int index) {
  std::ostringstream os;
  os << prefix << '-';
  os.width(5);
  os.fill('0');
  os << index;
  return os.str();
}

}  // namespace detail

// Position template shared by every task of a family.
inline detail::Layout family_layout(const EnvConfig& cfg, int family) {
  Rng rng = Rng::derive(cfg.seed, {static_cast<std::uint64_t>(Stream::kTemplate),
                                   static_cast<std::uint64_t>(family)});
  return detail::draw_layout(cfg, rng);
}

// Fills in the per-subgoal realization (correct actions, markers) from the
// task's own seed and layout.
inline void realize_task(TaskSpec& task) {
  Rng rng = Rng::derive(task.seed, {static_cast<std::uint64_t>(Stream::kTaskGen), 1});
  const auto T = static_cast<std::size_t>(task.horizon);
  task.correct_action.assign(T, 0);
  task.alternate_action.assign(T, -1);
  task.marker.assign(T, 0);
  const auto A = static_cast<std::uint64_t>(task.action_count);
  for (int s = 1; s <= task.horizon; ++s) {
    const auto i = static_cast<std::size_t>(s - 1);
    task.correct_action[i] = static_cast<int>(rng.below(A));
    const double flag_draw = rng.uniform();
    const auto k = task.kind(s);
    if (k == StepKind::kFlexible)
      task.alternate_action[i] = static_cast<int>((task.correct_action[i] + 1 + rng.below(A - 1)) % A);
    if (k == StepKind::kCritical && flag_draw < task.marker_observability) task.marker[i] = 1;
  }
}

inline void validate_task(const TaskSpec& task) {
  if (task.horizon < 1 || task.action_count < 2) throw ConfigError("task " + task.task_id + ": bad shape");
  if (task.critical_steps.empty() || static_cast<int>(task.critical_steps.size()) > task.horizon)
    throw ConfigError("task " + task.task_id + ": critical step count must lie in [1, horizon]");
  if (!(task.marker_observability >= 0.0 && task.marker_observability <= 1.0))
    throw ConfigError("task " + task.task_id + ": marker_observability out of range");
  for (int s : task.critical_steps)
    if (s < 1 || s > task.horizon) throw ConfigError("task " + task.task_id + ": critical step out of range");
}

// Builds a single task with explicit layout; mostly useful for fixtures.
inline TaskSpec make_task(std::string task_id, int horizon, int action_count, std::vector<int> critical_steps,
                          double marker_observability, std::uint64_t seed, bool partial_credit = false,
                          std::vector<int> flexible_steps = {}) {
  TaskSpec t;
  t.task_id = std::move(task_id);
  t.horizon = horizon;
  t.action_count = action_count;
  std::sort(critical_steps.begin(), critical_steps.end());
  std::sort(flexible_steps.begin(), flexible_steps.end());
  t.critical_steps = std::move(critical_steps);
  t.flexible_steps = std::move(flexible_steps);
  t.marker_observability = marker_observability;
  t.partial_credit = partial_credit;
  t.seed = seed;
  validate_task(t);
  realize_task(t);
  return t;
}

inline std::vector<TaskSpec> make_task_set(const EnvConfig& cfg, int count, std::uint64_t seed,
                                           std::string_view prefix = "task") {
  if (count < 1) throw ConfigError("make_task_set: count must be >= 1");
  cfg.validate();
  std::vector<detail::Layout> templates;
  for (int f = 0; f < cfg.families; ++f) templates.push_back(family_layout(cfg, f));

  std::vector<TaskSpec> tasks;
  tasks.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    TaskSpec t;
    t.task_id = detail::format_task_id(prefix, i);
    t.horizon = cfg.horizon;
    t.action_count = cfg.action_count;
    t.marker_observability = cfg.marker_observability;
    t.partial_credit = cfg.partial_credit;
    t.seed = hash_path(seed, {static_cast<std::uint64_t>(Stream::kTaskGen), static_cast<std::uint64_t>(i)});
    t.families = cfg.families;
    t.routine_length = cfg.routine_length;
    t.critical_length = cfg.critical_length;
    Rng rng = Rng::derive(t.seed, {static_cast<std::uint64_t>(Stream::kTaskGen), 0});
    if (cfg.families > 0) {
      t.family = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.families)));
      const auto& tpl = templates[static_cast<std::size_t>(t.family)];
      t.critical_steps = tpl.critical;
      t.flexible_steps = tpl.flexible;
    } else {
      auto layout = detail::draw_layout(cfg, rng);
      t.critical_steps = std::move(layout.critical);
      t.flexible_steps = std::move(layout.flexible);
    }
    validate_task(t);
    realize_task(t);
    tasks.push_back(std::move(t));
  }
  return tasks;
}

// ---------------------------------------------------------------------------
// States.

inline std::string canonical_key(const TaskSpec& task, int progress, bool failed) {
  std::string key = task.task_id;
  key += "/p";
  key += std::to_string(progress);
  if (failed) key += "/failed";
  return key;
}

// [subgoal one-hot (T) | critical marker | progress fraction | family one-hot]
inline std::vector<double> encode_features(const TaskSpec& task, int progress) {
  const auto T = static_cast<std::size_t>(task.horizon);
  std::vector<double> f(static_cast<std::size_t>(task.feature_size()), 0.0);
  const auto phase = std::min<std::size_t>(static_cast<std::size_t>(progress), T - 1);
  f[phase] = 1.0;
  f[T] = (progress < task.horizon && task.marker[static_cast<std::size_t>(progress)]) ? 1.0 : 0.0;
  f[T + 1] = static_cast<double>(progress) / static_cast<double>(task.horizon);
  if (task.families > 0) f[T + 2 + static_cast<std::size_t>(task.family)] = 1.0;
  return f;
}

inline State make_state(const TaskSpec& task, int step_index, int progress, bool failed) {
  State s;
  s.step_index = step_index;
  s.progress = progress;
  s.failed = failed;
  s.terminal = failed || progress >= task.horizon || step_index > task.horizon;
  s.canonical_key = canonical_key(task, progress, failed);
  if (!s.terminal) s.features = encode_features(task, progress);
  return s;
}

inline State initial_state(const TaskSpec& task) { return make_state(task, 1, 0, false); }

// Outcome-level return of a terminal state.
inline double episode_return(const State& s, const TaskSpec& task) {
  if (task.partial_credit) return static_cast<double>(s.progress) / static_cast<double>(task.horizon);
  return (!s.failed && s.progress >= task.horizon) ? 1.0 : 0.0;
}

// Actions ordered acceptable-first: correct, alternate (flexible only), then
// wrong actions by rank.
inline std::vector<int> action_order(const TaskSpec& task, int subgoal) {
  const auto i = static_cast<std::size_t>(subgoal - 1);
  const int A = task.action_count;
  const int correct = task.correct_action[i];
  const int alt = task.alternate_action[i];
  std::vector<int> order{correct};
  if (alt >= 0) order.push_back(alt);
  for (int k = 1; k < A; ++k) {
    const int a = (correct + k) % A;
    if (a != alt) order.push_back(a);
  }
  return order;
}

inline bool is_acceptable(const TaskSpec& task, int subgoal, int action) {
  const auto i = static_cast<std::size_t>(subgoal - 1);
  return action == task.correct_action[i] || action == task.alternate_action[i];
}

// Probabilities in acceptable-first order (parallel to action_order).
inline std::vector<double> ordered_probabilities(const ScriptedPolicy& policy, const TaskSpec& task, int subgoal) {
  const StepKind kind = task.kind(subgoal);
  const double p_ok = kind == StepKind::kCritical ? policy.p_critical_correct : policy.p_routine_correct;
  const auto A = static_cast<std::size_t>(task.action_count);
  std::vector<double> p(A, 0.0);
  std::size_t n_ok = 1;
  if (kind == StepKind::kFlexible) {
    p[0] = p_ok * (1.0 - policy.p_alternate);
    p[1] = p_ok * policy.p_alternate;
    n_ok = 2;
  } else {
    p[0] = p_ok;
  }
  const std::size_t n_wrong = A - n_ok;
  std::vector<double> w(n_wrong);
  double wsum = 0.0;
  for (std::size_t k = 0; k < n_wrong; ++k) {
    w[k] = k == 0 ? 1.0 : std::pow(policy.spread, static_cast<double>(k));
    wsum += w[k];
  }
  const double residual = 1.0 - p_ok;
  for (std::size_t k = 0; k < n_wrong; ++k) p[n_ok + k] = residual * w[k] / wsum;
  return p;
}

inline ActionDist policy_dist(const ScriptedPolicy& policy, const State& state, const TaskSpec& task) {
  if (state.terminal) throw UsageError("policy_dist: state is terminal");
  const int subgoal = state.subgoal();
  const auto order = action_order(task, subgoal);
  const auto ordered = ordered_probabilities(policy, task, subgoal);
  ActionDist d;
  d.probabilities.assign(order.size(), 0.0);
  for (std::size_t k = 0; k < order.size(); ++k) d.probabilities[static_cast<std::size_t>(order[k])] = ordered[k];
  return d;
}

// Inverse-CDF draw walking the acceptable-first order. For a shared uniform,
// two policies with equal acceptable mass at a subgoal agree on whether the
// drawn action is acceptable.
inline int sample_action(const ScriptedPolicy& policy, const State& state, const TaskSpec& task, double u) {
  if (state.terminal) throw UsageError("sample_action: state is terminal");
  const int subgoal = state.subgoal();
  const auto order = action_order(task, subgoal);
  const auto ordered = ordered_probabilities(policy, task, subgoal);
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (ordered[k] <= 0.0) continue;
    last_positive = k;
    cum += ordered[k];
    if (u < cum) return order[k];
  }
  return order[last_positive];
}

inline int greedy_action(const ScriptedPolicy& policy, const State& state, const TaskSpec& task) {
  const auto d = policy_dist(policy, state, task);
  // Ties resolve in acceptable-first order.
  const auto order = action_order(task, state.subgoal());
  int best = order[0];
  for (int a : order)
    if (d.probabilities[static_cast<std::size_t>(a)] > d.probabilities[static_cast<std::size_t>(best)]) best = a;
  return best;
}

struct StepResult {
  State next;
  double reward = 0.0;
};

inline StepResult step(const State& state, const TaskSpec& task, int action) {
  if (state.terminal) throw UsageError("step: state is terminal");
  if (action < 0 || action >= task.action_count)
    throw UsageError("step: action " + std::to_string(action) + " outside [0, " +
                     std::to_string(task.action_count) + ")");
  const int subgoal = state.subgoal();
  int progress = state.progress;
  bool failed = false;
  if (is_acceptable(task, subgoal, action)) {
    ++progress;
  } else if (task.kind(subgoal) == StepKind::kCritical && !task.partial_credit) {
    failed = true;
  }
  StepResult r;
  r.next = make_state(task, state.step_index + 1, progress, failed);
  if (r.next.terminal) r.reward = episode_return(r.next, task);
  return r;
}

// Scripted reasoning-length analogue, uniform over the kind's range.
inline int reasoning_length(const TaskSpec& task, int subgoal, double u) {
  const auto& r = task.kind(subgoal) == StepKind::kCritical ? task.critical_length : task.routine_length;
  const int span = r.max - r.min + 1;
  return r.min + std::min(span - 1, static_cast<int>(u * span));
}

// Entropy in nats with 0 log 0 = 0. Actions are atomic, so the
// length-normalized token entropy reduces to a single distribution.
inline double entropy(const ActionDist& dist) {
  double h = 0.0;
  for (double p : dist.probabilities)
    if (p > 0.0) h -= p * std::log(p);
  return std::max(0.0, h);
}

inline void validate_dist(const ActionDist& d, double tol = 1e-9) {
  double sum = 0.0;
  for (double p : d.probabilities) {
    if (!(p >= 0.0)) throw UsageError("ActionDist has a negative entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > tol) throw UsageError("ActionDist does not sum to 1");
}

}  // namespace hera
