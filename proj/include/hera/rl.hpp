#pragma once

// Stage II: pool every visit to an identical state across N rollouts of a
// task, estimate return and remaining cloud usage per routing decision, turn
// them into preference labels and refit the router with an L2 pull toward
// the imitation-learning anchor.

#include <map>
#include <optional>

#include "hera/rollout.hpp"
#include "hera/train.hpp"

namespace hera {

struct Occurrence {
  int trajectory = 0;  // index within the rollout group
  int t = 1;
  int decision = 0;
  double ret = 0.0;
  int future_cloud = 0;

  bool operator==(const Occurrence&) const = default;
};

struct StateGroup {
  std::string task_id;
  std::string canonical_key;
  std::vector<double> features;
  std::vector<Occurrence> occurrences;
};

// Keyed by canonical state key; the key already embeds the task id.
using GroupIndex = std::map<std::string, StateGroup>;

inline GroupIndex build_group_index(const std::vector<Trajectory>& trajectories, const std::string& task_id) {
  GroupIndex index;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& tr = trajectories[i];
    if (tr.task_id != task_id)
      throw UsageError("build_group_index: trajectory " + tr.trajectory_id + " does not belong to " + task_id);
    // Suffix sums give the remaining cloud calls, current step included.
    std::vector<int> future(tr.steps.size() + 1, 0);
    for (std::size_t t = tr.steps.size(); t-- > 0;) future[t] = future[t + 1] + tr.steps[t].decision;
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
      const auto& s = tr.steps[t];
      auto [it, fresh] = index.try_emplace(s.canonical_key);
      if (fresh) {
        it->second.task_id = task_id;
        it->second.canonical_key = s.canonical_key;
        it->second.features = s.features;
      }
      it->second.occurrences.push_back({static_cast<int>(i), s.t, s.decision, tr.ret, future[t]});
    }
  }
  return index;
}

enum class SkipReason { kNone, kArm0Undefined, kArm1Undefined };

inline std::string_view to_string(SkipReason r) {
  switch (r) {
    case SkipReason::kNone: return "labeled";
    case SkipReason::kArm0Undefined: return "arm0_undefined";
    case SkipReason::kArm1Undefined: return "arm1_undefined";
  }
  return "?";
}

struct GroupStats {
  std::string task_id;
  std::string canonical_key;
  int n[2] = {0, 0};
  std::optional<double> r_hat[2];
  std::optional<double> c_hat[2];
  std::optional<int> label;
  SkipReason skip = SkipReason::kNone;
};

// Decision-conditioned means; an arm with no visits stays undefined.
inline GroupStats group_estimates(const std::vector<Occurrence>& occurrences) {
  if (occurrences.empty()) throw UsageError("group_estimates: empty occurrence list");
  GroupStats g;
  double r_sum[2] = {0.0, 0.0};
  double c_sum[2] = {0.0, 0.0};
  for (const auto& o : occurrences) {
    if (o.decision != 0 && o.decision != 1) throw UsageError("group_estimates: decision must be 0 or 1");
    ++g.n[o.decision];
    r_sum[o.decision] += o.ret;
    c_sum[o.decision] += o.future_cloud;
  }
  for (int d = 0; d < 2; ++d) {
    if (g.n[d] == 0) continue;
    g.r_hat[d] = r_sum[d] / g.n[d];
    g.c_hat[d] = c_sum[d] / g.n[d];
  }
  return g;
}

// Margin rule: clear return winner, otherwise the arm with fewer expected
// cloud calls (device on an exact tie). Groups with an undefined arm are
// skipped.
inline GroupStats& preference_label(GroupStats& g, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("preference_label: epsilon must be > 0");
  g.label.reset();
  if (!g.r_hat[0]) {
    g.skip = SkipReason::kArm0Undefined;
    return g;
  }
  if (!g.r_hat[1]) {
    g.skip = SkipReason::kArm1Undefined;
    return g;
  }
  g.skip = SkipReason::kNone;
  const double r0 = *g.r_hat[0], r1 = *g.r_hat[1];
  if (r1 - r0 > epsilon) {
    g.label = 1;
  } else if (r0 - r1 > epsilon) {
    g.label = 0;
  } else {
    g.label = *g.c_hat[1] < *g.c_hat[0] ? 1 : 0;
  }
  return g;
}

struct RLLabelReport {
  std::vector<LabeledStep> dataset;
  std::vector<GroupStats> groups;
  int labeled = 0;
  int skipped_arm0 = 0;
  int skipped_arm1 = 0;

  int skipped() const { return skipped_arm0 + skipped_arm1; }
};

// Groups and labels every task's rollout set; never throws on an empty
// result (see build_rl_dataset).
inline RLLabelReport label_groups(const std::vector<std::vector<Trajectory>>& per_task, double epsilon) {
  RLLabelReport rep;
  for (const auto& group : per_task) {
    if (group.empty()) continue;
    const GroupIndex index = build_group_index(group, group.front().task_id);
    for (const auto& [key, sg] : index) {
      GroupStats g = group_estimates(sg.occurrences);
      g.task_id = sg.task_id;
      g.canonical_key = key;
      preference_label(g, epsilon);
      if (g.label) {
        ++rep.labeled;
        LabeledStep ex;
        ex.task_id = sg.task_id;
        ex.canonical_key = key;
        ex.features = sg.features;
        ex.label = *g.label;
        ex.stage = Stage::kRL;
        ex.source = key;
        ex.step_index = 0;
        rep.dataset.push_back(std::move(ex));
      } else if (g.skip == SkipReason::kArm0Undefined) {
        ++rep.skipped_arm0;
      } else {
        ++rep.skipped_arm1;
      }
      rep.groups.push_back(std::move(g));
    }
  }
  return rep;
}

inline RLLabelReport build_rl_dataset(const std::vector<std::vector<Trajectory>>& per_task, double epsilon) {
  RLLabelReport rep = label_groups(per_task, epsilon);
  if (rep.labeled == 0)
    throw TrainingError("build_rl_dataset: no state group has both routing decisions (" +
                        std::to_string(rep.skipped_arm0) + " groups never routed to device, " +
                        std::to_string(rep.skipped_arm1) +
                        " never routed to cloud); raise the temperature gamma or the rollout count N");
  return rep;
}

struct RLTrainMetrics {
  double loss = 0.0;
  double agreement = 0.0;
  double param_distance = 0.0;
};

// Minimizes BCE + beta * ||phi - phi_IL||^2 for `opts.iterations` steps.
inline RLTrainMetrics train_rl(const std::vector<LabeledStep>& dataset, RouterParams& params, OptimizerState& opt,
                               const AnchorParams& anchor, double beta, const TrainOptions& opts, Rng rng) {
  if (dataset.empty()) throw TrainingError("train_rl: empty dataset");
  opts.validate("rl");
  if (!(anchor.params().arch == params.arch)) throw UsageError("train_rl: anchor shape does not match parameters");
  BatchSampler sampler(dataset, opts.batch, std::move(rng));
  const BceOptions bce{opts.positive_weight};
  for (int it = 1; it <= opts.iterations; ++it) {
    const auto batch = sampler.next();
    auto lg = anchored_loss_and_grad(params, anchor, batch, beta, bce);
    check_loss(lg.loss, static_cast<std::uint64_t>(it), "train_rl");
    apply_update(params, opt, opts, lg.grad);
  }
  RLTrainMetrics m;
  m.loss = anchored_loss_and_grad(params, anchor, dataset, beta, bce).loss;
  m.agreement = label_accuracy(params, dataset);
  m.param_distance = l2_distance(params.values, anchor.values());
  return m;
}

struct RLConfig {
  int n = 8;
  double gamma = 1.3;
  double epsilon = 0.05;
  double beta = 0.1;
  TrainOptions train{1e-5, 0.01, 256, 500, OptimizerKind::kAdamW, 1.0};
  int iterations = 15;

  void validate() const {
    if (n < 1) throw ConfigError("rl: N must be >= 1");
    if (!(gamma > 0.0)) throw ConfigError("rl: gamma must be > 0");
    if (!(epsilon > 0.0)) throw ConfigError("rl: epsilon must be > 0");
    if (!(beta >= 0.0)) throw ConfigError("rl: beta must be >= 0");
    if (iterations < 0) throw ConfigError("rl: iterations must be >= 0");
    train.validate("rl");
  }
};

struct IterationReport {
  int iteration = 0;
  double mean_success = 0.0;
  double mean_return = 0.0;
  double mean_cloud_calls = 0.0;
  double mean_steps = 0.0;
  double cloud_step_fraction = 0.0;
  int trajectories = 0;
  int labeled_groups = 0;
  int skipped_groups = 0;
  int skipped_arm0 = 0;
  int skipped_arm1 = 0;
  double train_loss = 0.0;
  double label_agreement = 0.0;
  double param_distance_to_anchor = 0.0;
};

// One collect -> group -> label -> update cycle. Rollouts read a snapshot of
// the parameters; the update runs after every rollout is in.
inline IterationReport rl_iteration(const std::vector<TaskSpec>& tasks, RouterParams& params, OptimizerState& opt,
                                    const AnchorParams& anchor, const RLConfig& cfg, const ScriptedPolicy& device,
                                    const ScriptedPolicy& cloud, int iteration, std::uint64_t master_seed,
                                    unsigned jobs = 1, std::vector<LabeledStep>* dataset_out = nullptr) {
  cfg.validate();
  if (tasks.empty()) throw UsageError("rl_iteration: empty task set");
  const RouterParams snapshot = params;
  const RouterRoute mode{&snapshot, cfg.gamma, true, 0.5};
  const std::uint64_t it_seed = hash_path(master_seed, {static_cast<std::uint64_t>(iteration)});
  const std::string tag = "rl" + std::to_string(iteration);
  auto per_task = parallel_map<std::vector<Trajectory>>(tasks.size(), jobs, [&](std::size_t i) {
    return collect_group(tasks[i], cfg.n, device, cloud, mode, it_seed, tag);
  });

  IterationReport rep;
  rep.iteration = iteration;
  for (const auto& group : per_task)
    for (const auto& tr : group) {
      rep.mean_success += tr.status == TerminalStatus::kSuccess ? 1.0 : 0.0;
      rep.mean_return += tr.ret;
      rep.mean_cloud_calls += tr.cloud_calls;
      rep.mean_steps += static_cast<double>(tr.steps.size());
      ++rep.trajectories;
    }
  rep.mean_success /= rep.trajectories;
  rep.mean_return /= rep.trajectories;
  rep.cloud_step_fraction = rep.mean_steps > 0 ? rep.mean_cloud_calls / rep.mean_steps : 0.0;
  rep.mean_cloud_calls /= rep.trajectories;
  rep.mean_steps /= rep.trajectories;

  RLLabelReport labels = build_rl_dataset(per_task, cfg.epsilon);
  rep.labeled_groups = labels.labeled;
  rep.skipped_groups = labels.skipped();
  rep.skipped_arm0 = labels.skipped_arm0;
  rep.skipped_arm1 = labels.skipped_arm1;
  const auto m = train_rl(labels.dataset, params, opt, anchor, cfg.beta, cfg.train,
                          Rng::derive(it_seed, {static_cast<std::uint64_t>(Stream::kShuffle)}));
  rep.train_loss = m.loss;
  rep.label_agreement = m.agreement;
  rep.param_distance_to_anchor = m.param_distance;
  if (dataset_out) *dataset_out = std::move(labels.dataset);
  return rep;
}

}  // namespace hera
