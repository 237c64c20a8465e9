#pragma once

// Stage I: pick tasks where the cloud clearly beats the device, replay the
// device on their cloud trajectories, and fit the router to the
// disagreement labels.

#include <map>
#include <set>

#include "hera/rollout.hpp"
#include "hera/train.hpp"

namespace hera {

struct DiffTaskReport {
  std::string task_id;
  double r_device = 0.0;
  double r_cloud = 0.0;
  bool selected = false;
};

// Strict: a gap equal to delta is not selected.
inline bool is_diff_task(double r_cloud, double r_device, double delta) { return r_cloud - r_device > delta; }

struct DiffSelection {
  std::vector<std::string> selected;
  std::vector<DiffTaskReport> reports;
  std::vector<Trajectory> device_trajectories;  // rollouts_per_task per task, task-major
  std::vector<Trajectory> cloud_trajectories;
};

inline DiffSelection select_diff_tasks(const std::vector<TaskSpec>& tasks, const ScriptedPolicy& device,
                                       const ScriptedPolicy& cloud, double delta, int rollouts_per_task,
                                       std::uint64_t master_seed, unsigned jobs = 1) {
  if (tasks.empty()) throw UsageError("select_diff_tasks: empty task set");
  if (!(delta >= 0.0)) throw ConfigError("select_diff_tasks: delta must be >= 0");
  if (rollouts_per_task < 1) throw ConfigError("select_diff_tasks: rollouts_per_task must be >= 1");
  struct PerTask {
    std::vector<Trajectory> dev, cl;
  };
  auto per = parallel_map<PerTask>(tasks.size(), jobs, [&](std::size_t i) {
    PerTask p;
    for (int r = 0; r < rollouts_per_task; ++r) {
      const auto idx = static_cast<std::uint64_t>(r);
      p.dev.push_back(run_episode(tasks[i], device, cloud, DeviceOnly{}, master_seed, idx, "device"));
      p.cl.push_back(run_episode(tasks[i], device, cloud, CloudOnly{}, master_seed, idx, "cloud"));
    }
    return p;
  });
  DiffSelection out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    DiffTaskReport rep;
    rep.task_id = tasks[i].task_id;
    for (int r = 0; r < rollouts_per_task; ++r) {
      rep.r_device += per[i].dev[static_cast<std::size_t>(r)].ret;
      rep.r_cloud += per[i].cl[static_cast<std::size_t>(r)].ret;
    }
    rep.r_device /= rollouts_per_task;
    rep.r_cloud /= rollouts_per_task;
    rep.selected = is_diff_task(rep.r_cloud, rep.r_device, delta);
    if (rep.selected) out.selected.push_back(rep.task_id);
    out.reports.push_back(rep);
    for (auto& t : per[i].dev) out.device_trajectories.push_back(std::move(t));
    for (auto& t : per[i].cl) out.cloud_trajectories.push_back(std::move(t));
  }
  return out;
}

// 1 when the device disagrees with the cloud oracle (route to cloud).
inline int consistency_label(int device_action, int cloud_action) { return device_action == cloud_action ? 0 : 1; }

struct ILDatasetOptions {
  ReplaySampling sampling = ReplaySampling::kSample;
  bool dedupe = false;
};

// One example per step of the reference cloud trajectory of each selected
// task. The reference trajectory of a task is the first cloud-only
// trajectory recorded for it.
inline std::vector<LabeledStep> build_il_dataset(const std::vector<std::string>& selected,
                                                 const std::vector<Trajectory>& cloud_trajectories,
                                                 const std::vector<TaskSpec>& tasks, const ScriptedPolicy& device,
                                                 const ILDatasetOptions& opts, std::uint64_t master_seed) {
  std::map<std::string, const TaskSpec*> task_by_id;
  for (const auto& t : tasks) task_by_id.emplace(t.task_id, &t);
  std::map<std::string, const Trajectory*> ref;
  for (const auto& tr : cloud_trajectories) ref.emplace(tr.task_id, &tr);

  std::vector<LabeledStep> out;
  std::set<std::pair<std::string, int>> seen;
  for (const auto& id : selected) {
    auto tr = ref.find(id);
    if (tr == ref.end()) throw DataError("build_il_dataset: no cloud trajectory for selected task " + id);
    auto task = task_by_id.find(id);
    if (task == task_by_id.end()) throw DataError("build_il_dataset: unknown task " + id);
    for (const auto& r : replay_device_on(*tr->second, *task->second, device, opts.sampling, master_seed)) {
      const int y = consistency_label(r.device_action, r.cloud_action);
      if (opts.dedupe && !seen.emplace(r.canonical_key, y).second) continue;
      LabeledStep ex;
      ex.task_id = id;
      ex.canonical_key = r.canonical_key;
      ex.features = r.features;
      ex.label = y;
      ex.stage = Stage::kIL;
      ex.source = tr->second->trajectory_id;
      ex.step_index = r.t;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

struct ILOptions {
  TrainOptions train{};
  double holdout_fraction = 0.1;
  int eval_every = 500;
};

struct ILMetric {
  std::uint64_t iteration = 0;
  double train_loss = 0.0;
  double holdout_accuracy = 0.0;
};

struct ILResult {
  RouterParams params;
  AnchorParams anchor;
  std::vector<ILMetric> history;
  std::vector<std::string> train_tasks;
  std::vector<std::string> holdout_tasks;
};

struct TaskSplit {
  std::vector<std::string> train;
  std::vector<std::string> holdout;
};

// Task-level split; steps of one trajectory never straddle the split.
inline TaskSplit split_tasks(const std::vector<LabeledStep>& data, double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
    throw ConfigError("il: holdout_fraction must lie in [0, 1)");
  std::set<std::string> ids;
  for (const auto& ex : data) ids.insert(ex.task_id);
  std::vector<std::string> all(ids.begin(), ids.end());
  Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(Stream::kSplit)});
  rng.shuffle(all);
  std::size_t n_hold = 0;
  if (all.size() >= 2 && holdout_fraction > 0.0)
    n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(all.size()))));
  TaskSplit s;
  s.holdout.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_hold));
  s.train.assign(all.begin() + static_cast<std::ptrdiff_t>(n_hold), all.end());
  std::sort(s.holdout.begin(), s.holdout.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

inline ILResult train_il(const std::vector<LabeledStep>& dataset, RouterParams params, const ILOptions& opts,
                         std::uint64_t seed) {
  if (dataset.empty()) throw TrainingError("train_il: empty dataset (no task passed the difficulty-gap filter)");
  opts.train.validate("il");
  if (opts.eval_every < 1) throw ConfigError("il: eval_every must be >= 1");
  const TaskSplit split = split_tasks(dataset, opts.holdout_fraction, seed);
  const std::set<std::string> hold(split.holdout.begin(), split.holdout.end());
  std::vector<LabeledStep> train, holdout;
  for (const auto& ex : dataset) (hold.count(ex.task_id) ? holdout : train).push_back(ex);

  OptimizerState opt = make_optimizer(params, opts.train.lr, opts.train.weight_decay);
  BatchSampler sampler(train, opts.train.batch, Rng::derive(seed, {static_cast<std::uint64_t>(Stream::kShuffle)}));
  const BceOptions bce{opts.train.positive_weight};
  std::vector<ILMetric> history;
  auto record = [&](std::uint64_t it) {
    const double loss = bce_loss_and_grad(params, train, bce).loss;
    check_loss(loss, it, "train_il");
    history.push_back({it, loss, label_accuracy(params, holdout)});
  };
  record(0);
  for (int it = 1; it <= opts.train.iterations; ++it) {
    const auto batch = sampler.next();
    auto lg = bce_loss_and_grad(params, batch, bce);
    check_loss(lg.loss, static_cast<std::uint64_t>(it), "train_il");
    apply_update(params, opt, opts.train, lg.grad);
    if (it % opts.eval_every == 0 || it == opts.train.iterations) record(static_cast<std::uint64_t>(it));
  }
  AnchorParams anchor(params);
  return ILResult{std::move(params), std::move(anchor), std::move(history), split.train, split.holdout};
}

}  // namespace hera
