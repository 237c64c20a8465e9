#pragma once

// Stage drivers shared by the command-line tool and the tests. Each stage
// has an in-memory form and a form that reads and writes a run directory:
//
//   <run>/config.json
//   <run>/trajectories/{device,cloud}.jsonl
//   <run>/datasets/{il,rl}.jsonl
//   <run>/checkpoints/{il,rl}.ckpt
//   <run>/reports/*.csv, pareto.svg
//   <run>/manifest.json

#include "hera/reports.hpp"

namespace hera {

inline Config load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// Hash of everything that influences results; the worker count does not.
inline std::string result_config_hash(Config c) {
  c.jobs = 0;
  return config_hash(c);
}

struct Workspace {
  Config config;
  EnvConfig env;
  std::vector<TaskSpec> train_tasks;
  std::vector<TaskSpec> eval_tasks;
  unsigned jobs = 1;
};

inline Workspace make_workspace(const Config& c) {
  c.validate();
  Workspace ws;
  ws.config = c;
  ws.env = effective_env(c);
  ws.train_tasks = make_task_set(ws.env, c.train_tasks, derive_seed(c, SeedPurpose::kTrainTasks), "train");
  ws.eval_tasks = make_task_set(ws.env, c.eval_tasks, derive_seed(c, SeedPurpose::kEvalTasks), "eval");
  ws.jobs = c.effective_jobs();
  return ws;
}

// ---------------------------------------------------------------------------
// In-memory stages.

inline DiffSelection stage_rollout(const Workspace& ws) {
  const auto& c = ws.config;
  return select_diff_tasks(ws.train_tasks, c.device, c.cloud, c.il.delta, c.il.rollouts_per_task,
                           derive_seed(c, SeedPurpose::kDiffRollouts), ws.jobs);
}

// Rebuilds the selection from stored device and cloud rollouts.
inline DiffSelection selection_from_trajectories(const Workspace& ws, std::vector<Trajectory> device,
                                                 std::vector<Trajectory> cloud) {
  std::map<std::string, std::pair<double, int>> dev, cl;
  for (const auto& t : device) {
    auto& a = dev[t.task_id];
    a.first += t.ret;
    ++a.second;
  }
  for (const auto& t : cloud) {
    auto& a = cl[t.task_id];
    a.first += t.ret;
    ++a.second;
  }
  DiffSelection s;
  for (const auto& task : ws.train_tasks) {
    auto d = dev.find(task.task_id);
    auto c = cl.find(task.task_id);
    if (d == dev.end() || c == cl.end()) throw DataError("trajectories do not cover task " + task.task_id);
    DiffTaskReport r;
    r.task_id = task.task_id;
    r.r_device = d->second.first / d->second.second;
    r.r_cloud = c->second.first / c->second.second;
    r.selected = is_diff_task(r.r_cloud, r.r_device, ws.config.il.delta);
    if (r.selected) s.selected.push_back(r.task_id);
    s.reports.push_back(r);
  }
  s.device_trajectories = std::move(device);
  s.cloud_trajectories = std::move(cloud);
  return s;
}

struct ILStage {
  std::vector<LabeledStep> dataset;
  ILResult result;
};

inline ILStage stage_il(const Workspace& ws, const DiffSelection& sel) {
  const auto& c = ws.config;
  ILDatasetOptions dopts{c.il.replay_sampling, c.il.dedupe};
  auto data = build_il_dataset(sel.selected, sel.cloud_trajectories, ws.train_tasks, c.device, dopts,
                               derive_seed(c, SeedPurpose::kReplay));
  RouterParams init = init_params(c.router.architecture(ws.env.feature_size()), derive_seed(c, SeedPurpose::kRouterInit));
  ILResult res = train_il(data, std::move(init), c.il.options, derive_seed(c, SeedPurpose::kILTrain));
  return ILStage{std::move(data), std::move(res)};
}

struct RLStage {
  RouterParams params;
  OptimizerState optimizer;
  std::vector<IterationReport> iterations;
  std::vector<LabeledStep> last_dataset;
};

inline RLStage stage_rl(const Workspace& ws, const RouterParams& start, const AnchorParams& anchor) {
  const auto& c = ws.config;
  RLStage s{start, make_optimizer(start, c.rl.train.lr, c.rl.train.weight_decay), {}, {}};
  for (int k = 1; k <= c.rl.iterations; ++k)
    s.iterations.push_back(rl_iteration(ws.train_tasks, s.params, s.optimizer, anchor, c.rl, c.device, c.cloud, k,
                                        derive_seed(c, SeedPurpose::kRL), ws.jobs, &s.last_dataset));
  return s;
}

inline EvalContext eval_context(const Workspace& ws) {
  const auto& c = ws.config;
  return EvalContext{&c.device, &c.cloud, c.cost, c.eval.success_threshold, ws.jobs};
}

struct NamedRouter {
  std::string name;
  RouterParams params;
};

inline RoutingMode router_mode(const Workspace& ws, const RouterParams& p) {
  return RouterRoute{&p, 1.0, ws.config.eval.sampling, ws.config.eval.threshold};
}

// Device-only, cloud-only, each router, and random routing at each router's
// realized cloud-step fraction.
inline std::vector<EvalReport> stage_eval(const Workspace& ws, const std::vector<NamedRouter>& routers) {
  const auto ctx = eval_context(ws);
  const auto seeds = eval_stream_seeds(ws.config);
  std::vector<EvalReport> out;
  out.push_back(evaluate("device_only", DeviceOnly{}, ws.eval_tasks, seeds, ctx));
  out.push_back(evaluate("cloud_only", CloudOnly{}, ws.eval_tasks, seeds, ctx));
  for (const auto& r : routers) out.push_back(evaluate(r.name, router_mode(ws, r.params), ws.eval_tasks, seeds, ctx));
  for (const auto& r : routers) {
    const auto& rep = *std::find_if(out.begin(), out.end(), [&](const EvalReport& e) { return e.method == r.name; });
    out.push_back(evaluate("random_matched_" + r.name, RandomRoute{rep.cloud_step_fraction}, ws.eval_tasks, seeds, ctx));
  }
  return out;
}

inline std::vector<ParetoPoint> stage_sweep(const Workspace& ws, const std::vector<NamedRouter>& routers) {
  const auto& e = ws.config.eval;
  std::vector<SweepSpec> specs;
  specs.push_back({"random", KnobKind::kRandomP, e.random_grid, nullptr});
  specs.push_back({"entropy", KnobKind::kEntropyThreshold, e.entropy_grid, nullptr});
  for (const auto& r : routers) specs.push_back({r.name, KnobKind::kRouterThreshold, e.threshold_grid, &r.params});
  return pareto_sweep(specs, ws.eval_tasks, eval_stream_seeds(ws.config), eval_context(ws));
}

inline StepAnalysis stage_analyze(const Workspace& ws, const std::vector<Trajectory>& cloud_trajectories) {
  return analyze_steps(cloud_trajectories, ws.train_tasks, ws.config.device, ws.config.il.replay_sampling,
                       derive_seed(ws.config, SeedPurpose::kAnalysis));
}

// ---------------------------------------------------------------------------
// Run directory I/O.

struct RunPaths {
  fs::path root;
  fs::path config() const { return root / "config.json"; }
  fs::path device_trajectories() const { return root / "trajectories" / "device.jsonl"; }
  fs::path cloud_trajectories() const { return root / "trajectories" / "cloud.jsonl"; }
  fs::path il_dataset() const { return root / "datasets" / "il.jsonl"; }
  fs::path rl_dataset() const { return root / "datasets" / "rl.jsonl"; }
  fs::path il_checkpoint() const { return root / "checkpoints" / "il.ckpt"; }
  fs::path rl_checkpoint() const { return root / "checkpoints" / "rl.ckpt"; }
  fs::path report(const std::string& name) const { return root / "reports" / name; }
};

inline void write_config(const RunPaths& run, const Config& c) {
  atomic_write(run.config(), config_to_json(c).dump(2) + "\n");
}

inline void write_manifest(const RunPaths& run, const Config& c, const std::string& stage,
                           const std::vector<std::string>& command) {
  RunManifest m;
  m.config_hash = result_config_hash(c);
  m.run_id = run.root.filename().string();
  m.stage = stage;
  m.seed = c.seed;
  m.eval_seeds = c.eval.seeds;
  m.created_at = utc_timestamp();
  m.command = command;
  m.artifacts = scan_artifacts(run.root);
  save_manifest(run.root, m);
}

// Stored trajectories may sit in a run directory or be given as one file
// per tier: "<dir>" resolves to <dir>/trajectories/{device,cloud}.jsonl.
inline std::pair<std::vector<Trajectory>, std::vector<Trajectory>> load_rollouts(const fs::path& where) {
  RunPaths src{where};
  fs::path dev = src.device_trajectories(), cl = src.cloud_trajectories();
  if (!fs::exists(dev) && fs::exists(where / "device.jsonl")) {
    dev = where / "device.jsonl";
    cl = where / "cloud.jsonl";
  }
  if (!fs::exists(dev) || !fs::exists(cl)) throw DataError("no device/cloud trajectories under " + where.string());
  return {load_trajectories(dev), load_trajectories(cl)};
}

inline void write_rollout(const RunPaths& run, const DiffSelection& sel) {
  save_trajectories(run.device_trajectories(), sel.device_trajectories);
  save_trajectories(run.cloud_trajectories(), sel.cloud_trajectories);
  atomic_write(run.report("diff_tasks.csv"), diff_tasks_csv(sel.reports));
}

inline void write_il(const RunPaths& run, const Workspace& ws, const ILStage& il) {
  save_labeled_steps(run.il_dataset(), il.dataset);
  save_checkpoint(run.il_checkpoint(),
                  Checkpoint{il.result.params, il.result.anchor, std::nullopt, Stage::kIL, result_config_hash(ws.config)});
  atomic_write(run.report("il_metrics.csv"), il_metrics_csv(il.result.history));
}

inline void write_rl(const RunPaths& run, const Workspace& ws, const RLStage& rl, const AnchorParams& anchor) {
  save_labeled_steps(run.rl_dataset(), rl.last_dataset);
  save_checkpoint(run.rl_checkpoint(),
                  Checkpoint{rl.params, anchor, rl.optimizer, Stage::kRL, result_config_hash(ws.config)});
  atomic_write(run.report("rl_iterations.csv"), rl_iterations_csv(rl.iterations));
}

inline double cloud_only_steps(const std::vector<EvalReport>& reports) {
  for (const auto& r : reports)
    if (r.method == "cloud_only") return r.mean_steps;
  return 0.0;
}

inline void write_eval(const RunPaths& run, const std::vector<EvalReport>& reports) {
  atomic_write(run.report("eval_report.csv"), eval_report_csv(reports, cloud_only_steps(reports)));
}

inline void write_sweep(const RunPaths& run, const std::vector<ParetoPoint>& points) {
  atomic_write(run.report("pareto.csv"), pareto_csv(points));
  atomic_write(run.report("pareto.svg"), pareto_svg(points));
}

inline void write_analysis(const RunPaths& run, const StepAnalysis& a) {
  atomic_write(run.report("step_analysis.csv"), step_analysis_csv(a));
}

// Checkpoint-derived router name: "router_<file stem>".
inline NamedRouter load_router(const fs::path& path, const Workspace& ws) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.params.arch.input_size != ws.env.feature_size())
    throw DataError("checkpoint " + path.string() + " expects " + std::to_string(ck.params.arch.input_size) +
                    " features, the configured environment has " + std::to_string(ws.env.feature_size()));
  return NamedRouter{"router_" + path.stem().string(), std::move(ck.params)};
}

struct PipelineResult {
  Workspace workspace;
  DiffSelection selection;
  ILStage il;
  RLStage rl;
  std::vector<EvalReport> eval;
  std::vector<ParetoPoint> pareto;
  StepAnalysis analysis;
};

// rollout -> IL -> RL -> eval (+ sweep and step analysis). With `run` set,
// every artifact and a manifest are written under it.
inline PipelineResult run_pipeline(const Config& c, const std::optional<RunPaths>& run = std::nullopt,
                                   const std::vector<std::string>& command = {}) {
  PipelineResult r{make_workspace(c), {}, {}, {}, {}, {}, {}};
  const Workspace& ws = r.workspace;
  if (run) write_config(*run, c);
  r.selection = stage_rollout(ws);
  if (run) write_rollout(*run, r.selection);
  r.il = stage_il(ws, r.selection);
  if (run) write_il(*run, ws, r.il);
  r.rl = stage_rl(ws, r.il.result.params, r.il.result.anchor);
  if (run) write_rl(*run, ws, r.rl, r.il.result.anchor);
  const std::vector<NamedRouter> routers{{"router_il", r.il.result.params}, {"router_rl", r.rl.params}};
  r.eval = stage_eval(ws, routers);
  r.pareto = stage_sweep(ws, routers);
  r.analysis = stage_analyze(ws, r.selection.cloud_trajectories);
  if (run) {
    write_eval(*run, r.eval);
    write_sweep(*run, r.pareto);
    write_analysis(*run, r.analysis);
    write_manifest(*run, c, "pipeline", command);
  }
  return r;
}

}  // namespace hera
