// hera: command-line driver for the two-stage router pipeline.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 config error, 3 data error,
// 4 training error, 5 usage error.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "hera/pipeline.hpp"

namespace {

using namespace hera;

struct Common {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
};

std::optional<std::uint64_t> env_u64(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  std::uint64_t out = 0;
  const char* end = v + std::strlen(v);
  auto [p, ec] = std::from_chars(v, end, out);
  if (ec != std::errc() || p != end) throw ConfigError(std::string(name) + " must be a non-negative integer");
  return out;
}

// Flags win over environment variables, which win over the file.
Config resolve_config(const Common& o) {
  Config c = load_config(o.config_path);
  if (auto s = env_u64("HERA_SEED")) c.seed = *s;
  if (auto j = env_u64("HERA_JOBS")) c.jobs = static_cast<unsigned>(*j);
  if (o.seed) c.seed = *o.seed;
  if (o.jobs) c.jobs = *o.jobs;
  c.validate();
  return c;
}

// Outputs are staged in a sibling directory and moved into place only after
// the command succeeds, so a failed command leaves nothing behind.
class Staging {
 public:
  explicit Staging(const fs::path& out) : out_(out) {
    fs::path base = out_.has_filename() ? out_ : out_.parent_path();
    dir_ = base;
    dir_ += ".staging." + std::to_string(::getpid());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Staging() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }
  RunPaths paths() const { return RunPaths{dir_}; }

  void commit() {
    fs::create_directories(out_);
    for (const auto& e : fs::recursive_directory_iterator(dir_)) {
      if (!e.is_regular_file()) continue;
      const fs::path dst = out_ / fs::relative(e.path(), dir_);
      fs::create_directories(dst.parent_path());
      fs::rename(e.path(), dst);
    }
  }

 private:
  fs::path out_;
  fs::path dir_;
};

void finish(Staging& st, const fs::path& out, const Config& c, const std::string& stage,
            const std::vector<std::string>& argv) {
  write_config(st.paths(), c);
  st.commit();
  write_manifest(RunPaths{out}, c, stage, argv);
}

void print_eval(const std::vector<EvalReport>& reports) {
  for (const auto& r : reports)
    std::cout << r.method << ": success " << format_double(r.success_rate) << ", cloud calls "
              << format_double(r.mean_cloud_calls) << ", cloud step fraction " << format_double(r.cloud_step_fraction)
              << "\n";
}

int run(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Two-stage device/cloud router training and evaluation"};
  app.require_subcommand(1);
  Common o;
  std::string mode = "both";
  std::string trajectories;
  std::vector<std::string> checkpoints;

  auto common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", o.config_path, "JSON config file")->required()->check(CLI::ExistingFile);
    auto* out = sub->add_option("--out", o.out, "run directory");
    if (needs_out) out->required();
    sub->add_option("--seed", o.seed, "master seed (overrides HERA_SEED and the config)");
    sub->add_option("--jobs", o.jobs, "worker threads (overrides HERA_JOBS and the config)");
  };

  auto* rollout = app.add_subcommand("rollout", "device/cloud rollouts on the training tasks");
  common(rollout, true);
  rollout->add_option("--mode", mode, "which tier to roll out")->check(CLI::IsMember({"both", "device", "cloud"}));

  auto* train_il = app.add_subcommand("train-il", "imitation-learning stage");
  common(train_il, true);
  train_il->add_option("--trajectories", trajectories, "run directory or folder with device/cloud JSONL")->required();

  auto* train_rl = app.add_subcommand("train-rl", "reinforcement-learning stage from an IL checkpoint");
  common(train_rl, true);
  train_rl->add_option("--checkpoint", checkpoints, "IL checkpoint")->required()->expected(1);

  auto* eval = app.add_subcommand("eval", "evaluate baselines and routers on the evaluation tasks");
  common(eval, true);
  eval->add_option("--checkpoint", checkpoints, "router checkpoint (repeatable)")->required();

  auto* analyze = app.add_subcommand("analyze", "device replay statistics on cloud trajectories");
  common(analyze, true);
  analyze->add_option("--trajectories", trajectories, "run directory or folder with cloud JSONL")->required();

  auto* sweep = app.add_subcommand("sweep", "Pareto sweeps over routing knobs");
  common(sweep, true);
  sweep->add_option("--checkpoint", checkpoints, "router checkpoint (repeatable)");

  auto* pipeline = app.add_subcommand("pipeline", "rollout, IL, RL, eval, sweep and analysis in one run");
  common(pipeline, true);

  auto* print = app.add_subcommand("print-config", "print the effective config with defaults filled in");
  common(print, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 5;
  }

  const Config c = resolve_config(o);
  if (print->parsed()) {
    std::cout << config_to_json(c).dump(2) << "\n";
    return 0;
  }
  const fs::path out(o.out);
  const Workspace ws = make_workspace(c);

  if (rollout->parsed()) {
    DiffSelection sel = stage_rollout(ws);
    Staging st(out);
    if (mode != "cloud") save_trajectories(st.paths().device_trajectories(), sel.device_trajectories);
    if (mode != "device") save_trajectories(st.paths().cloud_trajectories(), sel.cloud_trajectories);
    if (mode == "both") atomic_write(st.paths().report("diff_tasks.csv"), diff_tasks_csv(sel.reports));
    finish(st, out, c, "rollout", args);
    std::cout << sel.selected.size() << " of " << sel.reports.size() << " tasks pass the difficulty-gap filter\n";
  } else if (train_il->parsed()) {
    auto [dev, cl] = load_rollouts(trajectories);
    const DiffSelection sel = selection_from_trajectories(ws, std::move(dev), std::move(cl));
    const ILStage il = stage_il(ws, sel);
    Staging st(out);
    write_il(st.paths(), ws, il);
    finish(st, out, c, "train-il", args);
    const auto& last = il.result.history.back();
    std::cout << "IL: " << il.dataset.size() << " examples, final loss " << format_double(last.train_loss)
              << ", holdout accuracy " << format_double(last.holdout_accuracy) << "\n";
  } else if (train_rl->parsed()) {
    Checkpoint ck = load_checkpoint(checkpoints.front());
    if (ck.stage != Stage::kIL) throw UsageError("train-rl expects an IL checkpoint");
    if (ck.params.arch.input_size != ws.env.feature_size())
      throw DataError("checkpoint feature size does not match the configured environment");
    const AnchorParams anchor = ck.anchor ? *ck.anchor : AnchorParams(ck.params);
    const RLStage rl = stage_rl(ws, ck.params, anchor);
    Staging st(out);
    write_rl(st.paths(), ws, rl, anchor);
    finish(st, out, c, "train-rl", args);
    for (const auto& r : rl.iterations)
      std::cout << "RL iteration " << r.iteration << ": success " << format_double(r.mean_success)
                << ", cloud calls " << format_double(r.mean_cloud_calls) << ", labeled groups " << r.labeled_groups
                << "\n";
  } else if (eval->parsed() || sweep->parsed()) {
    std::vector<NamedRouter> routers;
    for (const auto& p : checkpoints) routers.push_back(load_router(p, ws));
    Staging st(out);
    if (eval->parsed()) {
      const auto reports = stage_eval(ws, routers);
      write_eval(st.paths(), reports);
      finish(st, out, c, "eval", args);
      print_eval(reports);
    } else {
      write_sweep(st.paths(), stage_sweep(ws, routers));
      finish(st, out, c, "sweep", args);
    }
  } else if (analyze->parsed()) {
    auto [dev, cl] = load_rollouts(trajectories);
    const StepAnalysis a = stage_analyze(ws, cl);
    Staging st(out);
    write_analysis(st.paths(), a);
    finish(st, out, c, "analyze", args);
    std::cout << "match rate " << format_double(a.match_rate_overall) << " over " << a.steps << " steps\n";
  } else if (pipeline->parsed()) {
    Staging st(out);
    const PipelineResult r = run_pipeline(c, st.paths(), args);
    fs::remove(st.paths().root / "manifest.json");
    st.commit();
    write_manifest(RunPaths{out}, c, "pipeline", args);
    print_eval(r.eval);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const hera::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const hera::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const hera::TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 4;
  } catch (const hera::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
