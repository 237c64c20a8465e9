#pragma once

// Run configuration: a JSON document with one object per section. Loading
// is strict; any key the schema does not know is reported as an error.

#include <json.hpp>

#include "hera/eval.hpp"
#include "hera/il.hpp"
#include "hera/rl.hpp"

namespace hera {

using Json = nlohmann::ordered_json;

struct RouterConfig {
  ArchKind kind = ArchKind::kMlp;
  int hidden = 16;
  Activation activation = Activation::kTanh;

  Architecture architecture(int input_size) const {
    Architecture a;
    a.kind = kind;
    a.input_size = input_size;
    a.hidden = kind == ArchKind::kMlp ? hidden : 0;
    a.activation = activation;
    a.validate();
    return a;
  }
};

struct ILConfig {
  double delta = 0.5;
  int rollouts_per_task = 4;
  ILOptions options{TrainOptions{4e-5, 0.01, 64, 20000, OptimizerKind::kAdamW, 1.0}, 0.1, 1000};
  ReplaySampling replay_sampling = ReplaySampling::kSample;
  bool dedupe = false;
};

struct EvalConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double success_threshold = 1.0;
  bool sampling = false;  // router routing at evaluation: greedy unless set
  double threshold = 0.5;
  std::vector<double> random_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> threshold_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> entropy_grid{0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
};

struct Config {
  std::uint64_t seed = 7;
  unsigned jobs = 0;  // 0: hardware concurrency
  EnvConfig env{};
  int train_tasks = 200;
  int eval_tasks = 100;
  ScriptedPolicy device{Tier::kDevice, 0.95, 0.2, 1.0, 0.0};
  ScriptedPolicy cloud{Tier::kCloud, 0.98, 0.98, 1.0, 0.0};
  RouterConfig router{};
  ILConfig il{};
  RLConfig rl{};
  CostModel cost{};
  EvalConfig eval{};

  unsigned effective_jobs() const { return jobs == 0 ? default_jobs() : jobs; }

  void validate() const {
    env.validate();
    if (train_tasks < 1 || eval_tasks < 1) throw ConfigError("env: train_tasks and eval_tasks must be >= 1");
    device.validate();
    cloud.validate();
    if (!(device.p_critical_correct < cloud.p_critical_correct))
      throw ConfigError("policies: device p_critical_correct must be below the cloud's");
    router.architecture(env.feature_size());
    if (!(il.delta >= 0.0)) throw ConfigError("il: delta must be >= 0");
    if (il.rollouts_per_task < 1) throw ConfigError("il: rollouts_per_task must be >= 1");
    il.options.train.validate("il");
    if (il.options.eval_every < 1) throw ConfigError("il: eval_every must be >= 1");
    if (!(il.options.holdout_fraction >= 0.0 && il.options.holdout_fraction < 1.0))
      throw ConfigError("il: holdout_fraction must lie in [0, 1)");
    rl.validate();
    cost.validate();
    if (eval.seeds.empty()) throw ConfigError("eval: at least one seed is required");
    if (!(eval.success_threshold > 0.0 && eval.success_threshold <= 1.0))
      throw ConfigError("eval: success_threshold must lie in (0, 1]");
    if (!(eval.threshold > 0.0 && eval.threshold < 1.0)) throw ConfigError("eval: threshold must lie in (0, 1)");
    for (double p : eval.random_grid)
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("eval: random_grid entries must lie in [0, 1]");
    for (double p : eval.threshold_grid)
      if (!(p > 0.0 && p < 1.0)) throw ConfigError("eval: threshold_grid entries must lie in (0, 1)");
    for (double h : eval.entropy_grid)
      if (!(h >= 0.0)) throw ConfigError("eval: entropy_grid entries must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Derived seeds. Everything random in a run hangs off Config::seed.

enum class SeedPurpose : std::uint64_t {
  kTemplates = 101,
  kTrainTasks = 102,
  kEvalTasks = 103,
  kDiffRollouts = 104,
  kReplay = 105,
  kRouterInit = 106,
  kILTrain = 107,
  kRL = 108,
  kEval = 109,
  kAnalysis = 110,
};

inline std::uint64_t derive_seed(const Config& c, SeedPurpose p, std::uint64_t extra = 0) {
  return hash_path(c.seed, {static_cast<std::uint64_t>(p), extra});
}

inline EnvConfig effective_env(const Config& c) {
  EnvConfig e = c.env;
  e.seed = derive_seed(c, SeedPurpose::kTemplates);
  return e;
}

inline std::vector<std::uint64_t> eval_stream_seeds(const Config& c) {
  std::vector<std::uint64_t> out;
  for (auto s : c.eval.seeds) out.push_back(derive_seed(c, SeedPurpose::kEval, s));
  return out;
}

// ---------------------------------------------------------------------------
// JSON mapping.

namespace detail {

class SectionReader {
 public:
  SectionReader(const Json& j, std::string path, std::vector<std::string>& unknown)
      : j_(j), path_(std::move(path)), unknown_(unknown) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  ~SectionReader() = default;

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const Json* section(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) unknown_.push_back(child(it.key().c_str()));
  }

 private:
  const Json& j_;
  std::string path_;
  std::vector<std::string>& unknown_;
  std::set<std::string> used_;
};

inline void read_length(SectionReader& r, const char* key, LengthRange& out) {
  std::vector<int> v{out.min, out.max};
  r.get(key, v);
  if (v.size() != 2) throw ConfigError(r.child(key) + ": expected [min, max]");
  out = {v[0], v[1]};
}

inline void read_policy(const Json& j, const std::string& path, ScriptedPolicy& p, std::vector<std::string>& unknown) {
  SectionReader r(j, path, unknown);
  r.get("p_routine_correct", p.p_routine_correct);
  r.get("p_critical_correct", p.p_critical_correct);
  r.get("spread", p.spread);
  r.get("p_alternate", p.p_alternate);
  r.finish();
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adamw") return OptimizerKind::kAdamW;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("optimizer must be 'adamw' or 'sgd', got '" + s + "'");
}

inline Json policy_json(const ScriptedPolicy& p) {
  return Json{{"p_routine_correct", p.p_routine_correct},
              {"p_critical_correct", p.p_critical_correct},
              {"spread", p.spread},
              {"p_alternate", p.p_alternate}};
}

}  // namespace detail

inline Config config_from_json(const Json& j) {
  Config c;
  std::vector<std::string> unknown;
  detail::SectionReader root(j, "", unknown);
  root.get("seed", c.seed);
  root.get("jobs", c.jobs);

  if (const Json* s = root.section("env")) {
    detail::SectionReader r(*s, "env", unknown);
    r.get("horizon", c.env.horizon);
    r.get("action_count", c.env.action_count);
    r.get("critical_steps", c.env.critical_steps);
    r.get("critical_count", c.env.critical_count);
    r.get("families", c.env.families);
    r.get("flexible_count", c.env.flexible_count);
    r.get("marker_observability", c.env.marker_observability);
    r.get("partial_credit", c.env.partial_credit);
    detail::read_length(r, "routine_length", c.env.routine_length);
    detail::read_length(r, "critical_length", c.env.critical_length);
    r.get("train_tasks", c.train_tasks);
    r.get("eval_tasks", c.eval_tasks);
    r.finish();
  }
  if (const Json* s = root.section("policies")) {
    detail::SectionReader r(*s, "policies", unknown);
    if (const Json* d = r.section("device")) detail::read_policy(*d, "policies.device", c.device, unknown);
    if (const Json* d = r.section("cloud")) detail::read_policy(*d, "policies.cloud", c.cloud, unknown);
    r.finish();
  }
  if (const Json* s = root.section("router")) {
    detail::SectionReader r(*s, "router", unknown);
    std::string arch = c.router.kind == ArchKind::kLinear ? "linear" : "mlp";
    std::string act = c.router.activation == Activation::kTanh ? "tanh" : "relu";
    r.get("architecture", arch);
    r.get("hidden", c.router.hidden);
    r.get("activation", act);
    r.finish();
    if (arch == "linear") {
      c.router.kind = ArchKind::kLinear;
    } else if (arch == "mlp") {
      c.router.kind = ArchKind::kMlp;
    } else {
      throw ConfigError("router.architecture must be 'linear' or 'mlp'");
    }
    if (act == "tanh") {
      c.router.activation = Activation::kTanh;
    } else if (act == "relu") {
      c.router.activation = Activation::kRelu;
    } else {
      throw ConfigError("router.activation must be 'tanh' or 'relu'");
    }
  }
  if (const Json* s = root.section("il")) {
    detail::SectionReader r(*s, "il", unknown);
    auto& t = c.il.options.train;
    std::string opt = t.optimizer == OptimizerKind::kAdamW ? "adamw" : "sgd";
    std::string replay(to_string(c.il.replay_sampling));
    r.get("delta", c.il.delta);
    r.get("rollouts_per_task", c.il.rollouts_per_task);
    r.get("lr", t.lr);
    r.get("batch", t.batch);
    r.get("iterations", t.iterations);
    r.get("weight_decay", t.weight_decay);
    r.get("optimizer", opt);
    r.get("positive_weight", t.positive_weight);
    r.get("holdout_fraction", c.il.options.holdout_fraction);
    r.get("eval_every", c.il.options.eval_every);
    r.get("replay_sampling", replay);
    r.get("dedupe", c.il.dedupe);
    r.finish();
    t.optimizer = detail::parse_optimizer(opt);
    c.il.replay_sampling = parse_replay_sampling(replay);
  }
  if (const Json* s = root.section("rl")) {
    detail::SectionReader r(*s, "rl", unknown);
    auto& t = c.rl.train;
    std::string opt = t.optimizer == OptimizerKind::kAdamW ? "adamw" : "sgd";
    r.get("N", c.rl.n);
    r.get("gamma", c.rl.gamma);
    r.get("epsilon", c.rl.epsilon);
    r.get("beta", c.rl.beta);
    r.get("lr", t.lr);
    r.get("batch", t.batch);
    r.get("iterations", c.rl.iterations);
    r.get("steps_per_iteration", t.iterations);
    r.get("weight_decay", t.weight_decay);
    r.get("optimizer", opt);
    r.get("positive_weight", t.positive_weight);
    r.finish();
    t.optimizer = detail::parse_optimizer(opt);
  }
  if (const Json* s = root.section("cost_model")) {
    detail::SectionReader r(*s, "cost_model", unknown);
    r.get("cloud_cost_per_call", c.cost.cloud_cost_per_call);
    r.get("device_latency_per_step", c.cost.device_latency_per_step);
    r.get("cloud_latency_per_step", c.cost.cloud_latency_per_step);
    r.get("router_latency_per_step", c.cost.router_latency_per_step);
    r.finish();
  }
  if (const Json* s = root.section("eval")) {
    detail::SectionReader r(*s, "eval", unknown);
    std::string routing = c.eval.sampling ? "sample" : "greedy";
    r.get("seeds", c.eval.seeds);
    r.get("success_threshold", c.eval.success_threshold);
    r.get("routing", routing);
    r.get("threshold", c.eval.threshold);
    r.get("random_grid", c.eval.random_grid);
    r.get("threshold_grid", c.eval.threshold_grid);
    r.get("entropy_grid", c.eval.entropy_grid);
    r.finish();
    if (routing != "greedy" && routing != "sample") throw ConfigError("eval.routing must be 'greedy' or 'sample'");
    c.eval.sampling = routing == "sample";
  }
  root.finish();
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  c.validate();
  return c;
}

// Effective configuration with every default materialized.
inline Json config_to_json(const Config& c) {
  Json j;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["env"] = Json{{"horizon", c.env.horizon},
                  {"action_count", c.env.action_count},
                  {"critical_steps", c.env.critical_steps},
                  {"critical_count", c.env.critical_count},
                  {"families", c.env.families},
                  {"flexible_count", c.env.flexible_count},
                  {"marker_observability", c.env.marker_observability},
                  {"partial_credit", c.env.partial_credit},
                  {"routine_length", {c.env.routine_length.min, c.env.routine_length.max}},
                  {"critical_length", {c.env.critical_length.min, c.env.critical_length.max}},
                  {"train_tasks", c.train_tasks},
                  {"eval_tasks", c.eval_tasks}};
  j["policies"] = Json{{"device", detail::policy_json(c.device)}, {"cloud", detail::policy_json(c.cloud)}};
  j["router"] = Json{{"architecture", c.router.kind == ArchKind::kLinear ? "linear" : "mlp"},
                     {"hidden", c.router.hidden},
                     {"activation", c.router.activation == Activation::kTanh ? "tanh" : "relu"}};
  const auto& it = c.il.options.train;
  j["il"] = Json{{"delta", c.il.delta},
                 {"rollouts_per_task", c.il.rollouts_per_task},
                 {"lr", it.lr},
                 {"batch", it.batch},
                 {"iterations", it.iterations},
                 {"weight_decay", it.weight_decay},
                 {"optimizer", it.optimizer == OptimizerKind::kAdamW ? "adamw" : "sgd"},
                 {"positive_weight", it.positive_weight},
                 {"holdout_fraction", c.il.options.holdout_fraction},
                 {"eval_every", c.il.options.eval_every},
                 {"replay_sampling", std::string(to_string(c.il.replay_sampling))},
                 {"dedupe", c.il.dedupe}};
  const auto& rt = c.rl.train;
  j["rl"] = Json{{"N", c.rl.n},
                 {"gamma", c.rl.gamma},
                 {"epsilon", c.rl.epsilon},
                 {"beta", c.rl.beta},
                 {"lr", rt.lr},
                 {"batch", rt.batch},
                 {"iterations", c.rl.iterations},
                 {"steps_per_iteration", rt.iterations},
                 {"weight_decay", rt.weight_decay},
                 {"optimizer", rt.optimizer == OptimizerKind::kAdamW ? "adamw" : "sgd"},
                 {"positive_weight", rt.positive_weight}};
  j["cost_model"] = Json{{"cloud_cost_per_call", c.cost.cloud_cost_per_call},
                         {"device_latency_per_step", c.cost.device_latency_per_step},
                         {"cloud_latency_per_step", c.cost.cloud_latency_per_step},
                         {"router_latency_per_step", c.cost.router_latency_per_step}};
  j["eval"] = Json{{"seeds", c.eval.seeds},
                   {"success_threshold", c.eval.success_threshold},
                   {"routing", c.eval.sampling ? "sample" : "greedy"},
                   {"threshold", c.eval.threshold},
                   {"random_grid", c.eval.random_grid},
                   {"threshold_grid", c.eval.threshold_grid},
                   {"entropy_grid", c.eval.entropy_grid}};
  return j;
}

}  // namespace hera
