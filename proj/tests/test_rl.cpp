#include <gtest/gtest.h>

#include <map>

#include "fixtures.hpp"

using namespace hera;
using namespace hera::testing;

namespace {

const ScriptedPolicy kDevice{Tier::kDevice, 0.95, 0.2, 1.0, 0.0};
const ScriptedPolicy kCloud{Tier::kCloud, 0.98, 0.98, 1.0, 0.0};

// (trajectory, t, decision, return, future cloud) tuples keyed by state,
// built by a plain nested scan.
std::map<std::string, std::vector<std::tuple<int, int, int, double, int>>> brute_groups(
    const std::vector<Trajectory>& trs) {
  std::map<std::string, std::vector<std::tuple<int, int, int, double, int>>> out;
  for (std::size_t i = 0; i < trs.size(); ++i) {
    for (std::size_t t = 0; t < trs[i].steps.size(); ++t) {
      int future = 0;
      for (std::size_t u = t; u < trs[i].steps.size(); ++u) future += trs[i].steps[u].decision;
      const auto& s = trs[i].steps[t];
      out[s.canonical_key].emplace_back(static_cast<int>(i), s.t, s.decision, trs[i].ret, future);
    }
  }
  return out;
}

GroupStats stats(std::optional<double> r0, std::optional<double> r1, std::optional<double> c0,
                 std::optional<double> c1) {
  GroupStats g;
  g.r_hat[0] = r0;
  g.r_hat[1] = r1;
  g.c_hat[0] = c0;
  g.c_hat[1] = c1;
  return g;
}

}  // namespace

TEST(GroupIndex, IdenticalTrajectoriesShareGroups) {
  const auto a = make_trajectory("x", {1, 0, 0, 1, 0}, 1.0);
  const auto idx = build_group_index({a, a}, "x");
  ASSERT_EQ(idx.size(), 5u);
  for (const auto& [k, g] : idx) EXPECT_EQ(g.occurrences.size(), 2u);
  for (const auto& [k, g] : build_group_index({a}, "x")) EXPECT_EQ(g.occurrences.size(), 1u);
}

TEST(GroupIndex, RejectsMixedTasks) {
  EXPECT_THROW(build_group_index({make_trajectory("x", {1}, 1.0), make_trajectory("y", {1}, 1.0)}, "x"), UsageError);
}

TEST(GroupIndex, MatchesBruteForceScan) {
  EnvConfig c;
  c.horizon = 10;
  c.action_count = 4;
  c.critical_count = 3;
  for (const auto& task : make_task_set(c, 10, 3)) {
    const auto trs = collect_group(task, 8, kDevice, kCloud, RandomRoute{0.4}, 5);
    const auto idx = build_group_index(trs, task.task_id);
    const auto oracle = brute_groups(trs);
    ASSERT_EQ(idx.size(), oracle.size());
    for (const auto& [key, occ] : oracle) {
      const auto it = idx.find(key);
      ASSERT_NE(it, idx.end());
      std::vector<std::tuple<int, int, int, double, int>> got;
      for (const auto& o : it->second.occurrences) got.emplace_back(o.trajectory, o.t, o.decision, o.ret, o.future_cloud);
      auto want = occ;
      std::sort(got.begin(), got.end());
      std::sort(want.begin(), want.end());
      EXPECT_EQ(got, want);
    }
  }
}

TEST(GroupEstimates, SingleSampleMeans) {
  const auto g = group_estimates({{0, 1, 1, 1.0, 3}, {1, 1, 0, 0.0, 0}});
  EXPECT_EQ(*g.r_hat[1], 1.0);
  EXPECT_EQ(*g.r_hat[0], 0.0);
  EXPECT_EQ(*g.c_hat[1], 3.0);
  EXPECT_EQ(*g.c_hat[0], 0.0);
}

TEST(GroupEstimates, ArithmeticMean) {
  const auto g = group_estimates({{0, 1, 1, 1.0, 2}, {1, 1, 1, 0.0, 1}, {2, 1, 0, 1.0, 0}});
  EXPECT_EQ(*g.r_hat[1], 0.5);
  EXPECT_EQ(*g.r_hat[0], 1.0);
  EXPECT_EQ(g.n[1], 2);
  EXPECT_EQ(g.n[0], 1);
}

TEST(GroupEstimates, MissingArmStaysUndefined) {
  const auto g = group_estimates({{0, 1, 1, 1.0, 2}});
  EXPECT_FALSE(g.r_hat[0].has_value());
  EXPECT_FALSE(g.c_hat[0].has_value());
  EXPECT_THROW(group_estimates({}), UsageError);
  EXPECT_THROW(group_estimates({{0, 1, 2, 1.0, 0}}), UsageError);
}

TEST(GroupEstimates, MatchesReverseOrderAccumulation) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Occurrence> occ;
    const int n = 1 + static_cast<int>(rng.below(30));
    for (int i = 0; i < n; ++i)
      occ.push_back({i, 1, static_cast<int>(rng.below(2)), static_cast<double>(rng.below(5)) / 4.0,
                     static_cast<int>(rng.below(12))});
    const auto g = group_estimates(occ);
    for (int d = 0; d < 2; ++d) {
      double r = 0, c = 0;
      int k = 0;
      for (auto it = occ.rbegin(); it != occ.rend(); ++it) {
        if (it->decision != d) continue;
        r += it->ret;
        c += it->future_cloud;
        ++k;
      }
      ASSERT_EQ(g.n[d], k);
      if (k == 0) {
        EXPECT_FALSE(g.r_hat[d].has_value());
      } else {
        EXPECT_NEAR(*g.r_hat[d], r / k, 1e-12);
        EXPECT_NEAR(*g.c_hat[d], c / k, 1e-12);
      }
    }
  }
}

TEST(PreferenceLabel, Cases) {
  auto a = stats(0.7, 0.9, 1.0, 3.0);
  EXPECT_EQ(*preference_label(a, 0.05).label, 1);
  auto b = stats(0.9, 0.7, 3.0, 1.0);
  EXPECT_EQ(*preference_label(b, 0.05).label, 0);
  auto c = stats(1.0, 1.0, 2.0, 5.0);
  EXPECT_EQ(*preference_label(c, 0.05).label, 0);
  auto d = stats(1.0, 1.0, 2.0, 2.0);
  EXPECT_EQ(*preference_label(d, 0.05).label, 0);
  auto e = stats(1.0, 1.0, 4.0, 2.0);
  EXPECT_EQ(*preference_label(e, 0.05).label, 1);
}

TEST(PreferenceLabel, WithinMarginFallsBackToCost) {
  auto g = stats(0.7, 0.74, 1.0, 3.0);
  EXPECT_EQ(*preference_label(g, 0.05).label, 0);
  EXPECT_EQ(*preference_label(g, 0.01).label, 1);
}

TEST(PreferenceLabel, SkipsUndefinedArms) {
  auto g = stats(std::nullopt, 1.0, std::nullopt, 2.0);
  preference_label(g, 0.05);
  EXPECT_FALSE(g.label.has_value());
  EXPECT_EQ(g.skip, SkipReason::kArm0Undefined);
  auto h = stats(1.0, std::nullopt, 0.0, std::nullopt);
  preference_label(h, 0.05);
  EXPECT_EQ(h.skip, SkipReason::kArm1Undefined);
  EXPECT_THROW(preference_label(h, 0.0), ConfigError);
}

TEST(BuildRLDataset, AllDeviceRolloutsAreSkipped) {
  const auto task = make_task("x", 8, 4, {3}, 1.0, 2);
  const auto trs = collect_group(task, 8, kDevice, kCloud, RandomRoute{0.0}, 3);
  const auto rep = label_groups({trs}, 0.05);
  EXPECT_EQ(rep.labeled, 0);
  EXPECT_EQ(rep.skipped_arm0, 0);
  EXPECT_GT(rep.skipped_arm1, 0);
  EXPECT_THROW(build_rl_dataset({trs}, 0.05), TrainingError);
}

TEST(BuildRLDataset, HandBuiltFixture) {
  // p0: cloud arm {R=1,C=2},{R=1,C=2}; device arm {R=0,C=1}  -> 1
  // p1: device arm {R=1,C=1},{R=0,C=1}; cloud arm {R=1,C=1}  -> 1
  // p2: cloud only                                          -> skipped
  const auto t0 = make_trajectory("x", {1, 0, 1}, 1.0);
  const auto t1 = make_trajectory("x", {0, 0, 1}, 0.0);
  const auto t2 = make_trajectory("x", {1, 1}, 1.0);
  auto rep = build_rl_dataset({{t0, t1, t2}}, 0.05);
  ASSERT_EQ(rep.dataset.size(), 2u);
  EXPECT_EQ(rep.dataset[0].canonical_key, "x/p0");
  EXPECT_EQ(rep.dataset[0].label, 1);
  EXPECT_EQ(rep.dataset[1].canonical_key, "x/p1");
  EXPECT_EQ(rep.dataset[1].label, 1);
  EXPECT_EQ(rep.dataset[1].features, std::vector<double>{1.0});
  EXPECT_EQ(rep.dataset[1].stage, Stage::kRL);
  EXPECT_EQ(rep.skipped_arm0, 1);

  // Same visits with every return equal to 1: both labeled groups become
  // return ties. p0 has C(0)=1 < C(1)=2 -> 0; p1 ties on cost -> 0.
  const auto u1 = make_trajectory("x", {0, 0, 1}, 1.0);
  rep = build_rl_dataset({{t0, u1, t2}}, 0.05);
  ASSERT_EQ(rep.dataset.size(), 2u);
  EXPECT_EQ(rep.dataset[0].label, 0);
  EXPECT_EQ(rep.dataset[1].label, 0);
}

TEST(BuildRLDataset, LargeEpsilonPicksCheaperArm) {
  EnvConfig c;
  c.horizon = 10;
  c.action_count = 4;
  const auto tasks = make_task_set(c, 20, 4);
  std::vector<std::vector<Trajectory>> per;
  for (const auto& t : tasks) per.push_back(collect_group(t, 8, kDevice, kCloud, RandomRoute{0.5}, 6));
  const auto rep = build_rl_dataset(per, 10.0);
  ASSERT_GT(rep.labeled, 0);
  for (const auto& g : rep.groups) {
    if (!g.label) continue;
    EXPECT_EQ(*g.label, *g.c_hat[1] < *g.c_hat[0] ? 1 : 0);
  }
}

TEST(TrainRL, HugeBetaPinsToAnchor) {
  Rng rng(3);
  auto ds = random_batch(rng, 300, 6);
  const Architecture arch{ArchKind::kMlp, 6, 8, Activation::kTanh};
  const RouterParams start = random_params(arch, rng, 0.5);
  const AnchorParams anchor(start);
  RouterParams p = start;
  RLConfig cfg;
  auto opt = make_optimizer(p, cfg.train.lr, cfg.train.weight_decay);
  train_rl(ds, p, opt, anchor, 1e6, cfg.train, Rng(4));
  EXPECT_LE(l2_distance(p.values, anchor.values()), 1e-3);
}

TEST(TrainRL, ZeroBetaEqualsPlainBce) {
  Rng rng(5);
  auto ds = random_batch(rng, 100, 4);
  const Architecture arch{ArchKind::kMlp, 4, 5, Activation::kTanh};
  const RouterParams start = random_params(arch, rng, 0.5);
  TrainOptions o;
  o.lr = 1e-3;
  o.batch = 16;
  o.iterations = 50;

  RouterParams a = start;
  auto opt_a = make_optimizer(a, o.lr, o.weight_decay);
  train_rl(ds, a, opt_a, AnchorParams(random_params(arch, rng, 1.0)), 0.0, o, Rng(9));

  RouterParams b = start;
  auto opt_b = make_optimizer(b, o.lr, o.weight_decay);
  BatchSampler sampler(ds, o.batch, Rng(9));
  for (int i = 0; i < o.iterations; ++i) {
    const auto lg = bce_loss_and_grad(b, sampler.next(), {});
    optimizer_step(b, opt_b, lg.grad);
  }
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(opt_a, opt_b);
}

TEST(TrainRL, DeterministicAndValidated) {
  Rng rng(6);
  auto ds = random_batch(rng, 50, 3);
  const Architecture arch{ArchKind::kLinear, 3, 0, Activation::kTanh};
  const RouterParams start = random_params(arch, rng, 0.5);
  TrainOptions o;
  o.lr = 1e-2;
  o.batch = 8;
  o.iterations = 30;
  RouterParams a = start, b = start;
  auto oa = make_optimizer(a, o.lr, o.weight_decay), ob = oa;
  train_rl(ds, a, oa, AnchorParams(start), 0.1, o, Rng(1));
  train_rl(ds, b, ob, AnchorParams(start), 0.1, o, Rng(1));
  EXPECT_EQ(a.values, b.values);
  EXPECT_THROW(train_rl({}, a, oa, AnchorParams(start), 0.1, o, Rng(1)), TrainingError);
  const RouterParams other = random_params(Architecture{ArchKind::kLinear, 4, 0, Activation::kTanh}, rng);
  EXPECT_THROW(train_rl(ds, a, oa, AnchorParams(other), 0.1, o, Rng(1)), UsageError);
}

TEST(RLIteration, SingleTaskGroupOfEight) {
  const auto task = make_task("solo", 10, 4, {3, 7}, 0.9, 4);
  RouterParams p = init_params(Architecture{ArchKind::kLinear, task.feature_size(), 0, Activation::kTanh}, 2);
  const RouterParams before = p;
  auto opt = make_optimizer(p, 1e-3, 0.01);
  RLConfig cfg;
  cfg.train.iterations = 5;
  std::vector<LabeledStep> labels;
  const auto rep = rl_iteration({task}, p, opt, AnchorParams(before), cfg, kDevice, kCloud, 1, 77, 1, &labels);
  EXPECT_EQ(rep.trajectories, 8);
  EXPECT_FALSE(labels.empty());
  EXPECT_EQ(rep.labeled_groups, static_cast<int>(labels.size()));

  // Recompute the aggregates from an independent collection with the same
  // stream derivation and the pre-update parameters.
  const auto trs = collect_group(task, 8, kDevice, kCloud, RouterRoute{&before, cfg.gamma, true, 0.5},
                                 hash_path(77, {1}), "rl1");
  double calls = 0, ret = 0;
  for (const auto& t : trs) {
    calls += t.cloud_calls;
    ret += t.ret;
  }
  EXPECT_DOUBLE_EQ(rep.mean_cloud_calls, calls / 8);
  EXPECT_DOUBLE_EQ(rep.mean_return, ret / 8);
  EXPECT_NE(p.values, before.values);
  EXPECT_EQ(opt.step, 5u);
}

TEST(RLIteration, HighTemperatureFlattensRouting) {
  const auto task = make_task("solo", 10, 4, {3, 7}, 0.9, 4);
  Rng rng(1);
  const RouterParams p = random_params(Architecture{ArchKind::kLinear, task.feature_size(), 0, Activation::kTanh}, rng, 3.0);
  const auto tr = run_episode(task, kDevice, kCloud, RouterRoute{&p, 1e6, true, 0.5}, 3);
  for (const auto& s : tr.steps) EXPECT_NEAR(s.route_prob, 0.5, 1e-4);
}

// Reference config, 15 iterations, 3 seeds: compare the mean of the first
// three iterations with the mean of the last three.
TEST(RLIteration, ReferenceTrendFirstVsLastWindow) {
  const Config base = load_config(source_dir() / "configs" / "reference.json");
  for (std::uint64_t seed : {7u, 11u, 13u}) {
    Config c = base;
    c.seed = seed;
    const Workspace ws = make_workspace(c);
    const auto il = stage_il(ws, stage_rollout(ws));
    const auto rl = stage_rl(ws, il.result.params, il.result.anchor);
    ASSERT_EQ(rl.iterations.size(), 15u);
    auto window = [&](std::size_t from, auto field) {
      double s = 0;
      for (std::size_t i = from; i < from + 3; ++i) s += rl.iterations[i].*field;
      return s / 3;
    };
    const double calls_first = window(0, &IterationReport::mean_cloud_calls);
    const double calls_last = window(12, &IterationReport::mean_cloud_calls);
    const double succ_first = window(0, &IterationReport::mean_success);
    const double succ_last = window(12, &IterationReport::mean_success);
    EXPECT_LE(calls_last, calls_first) << "seed " << seed;
    EXPECT_GE(succ_last, succ_first) << "seed " << seed;
  }
}
