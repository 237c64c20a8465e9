#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace hera;
using namespace hera::testing;

namespace {

const ScriptedPolicy kDevice{Tier::kDevice, 0.95, 0.2, 1.0, 0.0};
const ScriptedPolicy kCloud{Tier::kCloud, 0.98, 0.98, 1.0, 0.0};

TaskSpec task10() { return make_task("task-a", 10, 4, {3, 7}, 0.9, 17); }

void expect_consistent(const Trajectory& tr, const TaskSpec& task) {
  int calls = 0;
  State s = initial_state(task);
  for (std::size_t i = 0; i < tr.steps.size(); ++i) {
    const auto& r = tr.steps[i];
    EXPECT_EQ(r.t, static_cast<int>(i) + 1);
    EXPECT_EQ(r.canonical_key, s.canonical_key);
    EXPECT_EQ(r.features, s.features);
    calls += r.decision;
    const auto res = step(s, task, r.action);
    EXPECT_EQ(r.reward, res.reward);
    s = res.next;
  }
  EXPECT_TRUE(s.terminal);
  EXPECT_EQ(tr.cloud_calls, calls);
  EXPECT_EQ(tr.ret, episode_return(s, task));
}

}  // namespace

TEST(RunEpisode, DeviceOnlyNeverCallsCloud) {
  const auto task = task10();
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto tr = run_episode(task, kDevice, kCloud, DeviceOnly{}, 3, i);
    EXPECT_EQ(tr.cloud_calls, 0);
    for (const auto& s : tr.steps) EXPECT_EQ(s.decision, 0);
    expect_consistent(tr, task);
  }
}

TEST(RunEpisode, CloudOnlyCallsEveryStep) {
  const auto task = task10();
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto tr = run_episode(task, kDevice, kCloud, CloudOnly{}, 3, i);
    EXPECT_EQ(tr.cloud_calls, static_cast<int>(tr.steps.size()));
    expect_consistent(tr, task);
  }
}

TEST(RunEpisode, RandomHalfRoutesHalfTheSteps) {
  const auto task = task10();
  double calls = 0, steps = 0;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const auto tr = run_episode(task, kDevice, kCloud, RandomRoute{0.5}, 4, i);
    calls += tr.cloud_calls;
    steps += static_cast<double>(tr.steps.size());
  }
  EXPECT_NEAR(calls / steps, 0.5, 3 * std::sqrt(0.25 / steps));
}

TEST(RunEpisode, StatusMatchesOutcome) {
  const auto task = task10();
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto tr = run_episode(task, kDevice, kCloud, RandomRoute{0.5}, 5, i);
    if (tr.status == TerminalStatus::kSuccess) {
      EXPECT_EQ(tr.ret, 1.0);
    } else {
      EXPECT_EQ(tr.ret, 0.0);
    }
    EXPECT_LE(tr.steps.size(), 10u);
  }
}

TEST(RunEpisode, RouterModeUsesRouterProbability) {
  const auto task = task10();
  RouterParams p{Architecture{ArchKind::kLinear, task.feature_size(), 0, Activation::kTanh},
                 std::vector<double>(static_cast<std::size_t>(task.feature_size()) + 1, 0.0)};
  p.values.back() = 2.0;
  const auto greedy = run_episode(task, kDevice, kCloud, RouterRoute{&p, 1.3, false, 0.5}, 1);
  for (const auto& s : greedy.steps) {
    EXPECT_EQ(s.decision, 1);
    EXPECT_NEAR(s.route_prob, sigmoid(2.0), 1e-15);
  }
  const auto sampled = run_episode(task, kDevice, kCloud, RouterRoute{&p, 1.3, true, 0.5}, 1);
  for (const auto& s : sampled.steps) EXPECT_NEAR(s.route_prob, sigmoid(2.0 / 1.3), 1e-15);
  EXPECT_THROW(run_episode(task, kDevice, kCloud, RouterRoute{nullptr, 1.0, false, 0.5}, 1), UsageError);
  EXPECT_THROW(run_episode(task, kDevice, kCloud, RandomRoute{1.5}, 1), ConfigError);
}

TEST(RunEpisode, EntropyRouteThresholds) {
  const auto task = task10();
  const auto low = run_episode(task, kDevice, kCloud, EntropyRoute{0.0}, 1);
  EXPECT_EQ(low.cloud_calls, static_cast<int>(low.steps.size()));
  const auto high = run_episode(task, kDevice, kCloud, EntropyRoute{std::log(4.0) + 1e-9}, 1);
  EXPECT_EQ(high.cloud_calls, 0);
}

TEST(CollectGroup, SharesInitialStateAndSize) {
  const auto task = task10();
  const auto g = collect_group(task, 8, kDevice, kCloud, RandomRoute{0.5}, 9);
  ASSERT_EQ(g.size(), 8u);
  for (const auto& tr : g) EXPECT_EQ(tr.steps.front().canonical_key, g.front().steps.front().canonical_key);
  EXPECT_EQ(collect_group(task, 1, kDevice, kCloud, RandomRoute{0.5}, 9).size(), 1u);
  EXPECT_THROW(collect_group(task, 0, kDevice, kCloud, RandomRoute{0.5}, 9), ConfigError);
}

TEST(CollectGroup, ByteIdenticalForFixedSeed) {
  const auto task = task10();
  const auto a = collect_group(task, 8, kDevice, kCloud, RandomRoute{0.4}, 21);
  const auto b = collect_group(task, 8, kDevice, kCloud, RandomRoute{0.4}, 21);
  EXPECT_EQ(to_jsonl(a, trajectory_to_json), to_jsonl(b, trajectory_to_json));
  const auto c = collect_group(task, 8, kDevice, kCloud, RandomRoute{0.4}, 22);
  EXPECT_NE(to_jsonl(a, trajectory_to_json), to_jsonl(c, trajectory_to_json));
}

TEST(Replay, IdentityPolicyMatchesEverywhere) {
  const auto task = task10();
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto tr = run_episode(task, kDevice, kCloud, CloudOnly{}, 2, i);
    for (const auto& r : replay_device_on(tr, task, kCloud, ReplaySampling::kGreedy, 5)) {
      if (r.cloud_action == task.correct_action[static_cast<std::size_t>(r.subgoal - 1)]) {
        EXPECT_TRUE(r.matched);
      }
    }
  }
  // With a deterministic cloud every cloud action is the greedy one.
  const ScriptedPolicy sure{Tier::kCloud, 1.0, 1.0, 1.0, 0.0};
  const auto tr = run_episode(task, kDevice, sure, CloudOnly{}, 2, 0);
  for (const auto& r : replay_device_on(tr, task, sure, ReplaySampling::kGreedy, 5)) EXPECT_TRUE(r.matched);
}

TEST(Replay, AlwaysWrongDeviceNeverMatches) {
  const auto task = task10();
  const ScriptedPolicy sure{Tier::kCloud, 1.0, 1.0, 1.0, 0.0};
  const ScriptedPolicy wrong{Tier::kDevice, 0.0, 0.0, 0.0, 0.0};
  const auto tr = run_episode(task, kDevice, sure, CloudOnly{}, 2, 0);
  const auto rep = replay_device_on(tr, task, wrong, ReplaySampling::kSample, 5);
  ASSERT_EQ(rep.size(), tr.steps.size());
  for (const auto& r : rep) EXPECT_FALSE(r.matched);
}

TEST(Replay, EmpiricalMatchRateMatchesClosedForm) {
  // Device routine-correct 0.9 and a deterministic cloud: a replayed step
  // matches exactly when the device picks the correct action.
  EnvConfig c;
  c.horizon = 10;
  c.action_count = 4;
  c.critical_steps = {4};
  const auto tasks = make_task_set(c, 1100, 3);
  const ScriptedPolicy dev{Tier::kDevice, 0.9, 0.3, 1.0, 0.0};
  const ScriptedPolicy sure{Tier::kCloud, 1.0, 1.0, 1.0, 0.0};
  double matched = 0, n = 0, expect = 0;
  for (const auto& t : tasks) {
    const auto tr = run_episode(t, dev, sure, CloudOnly{}, 1, 0);
    for (const auto& r : replay_device_on(tr, t, dev, ReplaySampling::kSample, 8)) {
      matched += r.matched;
      expect += t.kind(r.subgoal) == StepKind::kCritical ? 0.3 : 0.9;
      ++n;
    }
  }
  ASSERT_GE(n, 10000);
  const double p = expect / n;
  EXPECT_NEAR(matched / n, p, 3 * std::sqrt(p * (1 - p) / n));
}

TEST(Replay, RejectsNonCloudTrajectories) {
  const auto task = task10();
  const auto tr = run_episode(task, kDevice, kCloud, DeviceOnly{}, 2, 0);
  EXPECT_THROW(replay_device_on(tr, task, kDevice, ReplaySampling::kSample, 1), UsageError);
}

TEST(Replay, DetectsInconsistentTrajectory) {
  const auto task = task10();
  auto tr = run_episode(task, kDevice, kCloud, CloudOnly{}, 2, 0);
  tr.steps[1].canonical_key = "bogus";
  EXPECT_THROW(replay_device_on(tr, task, kDevice, ReplaySampling::kSample, 1), DataError);
}

TEST(Account, ZeroCostModel) {
  const auto tr = make_trajectory("t", {1, 0, 1}, 1.0);
  const auto a = account(tr, CostModel{0, 0, 0, 0});
  EXPECT_EQ(a.api_cost, 0.0);
  EXPECT_EQ(a.latency, 0.0);
}

TEST(Account, CostAndLatencyArithmetic) {
  const auto tr = make_trajectory("t", {1, 1, 0, 0, 1, 0, 0, 1, 0, 0}, 1.0);
  const auto a = account(tr, CostModel{1.0, 0.5, 2.0, 0.061});
  EXPECT_DOUBLE_EQ(a.api_cost, 4.0);
  EXPECT_NEAR(a.latency, 0.61 + 6 * 0.5 + 4 * 2.0, 1e-12);
  EXPECT_THROW(account(tr, CostModel{-1.0, 0, 0, 0}), ConfigError);
}

TEST(FutureCloudCount, SuffixCounts) {
  const auto tr = make_trajectory("t", {1, 0, 1, 1}, 1.0);
  EXPECT_EQ(future_cloud_count(tr, 1), 3);
  EXPECT_EQ(future_cloud_count(tr, 4), 1);
  const auto tail = make_trajectory("t", {1, 1, 0, 0}, 1.0);
  EXPECT_EQ(future_cloud_count(tail, 3), 0);
  EXPECT_THROW(future_cloud_count(tr, 0), UsageError);
  EXPECT_THROW(future_cloud_count(tr, 5), UsageError);
}
