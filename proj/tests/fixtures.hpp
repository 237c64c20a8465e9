#pragma once

#include <filesystem>

#include "hera/pipeline.hpp"

namespace hera::testing {

// Trajectory with the given decisions and return; other fields are filler.
inline Trajectory make_trajectory(const std::string& task_id, const std::vector<int>& decisions, double ret,
                                  const std::vector<int>& progress = {}) {
  Trajectory tr;
  tr.trajectory_id = task_id + "/fixture/0";
  tr.task_id = task_id;
  tr.mode = "fixture";
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    StepRecord s;
    s.t = static_cast<int>(i) + 1;
    const int p = progress.empty() ? static_cast<int>(i) : progress[i];
    s.canonical_key = task_id + "/p" + std::to_string(p);
    s.features = {static_cast<double>(p)};
    s.decision = decisions[i];
    s.route_prob = decisions[i];
    tr.steps.push_back(s);
    tr.cloud_calls += decisions[i];
  }
  tr.ret = ret;
  tr.status = ret >= 1.0 ? TerminalStatus::kSuccess : TerminalStatus::kFailure;
  return tr;
}

inline LabeledStep make_example(std::vector<double> features, int label, const std::string& task = "t") {
  LabeledStep s;
  s.task_id = task;
  s.canonical_key = task + "/p0";
  s.features = std::move(features);
  s.label = label;
  s.source = "fixture";
  return s;
}

inline std::vector<LabeledStep> random_batch(Rng& rng, int n, int dim) {
  std::vector<LabeledStep> out;
  for (int i = 0; i < n; ++i) {
    std::vector<double> x(static_cast<std::size_t>(dim));
    for (auto& v : x) v = rng.uniform(-1.5, 1.5);
    out.push_back(make_example(std::move(x), static_cast<int>(rng.below(2))));
  }
  return out;
}

inline RouterParams random_params(const Architecture& arch, Rng& rng, double scale = 1.0) {
  RouterParams p;
  p.arch = arch;
  p.values.resize(arch.param_count());
  for (auto& v : p.values) v = rng.uniform(-scale, scale);
  return p;
}

// Central finite differences of `loss` at `params`.
template <typename LossFn>
std::vector<double> numeric_gradient(const RouterParams& params, LossFn&& loss, double h = 1e-6) {
  std::vector<double> g(params.values.size());
  RouterParams p = params;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double orig = p.values[i];
    p.values[i] = orig + h;
    const double up = loss(p);
    p.values[i] = orig - h;
    const double down = loss(p);
    p.values[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += std::max(a[i] * a[i], b[i] * b[i]);
  }
  return den == 0 ? std::sqrt(num) : std::sqrt(num / den);
}

class TempDir {
 public:
  TempDir() {
    auto base = std::filesystem::temp_directory_path() / "hera-test";
    std::filesystem::create_directories(base);
    path_ = base / (std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

inline std::filesystem::path source_dir() { return HERA_SOURCE_DIR; }

}  // namespace hera::testing
