#pragma once

// Minibatch driver shared by both training stages.

#include <functional>

#include "hera/router.hpp"

namespace hera {

enum class OptimizerKind { kAdamW, kSgd };

struct TrainOptions {
  double lr = 4e-5;
  double weight_decay = 0.01;
  int batch = 64;
  int iterations = 1000;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  double positive_weight = 1.0;

  void validate(std::string_view who) const {
    const std::string w(who);
    if (!(lr > 0.0)) throw ConfigError(w + ": lr must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError(w + ": weight_decay must be >= 0");
    if (batch < 1) throw ConfigError(w + ": batch must be >= 1");
    if (iterations < 0) throw ConfigError(w + ": iterations must be >= 0");
    if (!(positive_weight > 0.0)) throw ConfigError(w + ": positive_weight must be > 0");
  }
};

using BatchView = std::vector<std::reference_wrapper<const LabeledStep>>;

// Epoch-shuffled minibatches; a batch at least as large as the dataset is
// full-batch descent.
class BatchSampler {
 public:
  BatchSampler(const std::vector<LabeledStep>& data, int batch, Rng rng)
      : data_(data), batch_(static_cast<std::size_t>(batch)), rng_(std::move(rng)) {
    order_.resize(data_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    cursor_ = order_.size();
  }

  BatchView next() {
    BatchView out;
    if (batch_ >= data_.size()) {
      for (const auto& ex : data_) out.emplace_back(ex);
      return out;
    }
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (cursor_ == order_.size()) {
        rng_.shuffle(order_);
        cursor_ = 0;
      }
      out.emplace_back(data_[order_[cursor_++]]);
    }
    return out;
  }

 private:
  const std::vector<LabeledStep>& data_;
  std::size_t batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

inline void sgd_step(RouterParams& params, double lr, std::span<const double> grad) {
  if (!all_finite(grad)) throw TrainingError("sgd_step: non-finite gradient");
  for (std::size_t i = 0; i < grad.size(); ++i) params.values[i] -= lr * grad[i];
  ++params.version;
}

inline void apply_update(RouterParams& params, OptimizerState& opt, const TrainOptions& o, std::span<const double> grad) {
  if (o.optimizer == OptimizerKind::kSgd) {
    sgd_step(params, o.lr, grad);
  } else {
    optimizer_step(params, opt, grad);
  }
}

// Fraction of examples whose greedy decision equals the label.
template <typename Data>
double label_accuracy(const RouterParams& params, const Data& data) {
  if (std::empty(data)) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hit = 0;
  for (const auto& ex_ref : data) {
    const LabeledStep& ex = ex_ref;
    if (decide_greedy(route_prob(logit(params, ex.features), 1.0)) == ex.label) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(std::size(data));
}

inline void check_loss(double loss, std::uint64_t iteration, std::string_view stage) {
  if (!std::isfinite(loss))
    throw TrainingError(std::string(stage) + ": non-finite loss at iteration " + std::to_string(iteration) +
                        " (lower the learning rate or check feature scaling)");
}

}  // namespace hera
