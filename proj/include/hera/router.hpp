#pragma once

// Routing classifier: a small differentiable scorer over state/task
// features, its temperature-scaled Bernoulli head, and AdamW updates.

#include <sstream>

#include "hera/common.hpp"
#include "hera/dataset.hpp"

namespace hera {

enum class ArchKind { kLinear, kMlp };
enum class Activation { kTanh, kRelu };

struct Architecture {
  ArchKind kind = ArchKind::kLinear;
  int input_size = 0;
  int hidden = 0;
  Activation activation = Activation::kTanh;

  std::size_t param_count() const {
    const auto d = static_cast<std::size_t>(input_size);
    if (kind == ArchKind::kLinear) return d + 1;
    const auto h = static_cast<std::size_t>(hidden);
    return h * d + h + h + 1;
  }

  // "linear:<in>" or "mlp:<in>:<hidden>:<tanh|relu>"
  std::string describe() const {
    std::ostringstream os;
    if (kind == ArchKind::kLinear) {
      os << "linear:" << input_size;
    } else {
      os << "mlp:" << input_size << ':' << hidden << ':' << (activation == Activation::kTanh ? "tanh" : "relu");
    }
    return os.str();
  }

  static Architecture parse(const std::string& text) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    Architecture a;
    try {
      if (parts.size() == 2 && parts[0] == "linear") {
        a.kind = ArchKind::kLinear;
        a.input_size = std::stoi(parts[1]);
      } else if (parts.size() == 4 && parts[0] == "mlp") {
        a.kind = ArchKind::kMlp;
        a.input_size = std::stoi(parts[1]);
        a.hidden = std::stoi(parts[2]);
        if (parts[3] == "tanh") {
          a.activation = Activation::kTanh;
        } else if (parts[3] == "relu") {
          a.activation = Activation::kRelu;
        } else {
          throw DataError("unknown activation");
        }
      } else {
        throw DataError("bad architecture");
      }
    } catch (const std::logic_error&) {
      throw DataError("cannot parse architecture descriptor '" + text + "'");
    }
    a.validate();
    return a;
  }

  void validate() const {
    if (input_size < 1) throw ConfigError("router: input size must be >= 1");
    if (kind == ArchKind::kMlp && hidden < 1) throw ConfigError("router: mlp hidden size must be >= 1");
  }

  bool operator==(const Architecture&) const = default;
};

struct RouterParams {
  Architecture arch;
  std::vector<double> values;
  std::uint64_t version = 0;

  bool operator==(const RouterParams&) const = default;
};

// Frozen snapshot of the router at the end of imitation learning.
class AnchorParams {
 public:
  AnchorParams() = default;
  explicit AnchorParams(RouterParams params) : params_(std::move(params)) {}
  const RouterParams& params() const { return params_; }
  std::span<const double> values() const { return params_.values; }

 private:
  RouterParams params_;
};

struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double lr = 4e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const OptimizerState&) const = default;
};

// Zero biases, weights uniform in [-0.05, 0.05].
inline RouterParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  RouterParams p;
  p.arch = arch;
  p.values.assign(arch.param_count(), 0.0);
  Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(Stream::kInit)});
  const auto d = static_cast<std::size_t>(arch.input_size);
  if (arch.kind == ArchKind::kLinear) {
    for (std::size_t i = 0; i < d; ++i) p.values[i] = rng.uniform(-0.05, 0.05);
  } else {
    const auto h = static_cast<std::size_t>(arch.hidden);
    for (std::size_t i = 0; i < h * d; ++i) p.values[i] = rng.uniform(-0.05, 0.05);
    for (std::size_t j = 0; j < h; ++j) p.values[h * d + h + j] = rng.uniform(-0.05, 0.05);
  }
  return p;
}

inline OptimizerState make_optimizer(const RouterParams& params, double lr, double weight_decay) {
  if (!(lr > 0.0)) throw ConfigError("optimizer: learning rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight decay must be >= 0");
  OptimizerState s;
  s.m.assign(params.values.size(), 0.0);
  s.v.assign(params.values.size(), 0.0);
  s.lr = lr;
  s.weight_decay = weight_decay;
  return s;
}

namespace detail {

inline double activate(Activation a, double z) { return a == Activation::kTanh ? std::tanh(z) : std::max(0.0, z); }

inline double activate_grad(Activation a, double z, double h) {
  if (a == Activation::kTanh) return 1.0 - h * h;
  return z > 0.0 ? 1.0 : 0.0;
}

inline void check_input(const RouterParams& params, std::span<const double> x) {
  if (static_cast<int>(x.size()) != params.arch.input_size)
    throw UsageError("router: feature length " + std::to_string(x.size()) + " != input size " +
                     std::to_string(params.arch.input_size));
  if (params.values.size() != params.arch.param_count())
    throw UsageError("router: parameter count does not match architecture");
}

// Adds scale * d(logit)/d(params) into grad; returns the logit.
inline double logit_with_grad(const RouterParams& params, std::span<const double> x, double scale,
                              std::span<double> grad, std::vector<double>& scratch) {
  const auto& w = params.values;
  const auto d = x.size();
  if (params.arch.kind == ArchKind::kLinear) {
    double z = w[d];
    for (std::size_t i = 0; i < d; ++i) z += w[i] * x[i];
    if (!grad.empty()) {
      for (std::size_t i = 0; i < d; ++i) grad[i] += scale * x[i];
      grad[d] += scale;
    }
    return z;
  }
  const auto h = static_cast<std::size_t>(params.arch.hidden);
  const std::size_t b1 = h * d, w2 = b1 + h, b2 = w2 + h;
  scratch.resize(2 * h);
  double out = w[b2];
  for (std::size_t j = 0; j < h; ++j) {
    double z = w[b1 + j];
    const double* row = &w[j * d];
    for (std::size_t i = 0; i < d; ++i) z += row[i] * x[i];
    const double a = activate(params.arch.activation, z);
    scratch[j] = z;
    scratch[h + j] = a;
    out += w[w2 + j] * a;
  }
  if (!grad.empty()) {
    grad[b2] += scale;
    for (std::size_t j = 0; j < h; ++j) {
      const double a = scratch[h + j];
      grad[w2 + j] += scale * a;
      const double back = scale * w[w2 + j] * activate_grad(params.arch.activation, scratch[j], a);
      if (back == 0.0) continue;
      grad[b1 + j] += back;
      double* grow = &grad[j * d];
      for (std::size_t i = 0; i < d; ++i) grow[i] += back * x[i];
    }
  }
  return out;
}

}  // namespace detail

inline double logit(const RouterParams& params, std::span<const double> features) {
  detail::check_input(params, features);
  std::vector<double> scratch;
  return detail::logit_with_grad(params, features, 0.0, {}, scratch);
}

inline double route_prob(double logit_value, double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("route_prob: temperature must be > 0");
  return clamp_prob(sigmoid(logit_value / gamma));
}

inline int sample_decision(double prob, Rng& rng) {
  if (!(prob >= 0.0 && prob <= 1.0)) throw UsageError("sample_decision: probability outside [0, 1]");
  if (prob <= 0.0) return 0;
  if (prob >= 1.0) return 1;
  return rng.uniform() < prob ? 1 : 0;
}

// prob == threshold routes to the cloud.
inline int decide_greedy(double prob, double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("decide_greedy: threshold outside (0, 1)");
  return prob >= threshold ? 1 : 0;
}

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

struct BceOptions {
  // Multiplies the y = 1 term; 1 leaves the loss unweighted.
  double positive_weight = 1.0;
};

// Mean binary cross-entropy on p = sigmoid(logit), through the fused
// log-sigmoid form.
template <typename Batch>
LossAndGrad bce_loss_and_grad(const RouterParams& params, const Batch& batch, const BceOptions& opts = {}) {
  if (std::empty(batch)) throw UsageError("bce_loss_and_grad: empty batch");
  LossAndGrad out;
  out.grad.assign(params.values.size(), 0.0);
  std::vector<double> scratch;
  const double inv_n = 1.0 / static_cast<double>(std::size(batch));
  for (const auto& ex_ref : batch) {
    const LabeledStep& ex = ex_ref;
    if (ex.label != 0 && ex.label != 1) throw UsageError("bce_loss_and_grad: label must be 0 or 1");
    detail::check_input(params, ex.features);
    const double l = detail::logit_with_grad(params, ex.features, 0.0, {}, scratch);
    double loss, dl;
    if (ex.label == 1) {
      loss = opts.positive_weight * softplus(-l);
      dl = opts.positive_weight * (sigmoid(l) - 1.0);
    } else {
      loss = softplus(l);
      dl = sigmoid(l);
    }
    out.loss += loss * inv_n;
    detail::logit_with_grad(params, ex.features, dl * inv_n, out.grad, scratch);
  }
  return out;
}

inline double anchor_penalty(const RouterParams& params, const AnchorParams& anchor) {
  double acc = 0.0;
  const auto a = anchor.values();
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    const double d = params.values[i] - a[i];
    acc += d * d;
  }
  return acc;
}

// BCE + beta * ||phi - phi_IL||^2.
template <typename Batch>
LossAndGrad anchored_loss_and_grad(const RouterParams& params, const AnchorParams& anchor, const Batch& batch,
                                   double beta, const BceOptions& opts = {}) {
  if (!(beta >= 0.0)) throw ConfigError("anchored loss: beta must be >= 0");
  if (!(anchor.params().arch == params.arch) || anchor.values().size() != params.values.size())
    throw UsageError("anchored loss: anchor shape does not match parameters");
  LossAndGrad out = bce_loss_and_grad(params, batch, opts);
  if (beta != 0.0) {
    const auto a = anchor.values();
    for (std::size_t i = 0; i < params.values.size(); ++i) {
      const double d = params.values[i] - a[i];
      out.loss += beta * d * d;
      out.grad[i] += 2.0 * beta * d;
    }
  }
  return out;
}

// AdamW: adaptive moments with decoupled weight decay.
inline void optimizer_step(RouterParams& params, OptimizerState& opt, std::span<const double> grad) {
  if (grad.size() != params.values.size() || opt.m.size() != params.values.size() ||
      opt.v.size() != params.values.size())
    throw UsageError("optimizer_step: shape mismatch");
  if (!(opt.lr > 0.0)) throw ConfigError("optimizer_step: learning rate must be > 0");
  if (!all_finite(grad)) throw TrainingError("optimizer_step: non-finite gradient");
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    double& w = params.values[i];
    w -= opt.lr * opt.weight_decay * w;
    opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * grad[i];
    opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
    const double mhat = opt.m[i] / c1;
    const double vhat = opt.v[i] / c2;
    w -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
  ++params.version;
}

}  // namespace hera
