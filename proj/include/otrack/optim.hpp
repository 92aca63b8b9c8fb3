#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "otrack/tensor.hpp"

namespace otrack {

// 1cycle policy: cosine ramp lr_max/div -> lr_max over the warmup span,
// cosine anneal down to lr_max/final_div by the last step.
struct OneCycle {
  double lr_max = 0.005;
  double warmup_frac = 0.3;
  double div = 25.0;
  double final_div = 1e4;
};

inline double lr_at(int64_t step, int64_t total_steps, const OneCycle& cfg) {
  if (total_steps < 1) throw NumericError("lr_at: total_steps must be >= 1");
  if (step < 0 || step > total_steps) throw NumericError("lr_at: step out of range");
  const double start = cfg.lr_max / cfg.div;
  const double finish = cfg.lr_max / cfg.final_div;
  const int64_t warmup = static_cast<int64_t>(std::llround(cfg.warmup_frac * total_steps));
  constexpr double kPi = 3.14159265358979323846;
  if (step <= warmup && warmup > 0) {
    const double u = static_cast<double>(step) / static_cast<double>(warmup);
    return start + (cfg.lr_max - start) * 0.5 * (1.0 - std::cos(kPi * u));
  }
  if (total_steps == warmup) return cfg.lr_max;
  const double u = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return finish + (cfg.lr_max - finish) * 0.5 * (1.0 + std::cos(kPi * u));
}

template <typename S>
double grad_norm(const ParamStore<S>& params) {
  double acc = 0.0;
  for (const auto& name : params.names()) {
    auto g = params.get(name).grad();
    for (const S v : g) acc += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(acc);
}

template <typename S>
double clip_grad_norm(ParamStore<S>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const S scale = static_cast<S>(max_norm / norm);
    for (const auto& name : params.names()) {
      auto g = params.get(name).grad_accum();
      for (auto& v : g) v *= scale;
    }
  }
  return norm;
}

// AdamW: bias-corrected adaptive moments with decoupled weight decay
// (decay multiplies the weights directly, never the gradients).
template <typename S>
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  // refuses the step (state untouched) if any gradient is non-finite
  void step(ParamStore<S>& params, double lr) {
    for (const auto& name : params.names()) {
      auto g = params.get(name).grad();
      if (g.size() != static_cast<size_t>(params.get(name).size()))
        throw NumericError("optimizer_step: missing gradient for '" + name + "'");
      for (const S v : g)
        if (!std::isfinite(static_cast<double>(v)))
          throw NumericError("optimizer_step: non-finite gradient in '" + name +
                             "', step refused");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& name : params.names()) {
      auto& p = params.get(name);
      auto g = p.grad();
      auto& mom = moments_[name];
      if (mom.m.empty()) {
        mom.m.assign(static_cast<size_t>(p.size()), S(0));
        mom.v.assign(static_cast<size_t>(p.size()), S(0));
      }
      auto w = p.raw();
      for (size_t i = 0; i < w.size(); ++i) {
        if (weight_decay_ != 0.0) w[i] -= static_cast<S>(lr * weight_decay_) * w[i];
        mom.m[i] = static_cast<S>(beta1_) * mom.m[i] + static_cast<S>(1.0 - beta1_) * g[i];
        mom.v[i] = static_cast<S>(beta2_) * mom.v[i] + static_cast<S>(1.0 - beta2_) * g[i] * g[i];
        const double mhat = static_cast<double>(mom.m[i]) / bc1;
        const double vhat = static_cast<double>(mom.v[i]) / bc2;
        w[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  double weight_decay() const { return weight_decay_; }

  struct Moments {
    std::vector<S> m, v;
  };
  Moments& moments(const std::string& name) { return moments_[name]; }
  const std::unordered_map<std::string, Moments>& all_moments() const { return moments_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

}  // namespace otrack
