#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "himem/errors.hpp"
#include "himem/tensor.hpp"

namespace himem {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

template <typename P>
NamedParams collect_params(P& params) {
  NamedParams out;
  params.for_each_param(
      [&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

inline void zero_grads(NamedParams& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

// Linear ramp from zero to the peak over warmup_steps, constant after.
struct Schedule {
  double peak = 7e-5;
  std::size_t warmup_steps = 0;
};

inline double lr_at(std::size_t step, const Schedule& schedule) {
  if (schedule.warmup_steps == 0 || step >= schedule.warmup_steps) {
    return schedule.peak;
  }
  return schedule.peak * static_cast<double>(step) /
         static_cast<double>(schedule.warmup_steps);
}

struct OptimState {
  struct Moments {
    std::vector<double> m, v;
  };

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  std::size_t step = 0;
  std::map<std::string, Moments> moments;
};

// Decoupled weight decay applied before the bias-corrected Adam update, so
// decay never leaks into the moment estimates.
inline void adamw_step(NamedParams& params, OptimState& state, double lr) {
  ++state.step;
  const double bc1 =
      1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 =
      1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  for (auto& [name, tensor] : params) {
    auto& mom = state.moments[name];
    const std::size_t n = tensor.numel();
    if (mom.m.empty()) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    } else if (mom.m.size() != n) {
      throw ShapeError("optimizer state for '" + name + "' holds " +
                       std::to_string(mom.m.size()) + " moments, param has " +
                       std::to_string(n));
    }

    auto& p = tensor.data();
    const auto& g = tensor.grad();
    for (std::size_t i = 0; i < n; ++i) {
      p[i] -= lr * state.weight_decay * p[i];
      mom.m[i] = state.beta1 * mom.m[i] + (1.0 - state.beta1) * g[i];
      mom.v[i] = state.beta2 * mom.v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

}  // namespace himem
