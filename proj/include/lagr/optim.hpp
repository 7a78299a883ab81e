#pragma once

#include "lagr/autodiff.hpp"

#include <cmath>

namespace lagr::ad {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  ParamStore<Scalar> first;
  ParamStore<Scalar> second;
  long step = 0;

  static AdamState for_params(const ParamStore<Scalar>& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
};

template <typename Scalar>
struct AdamResult {
  ParamStore<Scalar> params;
  AdamState<Scalar> state;
};

/// Bias-corrected Adam update; returns new parameters and moments.
template <typename Scalar>
AdamResult<Scalar> adam_step(ParamStore<Scalar> params, const ParamStore<Scalar>& grads, AdamState<Scalar> state,
                             double lr, const AdamConfig& cfg = {}) {
  if (!params.same_layout(grads) || !params.same_layout(state.first)) {
    throw std::invalid_argument("adam: parameter, gradient and moment layouts differ");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first.value(i);
    auto& v = state.second.value(i);
    const auto& g = grads.value(i);
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    const auto m_hat = m.array() / static_cast<Scalar>(c1);
    const auto v_hat = v.array() / static_cast<Scalar>(c2);
    params.value(i).array() -=
        static_cast<Scalar>(lr) * m_hat / (v_hat.sqrt() + static_cast<Scalar>(cfg.eps));
  }
  return {std::move(params), std::move(state)};
}

/// lr(step) = lr_start * (lr_end / lr_start)^(step / total_steps), clamped at lr_end.
inline double exponential_lr(double lr_start, double lr_end, long step, long total_steps) {
  if (total_steps <= 0) return lr_start;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return lr_start * std::pow(lr_end / lr_start, frac);
}

}  // namespace lagr::ad
