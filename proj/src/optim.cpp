#include "magsplat/optim.hpp"

#include <algorithm>
#include <cmath>

#include "magsplat/common.hpp"

namespace magsplat {

void AdamState::reset(size_t n) {
  m.assign(n, 0.0);
  v.assign(n, 0.0);
  step = 0;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw Error(ErrorKind::LengthMismatch, "gradient size differs from parameters");
  if (state.m.size() != params.size()) state.reset(params.size());
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mh = state.m[i] / c1, vh = state.v[i] / c2;
    params[i] -= lr * mh / (std::sqrt(vh) + cfg.eps);
  }
}

double lr_schedule(std::int64_t step, std::int64_t total, double lr_start, double lr_end) {
  if (total <= 0) return lr_start;
  const double f = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  if (f == 1.0) return lr_end;
  return lr_start * std::pow(lr_end / lr_start, f);
}

}  // namespace magsplat
