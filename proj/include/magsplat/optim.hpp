#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace magsplat {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  void reset(size_t n);
};

/// One bias-corrected Adam update of params in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamConfig& cfg = {});

/// Exponential decay lr_start * (lr_end / lr_start)^(step / total).
double lr_schedule(std::int64_t step, std::int64_t total, double lr_start = 1e-4, double lr_end = 1e-7);

}  // namespace magsplat
