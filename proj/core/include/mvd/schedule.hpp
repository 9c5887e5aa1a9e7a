#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace mvd {

// Discrete DDPM schedule. alpha_bar has T+1 entries with alpha_bar[0] = 1
// exactly, so t = 0 always denotes the noise-free latent.
struct NoiseSchedule {
  std::int64_t T = 0;
  torch::Tensor alpha_bar;  // [T+1] float64, strictly decreasing, last entry > 0

  double alpha_bar_at(std::int64_t t) const;  // bounds-checked
};

// Linear-beta schedule: beta_s = beta_min + (s-1)*(beta_max-beta_min)/(T-1),
// alpha_bar[t] = prod_{s<=t} (1 - beta_s). Requires 0 < beta_min < beta_max < 1.
NoiseSchedule make_schedule(std::int64_t T, double beta_min, double beta_max);

// sqrt(alpha_bar_t) * z + sqrt(1 - alpha_bar_t) * eps; t = 0 returns z
// unchanged. eps must match z's shape.
torch::Tensor forward_diffuse(const torch::Tensor& z, std::int64_t t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule);

}  // namespace mvd
