#pragma once

#include <torch/torch.h>

#include "mvd/batches.hpp"
#include "mvd/schedule.hpp"

namespace mvd {

// Closed-form noise predictor for a known clean target z*:
//   eps_hat(z_t, t) = (z_t - sqrt(alpha_bar_t) * z*) / sqrt(1 - alpha_bar_t)
// the prediction that is exact when z_t really is a diffusion of z*. Slots at
// t = 0 are noise-free by contract and predict zero. Ignores poses and the
// embedding. Used as an independent reference for sampler and SDS tests.
class OracleDenoiser : public NoisePredictor {
 public:
  // target: [C, h, w] (broadcast to every slot) or [S, C, h, w] (per slot).
  OracleDenoiser(torch::Tensor target, NoiseSchedule schedule);

  torch::Tensor predict(const torch::Tensor& latents, const torch::Tensor& timesteps,
                        const std::vector<RelativePose>& poses,
                        const torch::Tensor& embedding) override;

  // Strict closed form for one latent [C, h, w]: requires 1 <= t <= T (at
  // t = 0 the formula divides by zero — only joint sequences may carry
  // noise-free slots, and those predict zero by the slot contract above).
  torch::Tensor predict_one(const torch::Tensor& z_t, std::int64_t t,
                            std::int64_t slot = 0) const;

 private:
  torch::Tensor target_;
  NoiseSchedule schedule_;
};

}  // namespace mvd
