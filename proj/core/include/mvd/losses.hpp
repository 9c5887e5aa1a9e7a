#pragma once

#include <torch/torch.h>

#include "mvd/batches.hpp"
#include "mvd/schedule.hpp"

namespace mvd {

// Stage-1 objective: epsilon-MSE over all target slots, conditioned on the
// embedding (or the model's null conditioning when it was dropped).
torch::Tensor loss_mv(NoisePredictor& model, const DiffusionBatch& batch,
                      const NoiseSchedule& schedule);

// Stage-2 objective: the model consumes the joint sequence
// (reference ⊕ targets) with timesteps (0 ⊕ t) and poses (0 ⊕ π); the loss is
// the epsilon-MSE over target slots ONLY. The reference-slot prediction is
// produced but excluded — it carries no loss and no gradient.
torch::Tensor loss_ema(NoisePredictor& model, const EMABatch& batch,
                       const NoiseSchedule& schedule);

// Classifier-free guidance over a joint slot sequence:
//   eps_hat = eps_uncond + scale * (eps_cond - eps_uncond)
// where the unconditional branch replaces the embedding with the model's
// learned null conditioning. scale == 1 and scale == 0 return the conditional
// and unconditional predictions bitwise (single forward pass each).
torch::Tensor cfg_predict(NoisePredictor& model, const torch::Tensor& latents,
                          const torch::Tensor& timesteps,
                          const std::vector<RelativePose>& poses,
                          const torch::Tensor& embedding, double scale);

}  // namespace mvd
