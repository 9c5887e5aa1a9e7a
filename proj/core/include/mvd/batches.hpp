#pragma once

#include <torch/torch.h>

#include <vector>

#include "mvd/camera.hpp"
#include "mvd/schedule.hpp"

namespace mvd {

// Conditioning shared by every slot of one object's batch: the frozen image
// embedding plus one relative pose per target slot. An undefined embedding
// tensor means "dropped" — the model must substitute its learned null
// embedding (classifier-free guidance training).
struct ConditionBundle {
  torch::Tensor embedding;          // [D_emb] or undefined
  std::vector<RelativePose> poses;  // one per target slot
};

// One object's noisy target views. All slots share the condition embedding.
struct DiffusionBatch {
  torch::Tensor latents;    // [V, C, h, w] noise-free latents
  torch::Tensor timesteps;  // [V] int64 in [1, T]
  torch::Tensor noises;     // [V, C, h, w] unit-Gaussian draws
  ConditionBundle condition;
};

// Throws unless shapes agree, pose count matches V, and every timestep lies in
// [1, schedule.T].
void validate_batch(const DiffusionBatch& batch, const NoiseSchedule& schedule);

// Joint sequence for explicit multi-view attention: a noise-free reference
// latent at slot 0 (timestep 0, zero relative pose) concatenated with noisy
// targets. The reference slot never carries noise, by construction: the
// constructor rejects a nonzero reference timestep, a nonzero reference noise
// array, and a nonzero reference pose.
struct EMABatch {
  torch::Tensor reference_latent;  // [C, h, w], noise-free
  RelativePose reference_pose;     // d_elevation = d_azimuth = 0
  DiffusionBatch targets;
  static constexpr int kReferenceSlot = 0;

  EMABatch(torch::Tensor reference_latent, DiffusionBatch targets,
           std::int64_t reference_timestep = 0,
           torch::Tensor reference_noise = {},
           RelativePose reference_pose = RelativePose{0.0, 0.0, kCameraDistance});
};

// Joint multi-view noise predictor: consumes the full slot sequence of one
// object and returns per-slot noise predictions of the same shape. An
// undefined embedding selects the model's null conditioning.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  // latents [S, C, h, w]; timesteps [S] int64 (0 allowed only for noise-free
  // slots); poses: S entries; returns [S, C, h, w].
  virtual torch::Tensor predict(const torch::Tensor& latents, const torch::Tensor& timesteps,
                                const std::vector<RelativePose>& poses,
                                const torch::Tensor& embedding) = 0;
};

}  // namespace mvd
