#include "mvd/losses.hpp"

#include "mvd/check.hpp"

namespace mvd {
namespace {

// z_t per slot from the stored clean latents, timesteps and noises.
torch::Tensor noisy_targets(const DiffusionBatch& batch, const NoiseSchedule& schedule) {
  auto ts = batch.timesteps.accessor<std::int64_t, 1>();
  std::vector<torch::Tensor> slots;
  for (std::int64_t v = 0; v < batch.latents.size(0); ++v) {
    slots.push_back(forward_diffuse(batch.latents[v], ts[v], batch.noises[v], schedule));
  }
  return torch::stack(slots);
}

}  // namespace

torch::Tensor loss_mv(NoisePredictor& model, const DiffusionBatch& batch,
                      const NoiseSchedule& schedule) {
  validate_batch(batch, schedule);
  auto z_t = noisy_targets(batch, schedule);
  auto eps_hat = model.predict(z_t, batch.timesteps, batch.condition.poses,
                               batch.condition.embedding);
  check(eps_hat.sizes() == batch.noises.sizes(), "model prediction shape mismatch");
  return (eps_hat - batch.noises).square().mean();
}

torch::Tensor loss_ema(NoisePredictor& model, const EMABatch& batch,
                       const NoiseSchedule& schedule) {
  validate_batch(batch.targets, schedule);
  auto z_t = noisy_targets(batch.targets, schedule);
  auto joint = torch::cat({batch.reference_latent.unsqueeze(0), z_t});
  auto timesteps = torch::cat(
      {torch::zeros({1}, torch::kInt64), batch.targets.timesteps});
  std::vector<RelativePose> poses;
  poses.push_back(batch.reference_pose);
  poses.insert(poses.end(), batch.targets.condition.poses.begin(),
               batch.targets.condition.poses.end());
  auto eps_hat = model.predict(joint, timesteps, poses, batch.targets.condition.embedding);
  check(eps_hat.sizes() == joint.sizes(), "model prediction shape mismatch");
  // Target slots only: slice the reference prediction away before the loss so
  // it contributes neither value nor gradient.
  auto target_pred = eps_hat.narrow(0, 1, batch.targets.latents.size(0));
  return (target_pred - batch.targets.noises).square().mean();
}

torch::Tensor cfg_predict(NoisePredictor& model, const torch::Tensor& latents,
                          const torch::Tensor& timesteps,
                          const std::vector<RelativePose>& poses,
                          const torch::Tensor& embedding, double scale) {
  check(scale >= 0.0, "guidance scale must be >= 0");
  if (scale == 1.0) return model.predict(latents, timesteps, poses, embedding);
  if (scale == 0.0) return model.predict(latents, timesteps, poses, {});
  auto eps_cond = model.predict(latents, timesteps, poses, embedding);
  auto eps_uncond = model.predict(latents, timesteps, poses, {});
  return eps_uncond + scale * (eps_cond - eps_uncond);
}

}  // namespace mvd
