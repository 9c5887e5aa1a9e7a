#include "mvd/batches.hpp"

#include "mvd/check.hpp"

namespace mvd {

void validate_batch(const DiffusionBatch& batch, const NoiseSchedule& schedule) {
  check(batch.latents.dim() == 4, "batch latents must be [V, C, h, w]");
  const auto v = batch.latents.size(0);
  check(v >= 1, "batch needs at least one view");
  check(batch.noises.sizes() == batch.latents.sizes(), "batch noises must match latents");
  check(batch.timesteps.dim() == 1 && batch.timesteps.size(0) == v,
        "batch timesteps must be [V]");
  check(batch.timesteps.dtype() == torch::kInt64, "batch timesteps must be int64");
  check(static_cast<std::int64_t>(batch.condition.poses.size()) == v,
        "condition must carry one pose per target slot");
  auto ts = batch.timesteps.accessor<std::int64_t, 1>();
  for (std::int64_t i = 0; i < v; ++i) {
    check(ts[i] >= 1 && ts[i] <= schedule.T,
          "target timestep " + std::to_string(ts[i]) + " outside [1, " +
              std::to_string(schedule.T) + "]");
  }
}

EMABatch::EMABatch(torch::Tensor ref_latent, DiffusionBatch tgt, std::int64_t reference_timestep,
                   torch::Tensor reference_noise, RelativePose ref_pose)
    : reference_latent(std::move(ref_latent)),
      reference_pose(ref_pose),
      targets(std::move(tgt)) {
  check(reference_timestep == 0, "reference slot must be noise-free (timestep 0)");
  if (reference_noise.defined()) {
    check(reference_noise.abs().max().item<double>() == 0.0,
          "reference slot noise must be the zero array");
  }
  check(reference_pose.d_elevation == 0.0 && reference_pose.d_azimuth == 0.0,
        "reference pose must have zero relative elevation and azimuth");
  check(reference_latent.dim() == 3, "reference latent must be [C, h, w]");
  check(targets.latents.dim() == 4 &&
            targets.latents.sizes().slice(1) == reference_latent.sizes(),
        "reference latent shape must match target latents");
}

}  // namespace mvd
