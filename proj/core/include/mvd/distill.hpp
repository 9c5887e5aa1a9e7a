#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

#include "mvd/batches.hpp"
#include "mvd/camera.hpp"
#include "mvd/field.hpp"
#include "mvd/rng.hpp"
#include "mvd/schedule.hpp"

namespace mvd {

struct DistillConfig {
  std::int64_t steps = 10000;
  double lr = 0.01;
  double guidance_scale = 10.0;
  double lambda_e = 1.0;  // SDS weight
  double t_max_start = 0.98;
  double t_max_end = 0.5;
  double t_min = 0.02;
  std::int64_t anneal_steps = 8000;
  int views_per_step = 4;
  int render_resolution = 64;  // must equal latent_hw * pool_factor
  int samples_per_ray = 48;
  std::uint64_t seed = 0;
  // Experimental: prepend a pseudo-reference slot (mean of the current view
  // latents, t = 0, zero pose) to the joint pass. Off by default: at
  // distillation time only the embedding conditions generation.
  bool use_reference_slot = false;
  // Evaluation hooks. Pinned poses replace the random per-step camera rig
  // (slot i always renders fixed_poses[i]): required when the denoiser is a
  // per-slot oracle, whose targets are meaningless under a moving rig.
  // Deterministic shading drops the random blend/light-jitter draws and uses
  // the plain point-light law the dataset rasterizer uses.
  std::vector<CameraPose> fixed_poses;
  bool deterministic_shading = false;

  void validate() const;
};

// Orientation-loss weight, piecewise per the published schedule:
// 0.2 * step for step <= 5000, then 1000. Throws outside [0, 10000].
double lambda_o(std::int64_t step);

// Timestep window (t_min, t_max) as fractions of T: t_max interpolates
// linearly t_max_start -> t_max_end over [0, anneal_steps], constant after.
std::pair<double, double> anneal_window(std::int64_t step, const DistillConfig& config);

// Score-distillation gradient w.r.t. the rendered latents [V, C, h, w]:
// draws one shared t in the window and one noise array, diffuses the latents,
// runs the (frozen) denoiser with classifier-free guidance, and returns
// w(t) * (eps_hat - eps) with w(t) = 1. Runs entirely without autograd, so no
// gradient ever reaches the denoiser. The returned tensor is detached.
torch::Tensor sds_grad(NoisePredictor& denoiser, const NoiseSchedule& schedule,
                       const torch::Tensor& latents, const torch::Tensor& embedding,
                       const std::vector<RelativePose>& poses,
                       std::pair<double, double> t_window, double guidance_scale, Rng& rng,
                       bool use_reference_slot = false);

struct DistillStepInfo {
  std::int64_t step = 0;  // 1-based, completed
  double sds_grad_norm = 0.0;
  double orientation = 0.0;
  double lambda_orient = 0.0;
};
using DistillHook = std::function<void(const DistillStepInfo&)>;

// SDS-only 3D distillation: per step, render `views_per_step` views at a
// shared random elevation and 90-degree-spaced azimuths, encode them, apply
// the SDS gradient through the joint multi-view pass plus the weighted
// orientation loss, and take one Adam step. The reference image never appears
// here — conditioning is the embedding alone. Deterministic under seed.
// Writes field.ckpt and distill_log.csv into out_dir (empty path = no files).
RadianceField distill(NoisePredictor& denoiser, const NoiseSchedule& schedule,
                      const torch::Tensor& embedding, const DistillConfig& config,
                      const FieldConfig& field_config, int pool_factor,
                      const std::filesystem::path& out_dir = {}, const DistillHook& hook = {});

}  // namespace mvd
