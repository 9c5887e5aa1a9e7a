#include "mvd/distill.hpp"

#include <cmath>
#include <fstream>

#include "mvd/check.hpp"
#include "mvd/codec.hpp"
#include "mvd/losses.hpp"
#include "mvd/render.hpp"
#include "mvd/train.hpp"

namespace mvd {

void DistillConfig::validate() const {
  check(steps >= 1 && steps <= 10000, "steps must be in [1, 10000]");
  check(lr > 0.0, "lr must be positive");
  check(guidance_scale >= 0.0, "guidance_scale must be >= 0");
  check(lambda_e >= 0.0, "lambda_e must be >= 0");
  check(t_min > 0.0 && t_min < t_max_end && t_max_end <= t_max_start && t_max_start < 1.0,
        "need 0 < t_min < t_max_end <= t_max_start < 1");
  check(anneal_steps >= 1, "anneal_steps must be >= 1");
  check(views_per_step >= 1, "views_per_step must be >= 1");
  check(render_resolution >= 4, "render_resolution must be >= 4");
  check(samples_per_ray >= 2, "samples_per_ray must be >= 2");
}

double lambda_o(std::int64_t step) {
  check(step >= 0 && step <= 10000, "lambda_o step out of range [0, 10000]");
  return step <= 5000 ? 0.2 * static_cast<double>(step) : 1000.0;
}

std::pair<double, double> anneal_window(std::int64_t step, const DistillConfig& config) {
  check(step >= 0, "step must be >= 0");
  const double frac =
      std::min(1.0, static_cast<double>(step) / static_cast<double>(config.anneal_steps));
  return {config.t_min, config.t_max_start + (config.t_max_end - config.t_max_start) * frac};
}

torch::Tensor sds_grad(NoisePredictor& denoiser, const NoiseSchedule& schedule,
                       const torch::Tensor& latents, const torch::Tensor& embedding,
                       const std::vector<RelativePose>& poses,
                       std::pair<double, double> t_window, double guidance_scale, Rng& rng,
                       bool use_reference_slot) {
  torch::NoGradGuard no_grad;  // the denoiser is frozen: no gradient flows into it
  check(latents.dim() == 4, "latents must be [V, C, h, w]");
  const auto V = latents.size(0);
  check(static_cast<std::int64_t>(poses.size()) == V, "one pose per view");
  const auto [t_lo, t_hi] = t_window;
  check(t_lo > 0.0 && t_lo <= t_hi && t_hi < 1.0, "invalid timestep window");

  // One shared timestep and one noise draw for the joint sequence.
  const double t_frac = uniform_range(rng, t_lo, t_hi);
  const auto t = std::clamp<std::int64_t>(
      std::llround(t_frac * static_cast<double>(schedule.T)), 1, schedule.T);
  auto gen = at::detail::createCPUGenerator(rng());
  auto z = latents.detach();
  auto eps = torch::randn(z.sizes(), gen, z.options());

  std::vector<torch::Tensor> noisy;
  for (std::int64_t i = 0; i < V; ++i) {
    noisy.push_back(forward_diffuse(z[i], t, eps[i], schedule));
  }
  auto z_t = torch::stack(noisy);
  auto timesteps = torch::full({V}, t, torch::kInt64);
  auto all_poses = poses;

  if (use_reference_slot) {
    // Pseudo-reference: the mean current view estimate, noise-free at slot 0.
    z_t = torch::cat({z.mean(0, /*keepdim=*/true), z_t});
    timesteps = torch::cat({torch::zeros({1}, torch::kInt64), timesteps});
    all_poses.insert(all_poses.begin(), RelativePose{0.0, 0.0, poses.front().distance});
  }

  auto eps_hat = cfg_predict(denoiser, z_t, timesteps, all_poses, embedding, guidance_scale);
  if (use_reference_slot) eps_hat = eps_hat.narrow(0, 1, V);
  return (eps_hat - eps).detach();  // w(t) = 1
}

RadianceField distill(NoisePredictor& denoiser, const NoiseSchedule& schedule,
                      const torch::Tensor& embedding, const DistillConfig& config,
                      const FieldConfig& field_config, int pool_factor,
                      const std::filesystem::path& out_dir, const DistillHook& hook) {
  config.validate();
  check(schedule.T >= 1, "distill needs a noise schedule");
  check(!embedding.defined() || embedding.dim() == 1,
        "embedding must be a vector (or undefined for unconditional runs)");
  check(config.render_resolution % pool_factor == 0,
        "render_resolution must be divisible by pool_factor");

  RadianceField field(field_config, derive_seed(config.seed, "field"));
  AdamW opt(field.params(), 0.9, 0.999, /*weight_decay=*/0.0);
  const CameraPose identity_pose{0.0, 0.0, kCameraDistance};

  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    csv.open(out_dir / "distill_log.csv", std::ios::trunc);
    check(csv.good(), "cannot open distill_log.csv for writing");
    csv << "step,sds_grad_norm,orientation,lambda_orient\n";
  }

  const bool pinned = !config.fixed_poses.empty();
  const int V = pinned ? static_cast<int>(config.fixed_poses.size()) : config.views_per_step;
  for (std::int64_t step = 0; step < config.steps; ++step) {
    Rng rng(derive_seed(config.seed, "step", step));
    double elev = 0.0, base_az = 0.0;
    if (!pinned) {
      elev = uniform_range(rng, deg2rad(-10.0), deg2rad(40.0));
      base_az = uniform_range(rng, 0.0, 2.0 * kPi);
    }
    double blend = 1.0;
    Eigen::Vector3d jitter = Eigen::Vector3d::Zero();
    if (!config.deterministic_shading) {
      blend = uniform01(rng);
      jitter = Eigen::Vector3d(uniform_range(rng, -0.1, 0.1), uniform_range(rng, -0.1, 0.1),
                               uniform_range(rng, -0.1, 0.1));
    }

    std::vector<torch::Tensor> latents_v;
    std::vector<RelativePose> rel_poses;
    torch::Tensor orient = torch::zeros({}, torch::kFloat32);
    for (int k = 0; k < V; ++k) {
      const CameraPose pose =
          pinned ? config.fixed_poses[k]
                 : CameraPose(elev, wrap_2pi(base_az + k * 2.0 * kPi / V), kCameraDistance);
      RenderOptions ro;
      ro.resolution = config.render_resolution;
      ro.samples_per_ray = config.samples_per_ray;
      ro.shading = config.deterministic_shading ? Shading::kLambertianPointLight
                                                : Shading::kSoftBlend;
      ro.lambert_blend = blend;
      ro.light_jitter = jitter;
      ro.stratified = true;
      ro.jitter_seed = rng();
      auto out = render(field, pose, ro);
      if (!out.rgb.isfinite().all().item<bool>()) {
        if (!out_dir.empty()) save_field(field, out_dir / "diagnostic_nan_field.ckpt");
        throw std::runtime_error("non-finite field output at distillation step " +
                                 std::to_string(step + 1));
      }
      latents_v.push_back(encode_latent(out.rgb, pool_factor));
      rel_poses.push_back(relative_pose(identity_pose, pose));
      const Eigen::Vector3d view_dir = -pose.origin().normalized();
      orient = orient + orientation_loss(out, view_dir) / static_cast<double>(V);
    }
    auto latents = torch::stack(latents_v);

    auto window = anneal_window(step, config);
    auto grad = sds_grad(denoiser, schedule, latents.detach(), embedding, rel_poses, window,
                         config.guidance_scale, rng, config.use_reference_slot);
    // Surrogate whose latent gradient is exactly `grad`.
    auto sds_proxy = (grad * latents).sum();
    const double lam_o = lambda_o(step + 1);
    auto total = config.lambda_e * sds_proxy + lam_o * orient;
    if (!std::isfinite(total.item<double>())) {
      if (!out_dir.empty()) save_field(field, out_dir / "diagnostic_nan_field.ckpt");
      throw std::runtime_error("non-finite distillation loss at step " +
                               std::to_string(step + 1));
    }

    opt.zero_grad();
    total.backward();
    opt.step(config.lr);

    DistillStepInfo info;
    info.step = step + 1;
    info.sds_grad_norm = grad.norm().item<double>();
    info.orientation = orient.item<double>();
    info.lambda_orient = lam_o;
    if (csv.is_open()) {
      csv << info.step << ',' << info.sds_grad_norm << ',' << info.orientation << ','
          << info.lambda_orient << '\n'
          << std::flush;
    }
    if (hook) hook(info);
  }

  if (!out_dir.empty()) save_field(field, out_dir / "field.ckpt");
  return field;
}

}  // namespace mvd
