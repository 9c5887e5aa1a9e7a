#include "mvd/sampler.hpp"

#include <cmath>

#include "mvd/check.hpp"
#include "mvd/codec.hpp"
#include "mvd/losses.hpp"

namespace mvd {

std::vector<std::int64_t> sampler_timesteps(std::int64_t T, int steps) {
  check(T >= 1, "sampler needs T >= 1");
  check(steps >= 1, "sampler needs steps >= 1");
  std::vector<std::int64_t> ts;
  for (int i = 0; i < steps; ++i) {
    const double f =
        steps == 1 ? double(T) : double(T) - double(i) * (double(T - 1) / double(steps - 1));
    const auto t = static_cast<std::int64_t>(std::llround(f));
    if (ts.empty() || t < ts.back()) ts.push_back(t);
  }
  return ts;
}

std::vector<torch::Tensor> sample_views(NoisePredictor& model, const torch::Tensor& embedding,
                                        const std::vector<RelativePose>& poses,
                                        const NoiseSchedule& schedule,
                                        const SamplerOptions& opts, std::uint64_t seed) {
  check(!poses.empty(), "sample_views needs at least one pose");
  check(embedding.defined(), "sample_views needs a conditioning embedding");
  const auto V = static_cast<std::int64_t>(poses.size());
  const auto C = static_cast<std::int64_t>(opts.c_lat);
  const auto hw = static_cast<std::int64_t>(opts.latent_hw);

  torch::NoGradGuard no_grad;
  auto gen = at::detail::createCPUGenerator(seed);
  auto z = torch::randn({V, C, hw, hw}, gen, torch::kFloat32);
  auto ref = torch::zeros({C, hw, hw});  // pseudo-reference, experimental path
  const RelativePose ref_pose{0.0, 0.0, poses.front().distance};

  const auto ts = sampler_timesteps(schedule.T, opts.steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const std::int64_t t = ts[i];
    const std::int64_t t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;

    torch::Tensor lat = z;
    auto timesteps = torch::full({V}, t, torch::kInt64);
    std::vector<RelativePose> slot_poses = poses;
    if (opts.use_reference_slot) {
      lat = torch::cat({ref.unsqueeze(0), z});
      timesteps = torch::cat({torch::zeros({1}, torch::kInt64), timesteps});
      slot_poses.insert(slot_poses.begin(), ref_pose);
    }
    auto eps = cfg_predict(model, lat, timesteps, slot_poses, embedding, opts.scale);
    if (opts.use_reference_slot) eps = eps.narrow(0, 1, V);

    const double ab_t = schedule.alpha_bar_at(t);
    const double ab_p = schedule.alpha_bar_at(t_prev);
    auto x0 = (z - std::sqrt(1.0 - ab_t) * eps) / std::sqrt(ab_t);
    const double eta = opts.deterministic ? 0.0 : 1.0;
    const double sigma =
        t_prev == 0 ? 0.0
                    : eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) *
                          std::sqrt(1.0 - ab_t / ab_p);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma));
    z = std::sqrt(ab_p) * x0 + dir * eps;
    if (sigma > 0.0) z = z + sigma * torch::randn({V, C, hw, hw}, gen, torch::kFloat32);
    if (opts.use_reference_slot) ref = x0.mean(0);
  }

  std::vector<torch::Tensor> images;
  images.reserve(V);
  for (std::int64_t v = 0; v < V; ++v) {
    images.push_back(decode_latent(z[v], opts.pool_factor));
  }
  return images;
}

}  // namespace mvd
