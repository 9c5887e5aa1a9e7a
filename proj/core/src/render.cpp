#include "mvd/render.hpp"

#include <cmath>

#include "mvd/check.hpp"

namespace mvd {

void RenderOptions::validate() const {
  check(resolution >= 1, "resolution must be >= 1");
  check(samples_per_ray >= 2, "samples_per_ray must be >= 2");
  check(near > 0.0 && far > near, "need 0 < near < far");
  check(lambert_blend >= 0.0 && lambert_blend <= 1.0, "lambert_blend must be in [0,1]");
}

RenderOutput render(const FieldFunction& field, const CameraPose& pose,
                    const RenderOptions& options) {
  options.validate();
  const auto dtype = field.dtype();
  const auto opts = torch::TensorOptions().dtype(dtype);
  const int n = options.resolution;
  const std::int64_t R = static_cast<std::int64_t>(n) * n;
  const std::int64_t S = options.samples_per_ray;

  auto frame = make_view_frame(pose, n, n, options.fov_y);
  auto [origins, dirs] = generate_rays(frame, dtype);
  auto o = origins.reshape({R, 3});
  auto d = dirs.reshape({R, 3});

  // Stratified depths: one sample per uniform bin, jittered (midpoint when
  // stratification is off so deterministic renders stay deterministic).
  const double span = options.far - options.near;
  auto bins = torch::arange(S, opts);
  torch::Tensor offsets;
  if (options.stratified) {
    auto gen = at::detail::createCPUGenerator(options.jitter_seed);
    offsets = torch::rand({R, S}, gen, opts);
  } else {
    offsets = torch::full({R, S}, 0.5, opts);
  }
  auto t = options.near + span * (bins.unsqueeze(0) + offsets) / static_cast<double>(S);
  const double delta = span / static_cast<double>(S);  // uniform bin width

  // Field lookup; points need grad for the analytic density normals.
  auto pts = (o.unsqueeze(1) + t.unsqueeze(2) * d.unsqueeze(1)).reshape({R * S, 3});
  const bool track = torch::GradMode::is_enabled();
  pts.set_requires_grad(true);
  torch::Tensor sigma, albedo, normals;
  {
    // Normals need a graph through the field even under inference callers.
    torch::AutoGradMode enable_grad(true);
    auto q = field.query(pts);
    sigma = q.sigma;
    albedo = q.albedo;
    auto grads = torch::autograd::grad({sigma.sum()}, {pts}, /*grad_outputs=*/{},
                                       /*retain_graph=*/true, /*create_graph=*/track);
    auto g = grads[0];
    normals = -g / (g.norm(2, /*dim=*/1, /*keepdim=*/true) + 1e-12);
  }
  if (!track) {
    sigma = sigma.detach();
    albedo = albedo.detach();
    normals = normals.detach();
  }
  sigma = sigma.reshape({R, S});
  albedo = albedo.reshape({R, S, 3});
  normals = normals.reshape({R, S, 3});

  // Emission-absorption weights with exclusive-cumsum transmittance.
  auto tau = sigma * delta;
  auto accum = torch::cumsum(tau, 1) - tau;  // sum_{j<i}
  auto trans = torch::exp(-accum);
  auto weights = trans * (1.0 - torch::exp(-tau));

  torch::Tensor shaded;
  if (options.shading == Shading::kAlbedo) {
    shaded = albedo;
  } else {
    // Headlight-style point light co-located with (or jittered off) the
    // camera; same 0.1 + 0.9 * lambert law as the dataset rasterizer.
    Eigen::Vector3d light_pos = pose.origin() + options.light_jitter;
    auto lp = torch::tensor({light_pos.x(), light_pos.y(), light_pos.z()}, opts);
    auto to_light = lp.view({1, 1, 3}) - (o.unsqueeze(1) + t.unsqueeze(2) * d.unsqueeze(1));
    auto l = to_light / (to_light.norm(2, 2, true) + 1e-12);
    auto lambert = torch::clamp((normals * l).sum(2, true), 0.0);
    auto lit = albedo * (0.1 + 0.9 * lambert);
    const double b = options.shading == Shading::kLambertianPointLight
                         ? 1.0
                         : options.lambert_blend;
    shaded = (1.0 - b) * albedo + b * lit;
  }

  RenderOutput out;
  auto acc = weights.sum(1);  // [R]
  auto rgb = (weights.unsqueeze(2) * shaded).sum(1);
  if (options.white_background) rgb = rgb + (1.0 - acc).unsqueeze(1);
  out.rgb = rgb.clamp(0.0, 1.0).reshape({n, n, 3});
  out.weights = weights;
  out.normals = normals;
  out.opacity = acc.reshape({n, n});
  out.depth = (weights * t).sum(1).reshape({n, n});
  return out;
}

torch::Tensor orientation_loss(const RenderOutput& render, const Eigen::Vector3d& view_dir) {
  check(render.weights.defined() && render.normals.defined(),
        "orientation loss needs weights and normals");
  const auto opts = render.weights.options();
  auto v = torch::tensor({view_dir.x(), view_dir.y(), view_dir.z()}, opts);
  v = v / v.norm();
  auto facing_away = torch::clamp((render.normals * v.view({1, 1, 3})).sum(2), 0.0);
  auto w = render.weights.detach();                 // gradient flows through normals only
  auto visible = (w > 1e-4).to(w.scalar_type());    // visibility threshold on w_i
  const auto rays = static_cast<double>(render.weights.size(0));
  return (w * visible * facing_away.square()).sum() / rays;
}

}  // namespace mvd
