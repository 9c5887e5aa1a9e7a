#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "mvd/camera.hpp"
#include "mvd/field.hpp"

namespace mvd {

enum class Shading { kAlbedo, kLambertianPointLight, kSoftBlend };

struct RenderOptions {
  int resolution = 32;
  int samples_per_ray = 48;
  double near = 0.5;
  double far = 2.5;
  double fov_y = deg2rad(kDefaultFovYDeg);
  Shading shading = Shading::kAlbedo;
  // kSoftBlend mixes albedo and point-light shading; the caller draws the
  // per-step blend factor and light jitter.
  double lambert_blend = 1.0;                        // in [0,1]
  Eigen::Vector3d light_jitter = Eigen::Vector3d::Zero();  // offset from the camera
  bool stratified = true;
  std::uint64_t jitter_seed = 0;  // stratified offsets; fixed seed = fixed rays
  bool white_background = true;

  void validate() const;
};

struct RenderOutput {
  torch::Tensor rgb;      // [H, W, 3] in [0,1]
  torch::Tensor weights;  // [R, S] per-ray quadrature weights, R = H*W row-major
  torch::Tensor normals;  // [R, S, 3], unit where density is meaningful
  torch::Tensor opacity;  // [H, W] = per-ray weight sums
  torch::Tensor depth;    // [H, W] expected hit distance (weight-averaged)
};

// Emission-absorption quadrature along stratified samples:
//   w_i = T_i * (1 - exp(-sigma_i * delta_i)),  T_i = exp(-sum_{j<i} sigma_j delta_j)
// Normals are -grad(sigma)/|grad(sigma)| by analytic differentiation of the
// field. Differentiable w.r.t. field parameters.
RenderOutput render(const FieldFunction& field, const CameraPose& pose,
                    const RenderOptions& options);

// Sum over visible samples (w_i > 1e-4) of stop_grad(w_i) * max(0, n_i . v)^2,
// averaged over rays; v is the view direction (camera toward scene), so
// normals facing away from the camera are penalized. Gradient flows through
// the normals only.
torch::Tensor orientation_loss(const RenderOutput& render, const Eigen::Vector3d& view_dir);

}  // namespace mvd
