#include "mvd/camera.hpp"

#include <cmath>

#include "mvd/check.hpp"

namespace mvd {

double wrap_2pi(double a) {
  double r = std::fmod(a, 2.0 * kPi);
  if (r < 0.0) r += 2.0 * kPi;
  return r;
}

double wrap_pi(double a) {
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r <= 0.0) r += 2.0 * kPi;
  return r - kPi;
}

CameraPose::CameraPose(double elevation_rad, double azimuth_rad, double distance_world)
    : elevation(elevation_rad), azimuth(wrap_2pi(azimuth_rad)), distance(distance_world) {
  check(distance > 0.0, "CameraPose: distance must be > 0");
  check(std::abs(elevation) <= kPi / 2.0 + 1e-12,
        "CameraPose: elevation outside [-pi/2, pi/2]");
}

CameraPose CameraPose::from_degrees(double elevation_deg, double azimuth_deg,
                                    double distance_world) {
  return CameraPose(deg2rad(elevation_deg), deg2rad(azimuth_deg), distance_world);
}

Eigen::Vector3d CameraPose::origin() const {
  return distance * Eigen::Vector3d(std::cos(elevation) * std::cos(azimuth),
                                    std::cos(elevation) * std::sin(azimuth),
                                    std::sin(elevation));
}

Eigen::Matrix4d pose_to_c2w(const CameraPose& pose) {
  check(std::abs(std::abs(pose.elevation) - kPi / 2.0) > 1e-9,
        "pose_to_c2w: degenerate up vector at |elevation| == pi/2");
  const Eigen::Vector3d eye = pose.origin();
  const Eigen::Vector3d z = eye.normalized();  // camera looks along -z at the origin
  const Eigen::Vector3d world_up(0.0, 0.0, 1.0);
  const Eigen::Vector3d x = world_up.cross(z).normalized();
  const Eigen::Vector3d y = z.cross(x);

  Eigen::Matrix4d c2w = Eigen::Matrix4d::Identity();
  c2w.block<3, 1>(0, 0) = x;
  c2w.block<3, 1>(0, 1) = y;
  c2w.block<3, 1>(0, 2) = z;
  c2w.block<3, 1>(0, 3) = eye;
  return c2w;
}

ViewFrame make_view_frame(const CameraPose& pose, int height, int width, double fov_y) {
  check(height >= 1 && width >= 1, "make_view_frame: resolution must be >= 1x1");
  ViewFrame frame;
  frame.pose = pose;
  frame.c2w = pose_to_c2w(pose);
  frame.fov_y = fov_y;
  frame.height = height;
  frame.width = width;
  return frame;
}

RelativePose relative_pose(const CameraPose& reference, const CameraPose& target) {
  check(std::abs(reference.distance - target.distance) <= 1e-9 * reference.distance,
        "relative_pose: reference and target distances differ");
  RelativePose rel;
  rel.d_elevation = target.elevation - reference.elevation;
  rel.d_azimuth = wrap_pi(target.azimuth - reference.azimuth);
  rel.distance = target.distance;
  return rel;
}

CameraPose sample_random_pose(Rng& rng) {
  const double elev = uniform_range(rng, deg2rad(-10.0), deg2rad(40.0));
  const double azim = uniform_range(rng, 0.0, 2.0 * kPi);
  return CameraPose(elev, azim, kCameraDistance);
}

std::vector<CameraPose> fixed_view_set(int n_views) {
  check(n_views >= 1, "fixed_view_set: n_views must be >= 1");
  std::vector<CameraPose> poses;
  poses.reserve(n_views);
  for (int k = 0; k < n_views; ++k) {
    poses.emplace_back(deg2rad(30.0), 2.0 * kPi * k / n_views, kCameraDistance);
  }
  return poses;
}

std::pair<torch::Tensor, torch::Tensor> generate_rays(const ViewFrame& frame,
                                                      torch::Dtype dtype) {
  check(frame.height >= 1 && frame.width >= 1, "generate_rays: resolution must be >= 1x1");
  const int h = frame.height;
  const int w = frame.width;
  const auto opts = torch::TensorOptions().dtype(dtype);

  // Pixel centers; vertical fov sets the scale, square pixels.
  const double tan_half = std::tan(frame.fov_y / 2.0);
  auto px = torch::arange(w, opts) + 0.5;
  auto py = torch::arange(h, opts) + 0.5;
  auto cam_x = (px - w / 2.0) * (2.0 * tan_half / h);       // [W]
  auto cam_y = -(py - h / 2.0) * (2.0 * tan_half / h);      // [H], +y up in camera
  auto grid_y = cam_y.view({h, 1}).expand({h, w});
  auto grid_x = cam_x.view({1, w}).expand({h, w});
  auto dirs_cam = torch::stack({grid_x, grid_y, -torch::ones({h, w}, opts)}, -1);  // [H,W,3]

  auto rot = torch::empty({3, 3}, torch::kFloat64);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot[r][c] = frame.c2w(r, c);
  rot = rot.to(dtype);

  auto dirs_world = torch::matmul(dirs_cam.reshape({-1, 3}), rot.t()).reshape({h, w, 3});
  dirs_world = dirs_world / dirs_world.norm(2, -1, /*keepdim=*/true);

  auto origin = torch::tensor({frame.c2w(0, 3), frame.c2w(1, 3), frame.c2w(2, 3)},
                              torch::kFloat64)
                    .to(dtype);
  auto origins = origin.view({1, 1, 3}).expand({h, w, 3}).contiguous();
  return {origins, dirs_world};
}

}  // namespace mvd
