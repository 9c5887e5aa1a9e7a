#pragma once

#include <Eigen/Dense>
#include <torch/torch.h>

#include <utility>
#include <vector>

#include "mvd/rng.hpp"

namespace mvd {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kCameraDistance = 1.5;
inline constexpr double kDefaultFovYDeg = 49.1;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// Wrap to [0, 2pi).
double wrap_2pi(double a);
// Wrap to (-pi, pi].
double wrap_pi(double a);

// Spherical camera looking at the world origin. World frame is right-handed
// with +z up; elevation measures up from the xy-plane, azimuth from +x toward +y.
struct CameraPose {
  double elevation = 0.0;  // radians, [-pi/2, pi/2]
  double azimuth = 0.0;    // radians, stored in [0, 2pi)
  double distance = kCameraDistance;

  CameraPose() = default;
  CameraPose(double elevation_rad, double azimuth_rad, double distance_world);
  static CameraPose from_degrees(double elevation_deg, double azimuth_deg,
                                 double distance_world);

  Eigen::Vector3d origin() const;
};

// Target pose relative to a reference pose, (elev_t - elev_r, wrap(azim_t - azim_r), d).
struct RelativePose {
  double d_elevation = 0.0;  // radians
  double d_azimuth = 0.0;    // radians, (-pi, pi]
  double distance = kCameraDistance;
};

struct ViewFrame {
  CameraPose pose;
  Eigen::Matrix4d c2w = Eigen::Matrix4d::Identity();
  double fov_y = deg2rad(kDefaultFovYDeg);
  int height = 0;
  int width = 0;
};

// Camera-to-world transform: -z camera axis points at the origin, camera "up"
// is world +z projected orthogonal to the view direction.
// Throws for |elevation| == pi/2 where that projection degenerates.
Eigen::Matrix4d pose_to_c2w(const CameraPose& pose);

ViewFrame make_view_frame(const CameraPose& pose, int height, int width,
                          double fov_y = deg2rad(kDefaultFovYDeg));

// Requires matching camera distances (the data protocol fixes d for all views).
RelativePose relative_pose(const CameraPose& reference, const CameraPose& target);

// Elevation uniform in [-10deg, 40deg], azimuth uniform in [0, 2pi), d = 1.5.
CameraPose sample_random_pose(Rng& rng);

// n evenly spaced azimuths starting at 0, all at 30deg elevation, d = 1.5.
std::vector<CameraPose> fixed_view_set(int n_views);

// Per-pixel ray origins and unit directions, pixel-center convention.
// Returns {origins [H,W,3], directions [H,W,3]} in the requested dtype.
std::pair<torch::Tensor, torch::Tensor> generate_rays(
    const ViewFrame& frame, torch::Dtype dtype = torch::kFloat32);

}  // namespace mvd
