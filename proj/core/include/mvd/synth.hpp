#pragma once

#include <torch/torch.h>

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "mvd/camera.hpp"
#include "mvd/rng.hpp"

namespace mvd {

// Procedural toy objects: 1-4 sphere/box primitives, guaranteed to fit inside
// the unit sphere so a distance-1.5 camera always frames them.
struct Primitive {
  enum class Shape { kSphere, kBox };
  Shape shape = Shape::kSphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();  // components in [-0.4, 0.4]
  double half_extent = 0.1;                          // <= 0.3
  Eigen::Vector3d albedo = Eigen::Vector3d::Ones();  // rgb in [0,1]
};

struct ToyObject {
  std::string object_id;
  std::vector<Primitive> primitives;  // 1-4 entries
};

struct RenderedView {
  torch::Tensor image;  // [H, W, 3] float32 in [0,1]
  CameraPose pose;
};

struct ObjectRecord {
  ToyObject object;
  std::vector<RenderedView> random_views;  // 16
  std::vector<RenderedView> fixed_views;   // 16, poses = fixed_view_set(16)
};

constexpr int kViewsPerProtocol = 16;  // 16 random + 16 fixed per object

// Deterministic under the rng state; primitives are resampled until the whole
// object fits inside the unit-radius sphere.
ToyObject make_toy_object(Rng& rng, std::string object_id = "toy");

// Analytic ray/primitive intersection with Lambertian headlight shading over a
// pure white background. resolution must be one of {32, 64, 128}.
RenderedView rasterize_view(const ToyObject& object, const CameraPose& pose, int resolution);

struct DatasetParams {
  int n_objects = 8;
  std::uint64_t seed = 0;
  int resolution = 64;
};

// Writes one shard directory per object (8-bit RGB views + a sidecar metadata
// record, poses in degrees) plus a top-level manifest. Returns the manifest
// path. Output is a pure function of (n_objects, seed, resolution).
std::filesystem::path build_dataset(const DatasetParams& params,
                                    const std::filesystem::path& out_dir);

// Loads every record eagerly; throws on missing manifest, schema-version
// mismatch, or missing/corrupt shard files.
std::vector<ObjectRecord> load_dataset(const std::filesystem::path& dataset_dir);

}  // namespace mvd
