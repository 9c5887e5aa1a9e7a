#include "mvd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>

#include "mvd/check.hpp"
#include "mvd/image_io.hpp"

namespace mvd {
namespace {

using nlohmann::json;

constexpr int kSchemaVersion = 1;
constexpr double kAmbient = 0.1;

// Farthest point of a primitive from the world origin.
double outer_radius(const Primitive& p) {
  const double reach = p.shape == Primitive::Shape::kSphere
                           ? p.half_extent
                           : p.half_extent * std::sqrt(3.0);  // box corner
  return p.center.norm() + reach;
}

Primitive sample_primitive(Rng& rng) {
  Primitive p;
  p.shape = uniform_int(rng, 0, 1) == 0 ? Primitive::Shape::kSphere : Primitive::Shape::kBox;
  for (int k = 0; k < 3; ++k) p.center[k] = uniform_range(rng, -0.4, 0.4);
  p.half_extent = uniform_range(rng, 0.08, 0.3);
  for (int k = 0; k < 3; ++k) p.albedo[k] = uniform01(rng);
  return p;
}

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  const Primitive* prim = nullptr;
};

// Nearest positive intersection of o + t*d with a sphere.
bool hit_sphere(const Primitive& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                Hit& hit) {
  const Eigen::Vector3d oc = o - p.center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - p.half_extent * p.half_extent;
  const double disc = b * b - c;
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t <= 1e-9) t = -b + sq;
  if (t <= 1e-9 || t >= hit.t) return false;
  hit.t = t;
  hit.normal = (o + t * d - p.center).normalized();
  hit.prim = &p;
  return true;
}

// Slab test against an axis-aligned cube of half side h.
bool hit_box(const Primitive& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
             Hit& hit) {
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  int enter_axis = -1;
  for (int k = 0; k < 3; ++k) {
    const double lo = p.center[k] - p.half_extent;
    const double hi = p.center[k] + p.half_extent;
    if (std::abs(d[k]) < 1e-12) {
      if (o[k] < lo || o[k] > hi) return false;
      continue;
    }
    double t0 = (lo - o[k]) / d[k];
    double t1 = (hi - o[k]) / d[k];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > tmin) {
      tmin = t0;
      enter_axis = k;
    }
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return false;
  }
  double t = tmin;
  if (t <= 1e-9) t = tmax;  // camera inside the box (cannot happen at d=1.5)
  if (t <= 1e-9 || t >= hit.t || enter_axis < 0) return false;
  hit.t = t;
  Eigen::Vector3d n = Eigen::Vector3d::Zero();
  const Eigen::Vector3d q = o + t * d - p.center;
  n[enter_axis] = q[enter_axis] > 0.0 ? 1.0 : -1.0;
  hit.normal = n;
  hit.prim = &p;
  return true;
}

std::string shape_name(Primitive::Shape s) {
  return s == Primitive::Shape::kSphere ? "sphere" : "box";
}

Primitive::Shape shape_from_name(const std::string& s) {
  if (s == "sphere") return Primitive::Shape::kSphere;
  if (s == "box") return Primitive::Shape::kBox;
  fail("unknown primitive shape '" + s + "'");
}

json pose_to_json(const CameraPose& pose) {
  return json{{"elevation_deg", rad2deg(pose.elevation)},
              {"azimuth_deg", rad2deg(pose.azimuth)},
              {"distance", pose.distance}};
}

CameraPose pose_from_json(const json& j) {
  return CameraPose::from_degrees(j.at("elevation_deg").get<double>(),
                                  j.at("azimuth_deg").get<double>(),
                                  j.at("distance").get<double>());
}

json load_json_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) fail(std::string(what) + " not readable: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(std::string("corrupt ") + what + " at " + path.string() + ": " + e.what());
  }
  return j;
}

}  // namespace

ToyObject make_toy_object(Rng& rng, std::string object_id) {
  ToyObject obj;
  obj.object_id = std::move(object_id);
  const int count = uniform_int(rng, 1, 4);
  obj.primitives.reserve(count);
  for (int i = 0; i < count; ++i) {
    Primitive p = sample_primitive(rng);
    while (outer_radius(p) > 1.0) p = sample_primitive(rng);
    obj.primitives.push_back(p);
  }
  return obj;
}

RenderedView rasterize_view(const ToyObject& object, const CameraPose& pose, int resolution) {
  check(resolution == 32 || resolution == 64 || resolution == 128,
        "rasterize_view: resolution must be one of {32, 64, 128}");
  const auto frame = make_view_frame(pose, resolution, resolution);
  auto [origins, dirs] = generate_rays(frame, torch::kFloat64);
  auto o_acc = origins.accessor<double, 3>();
  auto d_acc = dirs.accessor<double, 3>();

  torch::Tensor image = torch::ones({resolution, resolution, 3}, torch::kFloat64);
  auto img = image.accessor<double, 3>();
  for (int r = 0; r < resolution; ++r) {
    for (int c = 0; c < resolution; ++c) {
      const Eigen::Vector3d o(o_acc[r][c][0], o_acc[r][c][1], o_acc[r][c][2]);
      const Eigen::Vector3d d(d_acc[r][c][0], d_acc[r][c][1], d_acc[r][c][2]);
      Hit hit;
      for (const auto& p : object.primitives) {
        if (p.shape == Primitive::Shape::kSphere) {
          hit_sphere(p, o, d, hit);
        } else {
          hit_box(p, o, d, hit);
        }
      }
      if (!hit.prim) continue;  // background stays exactly white
      // Headlight Lambertian: the light sits at the camera origin.
      const Eigen::Vector3d point = o + hit.t * d;
      const Eigen::Vector3d to_light = (o - point).normalized();
      const double diffuse = std::max(0.0, hit.normal.dot(to_light));
      const double shade = kAmbient + (1.0 - kAmbient) * diffuse;
      for (int k = 0; k < 3; ++k) img[r][c][k] = std::clamp(hit.prim->albedo[k] * shade, 0.0, 1.0);
    }
  }
  return RenderedView{image.to(torch::kFloat32), pose};
}

std::filesystem::path build_dataset(const DatasetParams& params,
                                    const std::filesystem::path& out_dir) {
  check(params.n_objects >= 1, "build_dataset: n_objects must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail("build_dataset: cannot create " + out_dir.string() + ": " + ec.message());

  json manifest{{"schema_version", kSchemaVersion},
                {"n_objects", params.n_objects},
                {"seed", params.seed},
                {"resolution", params.resolution}};
  std::vector<std::string> ids;

  for (int i = 0; i < params.n_objects; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "obj_%04d", i);
    const std::string id(buf);
    ids.push_back(id);

    // Per-object streams derived from the master seed by index, so shards are
    // independent of generation order.
    Rng obj_rng(derive_seed(params.seed, "object", static_cast<std::uint64_t>(i)));
    const ToyObject obj = make_toy_object(obj_rng, id);
    Rng view_rng(derive_seed(params.seed, "views", static_cast<std::uint64_t>(i)));

    const auto shard = out_dir / id;
    std::filesystem::create_directories(shard, ec);
    if (ec) fail("build_dataset: cannot create " + shard.string() + ": " + ec.message());

    json meta{{"schema_version", kSchemaVersion}, {"object_id", id},
              {"resolution", params.resolution}};
    json prims = json::array();
    for (const auto& p : obj.primitives) {
      prims.push_back(json{{"shape", shape_name(p.shape)},
                           {"center", {p.center[0], p.center[1], p.center[2]}},
                           {"half_extent", p.half_extent},
                           {"albedo", {p.albedo[0], p.albedo[1], p.albedo[2]}}});
    }
    meta["primitives"] = prims;

    json random_poses = json::array();
    for (int v = 0; v < kViewsPerProtocol; ++v) {
      const CameraPose pose = sample_random_pose(view_rng);
      random_poses.push_back(pose_to_json(pose));
      char name[32];
      std::snprintf(name, sizeof(name), "random_%02d.ppm", v);
      write_ppm(shard / name, rasterize_view(obj, pose, params.resolution).image);
    }
    meta["random_poses"] = random_poses;

    json fixed_poses = json::array();
    const auto fixed = fixed_view_set(kViewsPerProtocol);
    for (int v = 0; v < kViewsPerProtocol; ++v) {
      fixed_poses.push_back(pose_to_json(fixed[v]));
      char name[32];
      std::snprintf(name, sizeof(name), "fixed_%02d.ppm", v);
      write_ppm(shard / name, rasterize_view(obj, fixed[v], params.resolution).image);
    }
    meta["fixed_poses"] = fixed_poses;

    std::ofstream out(shard / "meta.json");
    if (!out) fail("build_dataset: cannot write " + (shard / "meta.json").string());
    out << meta.dump(2) << "\n";
  }

  manifest["objects"] = ids;
  const auto manifest_path = out_dir / "manifest.json";
  std::ofstream out(manifest_path);
  if (!out) fail("build_dataset: cannot write " + manifest_path.string());
  out << manifest.dump(2) << "\n";
  return manifest_path;
}

std::vector<ObjectRecord> load_dataset(const std::filesystem::path& dataset_dir) {
  const auto manifest_path = dataset_dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    fail("load_dataset: manifest not found at " + manifest_path.string());
  }
  const json manifest = load_json_file(manifest_path, "dataset manifest");
  const int version = manifest.at("schema_version").get<int>();
  if (version != kSchemaVersion) {
    fail("load_dataset: schema_version " + std::to_string(version) + " at " +
         manifest_path.string() + ", expected " + std::to_string(kSchemaVersion));
  }

  std::vector<ObjectRecord> records;
  for (const auto& id_json : manifest.at("objects")) {
    const std::string id = id_json.get<std::string>();
    const auto shard = dataset_dir / id;
    const json meta = load_json_file(shard / "meta.json", "shard metadata");
    if (meta.at("schema_version").get<int>() != kSchemaVersion) {
      fail("load_dataset: shard schema mismatch at " + (shard / "meta.json").string());
    }

    ObjectRecord rec;
    rec.object.object_id = meta.at("object_id").get<std::string>();
    for (const auto& pj : meta.at("primitives")) {
      Primitive p;
      p.shape = shape_from_name(pj.at("shape").get<std::string>());
      for (int k = 0; k < 3; ++k) p.center[k] = pj.at("center")[k].get<double>();
      p.half_extent = pj.at("half_extent").get<double>();
      for (int k = 0; k < 3; ++k) p.albedo[k] = pj.at("albedo")[k].get<double>();
      rec.object.primitives.push_back(p);
    }

    auto load_views = [&](const char* key, const char* prefix, std::vector<RenderedView>& dst) {
      int v = 0;
      for (const auto& pj : meta.at(key)) {
        char name[32];
        std::snprintf(name, sizeof(name), "%s_%02d.ppm", prefix, v++);
        const auto img_path = shard / name;
        if (!std::filesystem::exists(img_path)) {
          fail("load_dataset: missing shard image " + img_path.string());
        }
        dst.push_back(RenderedView{read_ppm(img_path), pose_from_json(pj)});
      }
    };
    load_views("random_poses", "random", rec.random_views);
    load_views("fixed_poses", "fixed", rec.fixed_views);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace mvd
