#include "test_common.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mvd/hash.hpp"
#include "mvd/image_io.hpp"
#include "mvd/synth.hpp"

using namespace mvd;
namespace fs = std::filesystem;

namespace {

bool objects_equal(const ToyObject& a, const ToyObject& b) {
  if (a.object_id != b.object_id || a.primitives.size() != b.primitives.size()) return false;
  for (size_t i = 0; i < a.primitives.size(); ++i) {
    const auto& p = a.primitives[i];
    const auto& q = b.primitives[i];
    if (p.shape != q.shape || p.center != q.center || p.half_extent != q.half_extent ||
        p.albedo != q.albedo) {
      return false;
    }
  }
  return true;
}

double object_outer_radius(const ToyObject& obj) {
  double r = 0.0;
  for (const auto& p : obj.primitives) {
    const double reach = p.shape == Primitive::Shape::kSphere ? p.half_extent
                                                              : p.half_extent * std::sqrt(3.0);
    r = std::max(r, p.center.norm() + reach);
  }
  return r;
}

// sha256 of every regular file under a directory, keyed by relative path.
std::map<std::string, std::string> dir_hashes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = sha256_file(e.path());
  }
  return out;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mvd_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("synth");

TEST_CASE("make_toy_object is deterministic and respects invariants") {
  Rng a(17), b(17);
  CHECK(objects_equal(make_toy_object(a), make_toy_object(b)));

  Rng rng(5);
  std::set<size_t> counts;
  for (int i = 0; i < 1000; ++i) {
    auto obj = make_toy_object(rng);
    REQUIRE(obj.primitives.size() >= 1);
    REQUIRE(obj.primitives.size() <= 4);
    counts.insert(obj.primitives.size());
    CHECK(object_outer_radius(obj) <= 1.0);
    for (const auto& p : obj.primitives) {
      CHECK(p.half_extent > 0.0);
      CHECK(p.half_extent <= 0.3);
      for (int k = 0; k < 3; ++k) {
        CHECK(std::abs(p.center[k]) <= 0.4);
        CHECK(p.albedo[k] >= 0.0);
        CHECK(p.albedo[k] <= 1.0);
      }
    }
  }
  CHECK(counts == std::set<size_t>{1, 2, 3, 4});
}

TEST_CASE("rasterize_view background and symmetry") {
  SUBCASE("uncovered pixels are exactly white") {
    ToyObject obj;
    obj.object_id = "t";
    obj.primitives.push_back({Primitive::Shape::kSphere, {0, 0, 0}, 0.15, {0.8, 0.2, 0.2}});
    auto view = rasterize_view(obj, CameraPose(0.0, 0.0, 1.5), 64);
    // corners are far outside a radius-0.15 sphere's silhouette
    for (int k = 0; k < 3; ++k) {
      CHECK(view.image[0][0][k].item<float>() == 1.0f);
      CHECK(view.image[63][63][k].item<float>() == 1.0f);
    }
    // center pixel hits the sphere
    CHECK(view.image[32][32][0].item<float>() < 1.0f);
  }
  SUBCASE("centered sphere looks identical from every azimuth") {
    ToyObject obj;
    obj.object_id = "s";
    obj.primitives.push_back({Primitive::Shape::kSphere, {0, 0, 0}, 0.25, {0.3, 0.6, 0.9}});
    auto ref = rasterize_view(obj, CameraPose(deg2rad(20.0), 0.0, 1.5), 64);
    for (double az : {72.0, 144.0, 216.0, 301.5}) {
      auto other = rasterize_view(obj, CameraPose(deg2rad(20.0), deg2rad(az), 1.5), 64);
      CHECK((ref.image - other.image).abs().max().item<float>() < 1e-6f);
    }
  }
  SUBCASE("bad resolution rejected") {
    ToyObject obj;
    obj.primitives.push_back({});
    CHECK_THROWS_AS(rasterize_view(obj, CameraPose(0, 0, 1.5), 48), std::invalid_argument);
  }
}

TEST_CASE("sphere silhouette area matches the projected disc") {
  ToyObject obj;
  obj.object_id = "disc";
  obj.primitives.push_back({Primitive::Shape::kSphere, {0, 0, 0}, 0.3, {0.5, 0.5, 0.5}});
  const int n = 128;
  auto view = rasterize_view(obj, CameraPose(0.0, 0.0, 1.5), n);
  // covered = any channel below 1
  auto mask = (view.image.amin(-1) < 1.0f);
  const double measured = mask.sum().item<long>();
  // silhouette cone half-angle alpha = asin(r/d); pixel radius n*tan(alpha)/(2*tan(fov/2))
  const double alpha = std::asin(0.3 / 1.5);
  const double radius_px = n * std::tan(alpha) / (2.0 * std::tan(deg2rad(kDefaultFovYDeg) / 2.0));
  const double expected = kPi * radius_px * radius_px;
  CHECK(std::abs(measured - expected) / expected < 0.02);
}

TEST_CASE("build_dataset determinism and protocol") {
  DatasetParams params;
  params.n_objects = 8;
  params.seed = 7;
  params.resolution = 32;

  auto dir_a = temp_dir("ds_a");
  auto dir_b = temp_dir("ds_b");
  build_dataset(params, dir_a);
  build_dataset(params, dir_b);
  CHECK(dir_hashes(dir_a) == dir_hashes(dir_b));

  auto records = load_dataset(dir_a);
  REQUIRE(records.size() == 8);
  auto fixed = fixed_view_set(16);
  for (const auto& rec : records) {
    CHECK(rec.random_views.size() == 16);
    CHECK(rec.fixed_views.size() == 16);
    for (int v = 0; v < 16; ++v) {
      CHECK(rad2deg(rec.fixed_views[v].pose.elevation) == doctest::Approx(30.0));
      CHECK(rec.fixed_views[v].pose.azimuth == doctest::Approx(fixed[v].azimuth).epsilon(1e-12));
      CHECK(rec.fixed_views[v].pose.distance == 1.5);
    }
    for (const auto& rv : rec.random_views) {
      CHECK(rv.pose.elevation >= deg2rad(-10.0));
      CHECK(rv.pose.elevation <= deg2rad(40.0));
      CHECK(rv.pose.distance == 1.5);
    }
  }
  fs::remove_all(dir_b);

  SUBCASE("round trip: poses survive the degree serialization") {
    Rng view_rng(derive_seed(7, "views", 0));
    for (int v = 0; v < 16; ++v) {
      auto expected = sample_random_pose(view_rng);
      CHECK(records[0].random_views[v].pose.elevation ==
            doctest::Approx(expected.elevation).epsilon(1e-12));
      CHECK(records[0].random_views[v].pose.azimuth ==
            doctest::Approx(expected.azimuth).epsilon(1e-12));
    }
  }

  SUBCASE("loaded images match fresh rasterization up to 8-bit quantization") {
    Rng obj_rng(derive_seed(7, "object", 3));
    auto obj = make_toy_object(obj_rng, "obj_0003");
    for (int v : {0, 7, 15}) {
      auto fresh = rasterize_view(obj, records[3].fixed_views[v].pose, 32);
      auto diff = (records[3].fixed_views[v].image - fresh.image).abs().max().item<float>();
      CHECK(diff <= 1.0f / 255.0f);
      // and bit-exact after quantization
      CHECK(torch::equal(quantize_8bit(records[3].fixed_views[v].image),
                         quantize_8bit(fresh.image)));
    }
  }

  fs::remove_all(dir_a);
}

TEST_CASE("load_dataset error paths") {
  SUBCASE("missing manifest") {
    auto missing = fs::temp_directory_path() / "mvd_test_missing_ds";
    fs::remove_all(missing);
    CHECK_THROWS_WITH_AS(load_dataset(missing), doctest::Contains("manifest not found"),
                         std::invalid_argument);
  }
  SUBCASE("schema version mismatch") {
    auto dir = temp_dir("ds_badver");
    std::ofstream(dir / "manifest.json")
        << R"({"schema_version": 999, "n_objects": 0, "seed": 0, "resolution": 32, "objects": []})";
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("schema_version"),
                         std::invalid_argument);
    fs::remove_all(dir);
  }
  SUBCASE("missing shard image") {
    DatasetParams params;
    params.n_objects = 1;
    params.seed = 1;
    params.resolution = 32;
    auto dir = temp_dir("ds_gone");
    build_dataset(params, dir);
    fs::remove(dir / "obj_0000" / "fixed_05.ppm");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("missing shard image"),
                         std::invalid_argument);
    fs::remove_all(dir);
  }
}

TEST_SUITE_END();
