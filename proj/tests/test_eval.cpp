#include "test_common.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include <json.hpp>

#include "mvd/batches.hpp"
#include "mvd/checkpoint.hpp"
#include "mvd/codec.hpp"
#include "mvd/denoiser.hpp"
#include "mvd/eval.hpp"
#include "mvd/image_io.hpp"
#include "mvd/losses.hpp"
#include "mvd/metrics.hpp"
#include "mvd/oracle.hpp"
#include "mvd/rng.hpp"
#include "mvd/schedule.hpp"
#include "mvd/synth.hpp"

using namespace mvd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const char* tag) {
  const auto dir = fs::temp_directory_path() / (std::string("mvd_eval_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// [4,4,3] white image with the listed cells painted black (foreground).
torch::Tensor mask_image(const std::vector<std::pair<int, int>>& fg) {
  auto img = torch::ones({4, 4, 3}, torch::kFloat32);
  for (const auto& [r, c] : fg) img[r][c] = 0.0;
  return img;
}

const ThresholdCheck* find_check(const EvalReport& report, const std::string& id) {
  for (const auto& c : report.checks) {
    if (c.threshold.id == id) return &c;
  }
  return nullptr;
}

}  // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("psnr: cap, known offset, independent oracle, validation") {
  auto gen = at::detail::createCPUGenerator(5);
  auto img = torch::rand({6, 5, 3}, gen, torch::kFloat64);
  CHECK(psnr(img, img) == 99.0);  // zero mse hits the cap exactly

  // Uniform 0.1 offset: mse = 0.01, psnr = 10 log10(1/0.01) = 20 dB.
  auto a = torch::zeros({8, 8, 3}, torch::kFloat64);
  auto b = torch::full({8, 8, 3}, 0.1, torch::kFloat64);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));

  // Independent oracle: scalar accumulation in plain C++.
  auto x = torch::rand({4, 4, 3}, gen, torch::kFloat64);
  auto y = torch::rand({4, 4, 3}, gen, torch::kFloat64);
  auto xa = x.accessor<double, 3>();
  auto ya = y.accessor<double, 3>();
  double mse = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (int k = 0; k < 3; ++k) {
        const double d = xa[i][j][k] - ya[i][j][k];
        mse += d * d / 48.0;
      }
    }
  }
  CHECK(psnr(x, y) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-12));

  CHECK_THROWS_AS(psnr(a, torch::zeros({8, 8, 3}, torch::kFloat64).narrow(0, 0, 4)),
                  std::invalid_argument);
  CHECK_THROWS_AS(psnr(torch::Tensor(), a), std::invalid_argument);
}

TEST_CASE("silhouette iou: identity, disjoint, partial overlap, empty masks") {
  const auto a = mask_image({{0, 0}, {0, 1}});
  CHECK(silhouette_iou(a, a) == 1.0);

  const auto disjoint = mask_image({{3, 3}});
  CHECK(silhouette_iou(a, disjoint) == 0.0);

  // {0,1} vs {1,2}: intersection 1 cell, union 3 cells.
  const auto shifted = mask_image({{0, 1}, {0, 2}});
  CHECK(silhouette_iou(a, shifted) == 1.0 / 3.0);

  const auto white = torch::ones({4, 4, 3}, torch::kFloat32);
  CHECK(silhouette_iou(white, white) == 1.0);  // empty-vs-empty convention
  CHECK(silhouette_iou(white, a) == 0.0);

  // A pixel is foreground only when some channel dips below 1 - threshold.
  auto faint = torch::full({4, 4, 3}, 0.96, torch::kFloat32);
  CHECK(silhouette_iou(faint, white, 0.05) == 1.0);  // above the 0.95 cutoff: both empty
  CHECK(silhouette_iou(faint, white, 0.02) == 0.0);  // cutoff 0.98 flips faint to foreground
  CHECK_THROWS_AS(silhouette_iou(a, a, -0.01), std::invalid_argument);
  CHECK_THROWS_AS(silhouette_iou(a, a, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(silhouette_iou(a, torch::ones({5, 4, 3})), std::invalid_argument);
}

TEST_CASE("threshold table: committed file mirrors the embedded defaults") {
  const auto path = fs::path(__FILE__).parent_path().parent_path() / "thresholds.json";
  const auto file = load_thresholds(path);
  const auto builtin = default_thresholds();
  REQUIRE(file.size() == builtin.size());
  std::set<std::string> ids;
  for (std::size_t i = 0; i < file.size(); ++i) {
    CHECK(file[i].id == builtin[i].id);
    CHECK(file[i].metric == builtin[i].metric);
    CHECK(file[i].op == builtin[i].op);
    CHECK(file[i].value == builtin[i].value);
    CHECK(file[i].note == builtin[i].note);
    ids.insert(file[i].id);
  }
  CHECK(ids.size() == file.size());  // ids are unique
  CHECK_THROWS_AS(load_thresholds(path.parent_path() / "no_such_thresholds.json"),
                  std::invalid_argument);
}

TEST_CASE("report: threshold application and json round trip") {
  EvalReport r;
  r.suite = "demo";
  r.metrics = {{"x", 1.5}, {"y", -2.0}};
  r.metadata["seed"] = "7";
  const std::vector<Threshold> table = {{"a", "x", ">=", 1.0, ""},
                                        {"b", "x", "<=", 1.0, ""},
                                        {"c", "x", "==", 1.5, ""},
                                        {"d", "y", "<=", 0.0, "recorded"},
                                        {"e", "missing", ">=", 0.0, ""}};
  apply_thresholds(r, table);
  REQUIRE(r.checks.size() == 4);  // the missing-metric row is skipped
  CHECK(r.checks[0].passed);
  CHECK_FALSE(r.checks[1].passed);
  CHECK(r.checks[2].passed);
  CHECK(r.checks[3].passed);
  CHECK_FALSE(r.all_passed());

  const auto j = r.to_json();
  CHECK(j.at("suite") == "demo");
  CHECK(j.at("all_passed") == false);
  CHECK(j.at("metrics").at("x") == 1.5);
  CHECK(j.at("metadata").at("seed") == "7");
  REQUIRE(j.at("checks").size() == 4);
  CHECK(j.at("checks")[1].at("passed") == false);
  CHECK(j.at("checks")[3].at("note") == "recorded");

  const auto dir = scratch_dir("report");
  r.save(dir / "report.json");
  std::ifstream in(dir / "report.json");
  REQUIRE(in.good());
  CHECK(nlohmann::json::parse(in) == j);

  apply_thresholds(r, {});
  CHECK(r.checks.empty());
  CHECK(r.all_passed());  // vacuous

  const std::vector<Threshold> bad = {{"z", "x", "~=", 0.0, ""}};
  CHECK_THROWS_AS(apply_thresholds(r, bad), std::invalid_argument);
}

TEST_CASE("units suite: every closed-form check passes") {
  const auto r = eval_units();
  CHECK(r.suite == "units");
  CHECK(r.metrics.at("lambda_orient_2500") == 500.0);
  CHECK(r.metrics.at("lambda_orient_5000") == 1000.0);
  CHECK(r.metrics.at("lambda_orient_9000") == 1000.0);
  CHECK(r.metrics.at("anneal_t_max_at_0") == 0.98);
  CHECK(r.metrics.at("anneal_t_max_at_8000") == 0.5);
  CHECK(r.metrics.at("anneal_t_min") == 0.02);
  CHECK(r.metrics.at("guidance_scale_default") == 10.0);
  CHECK(r.metrics.at("camera_distance") == 1.5);
  CHECK(r.metrics.at("fixed_elevation_err") == 0.0);
  CHECK(r.metrics.at("fixed_elevation_deg") == doctest::Approx(30.0).epsilon(1e-12));
  CHECK(r.metrics.at("views_per_protocol") == 16.0);
  CHECK(r.metrics.at("branch_p_single") == 0.3);
  CHECK(r.metrics.at("forward_identity_max_err") == 0.0);
  CHECK(r.metrics.at("psnr_identical") == 99.0);
  CHECK(r.metrics.at("psnr_20db_abs_err") < 1e-12);
  CHECK(r.metrics.at("iou_third_abs_err") == 0.0);
  CHECK(r.checks.size() == 15);  // the table rows whose metrics this suite emits
  CHECK(r.all_passed());
}

TEST_CASE("closed-form denoiser: strict single-slot identities and bounds") {
  const auto schedule = make_schedule(40, 1e-3, 2e-2);
  auto gen = at::detail::createCPUGenerator(21);
  auto star = torch::randn({2, 3, 4, 4}, gen, torch::kFloat64);
  const OracleDenoiser oracle(star, schedule);

  // Diffuse the slot-1 target and recover the exact noise that was injected.
  for (const std::int64_t t : {std::int64_t{1}, std::int64_t{7}, std::int64_t{40}}) {
    auto eps = torch::randn({3, 4, 4}, gen, torch::kFloat64);
    auto z_t = forward_diffuse(star[1], t, eps, schedule);
    CHECK((oracle.predict_one(z_t, t, 1) - eps).abs().max().item<double>() < 1e-12);
  }

  // Residual identity for an arbitrary latent, against the formula inline.
  auto z = torch::randn({3, 4, 4}, gen, torch::kFloat64);
  const double ab = schedule.alpha_bar_at(9);
  auto manual = (z - std::sqrt(ab) * star[0]) / std::sqrt(1.0 - ab);
  CHECK((oracle.predict_one(z, 9, 0) - manual).abs().max().item<double>() < 1e-15);

  CHECK_THROWS_AS(oracle.predict_one(z, 0), std::invalid_argument);
  CHECK_THROWS_AS(oracle.predict_one(z, 41), std::invalid_argument);
  CHECK_THROWS_AS(oracle.predict_one(z, 5, 2), std::invalid_argument);
  CHECK_THROWS_AS(oracle.predict_one(z, 5, -1), std::invalid_argument);

  // Broadcast target: the slot index is irrelevant.
  const OracleDenoiser broadcast(star[0], schedule);
  CHECK((broadcast.predict_one(z, 5, 0) - broadcast.predict_one(z, 5, 7))
            .abs()
            .max()
            .item<double>() == 0.0);

  // Joint pass keeps the zero convention for noise-free slots.
  OracleDenoiser joint(star, schedule);
  auto latents = torch::randn({2, 3, 4, 4}, gen, torch::kFloat64);
  auto timesteps = torch::tensor({std::int64_t{0}, std::int64_t{12}});
  const std::vector<RelativePose> poses(2);
  auto pred = joint.predict(latents, timesteps, poses, torch::Tensor());
  CHECK(pred[0].abs().max().item<double>() == 0.0);
  CHECK((pred[1] - joint.predict_one(latents[1], 12, 1)).abs().max().item<double>() == 0.0);
}

TEST_CASE("training losses vanish under the closed-form denoiser") {
  const auto schedule = make_schedule(100, 1e-4, 2e-2);
  auto gen = at::detail::createCPUGenerator(31);

  // Stage-1 objective: predictions equal the injected noises exactly.
  DiffusionBatch batch;
  batch.latents = torch::randn({3, 3, 4, 4}, gen, torch::kFloat64);
  batch.timesteps = torch::tensor({std::int64_t{1}, std::int64_t{37}, std::int64_t{100}});
  batch.noises = torch::randn({3, 3, 4, 4}, gen, torch::kFloat64);
  batch.condition.embedding = torch::Tensor();
  batch.condition.poses = std::vector<RelativePose>(3);
  OracleDenoiser oracle(batch.latents, schedule);
  CHECK(loss_mv(oracle, batch, schedule).item<double>() < 1e-12);

  // Joint-sequence objective with a broadcast target: also exactly zero.
  auto z0 = torch::randn({3, 4, 4}, gen, torch::kFloat64);
  DiffusionBatch targets;
  targets.latents = torch::stack({z0, z0});
  targets.timesteps = torch::tensor({std::int64_t{5}, std::int64_t{60}});
  targets.noises = torch::randn({2, 3, 4, 4}, gen, torch::kFloat64);
  targets.condition.embedding = torch::Tensor();
  targets.condition.poses = std::vector<RelativePose>(2);
  OracleDenoiser broadcast(z0, schedule);
  EMABatch ema(z0.clone(), targets);
  CHECK(loss_ema(broadcast, ema, schedule).item<double>() < 1e-12);
}

TEST_CASE("oracle evaluation: configuration validation") {
  const auto ok = OracleEvalConfig{};
  ok.validate();
  auto bad = ok;
  bad.steps = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.resolution = 48;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.pool_factor = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.views = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = ok;
  bad.samples_per_ray = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("oracle evaluation: smoke run is deterministic and complete") {
  OracleEvalConfig c;
  c.steps = 8;
  c.resolution = 32;
  c.samples_per_ray = 12;
  c.pool_factor = 2;
  c.views = 2;
  c.seed = 4;

  const auto dir = scratch_dir("oracle_a");
  const auto r1 = eval_oracle(c, dir);
  CHECK(r1.suite == "oracle");
  REQUIRE(r1.metrics.count("oracle_psnr_view_0") == 1);
  REQUIRE(r1.metrics.count("oracle_psnr_view_1") == 1);
  REQUIRE(r1.metrics.count("oracle_psnr_min") == 1);
  REQUIRE(r1.metrics.count("oracle_psnr_mean") == 1);
  REQUIRE(r1.metrics.count("oracle_iou_min") == 1);
  CHECK(r1.metrics.at("oracle_psnr_min") <= r1.metrics.at("oracle_psnr_mean") + 1e-12);
  CHECK(r1.metrics.at("oracle_psnr_min") > 0.0);
  CHECK(std::isfinite(r1.metrics.at("oracle_psnr_mean")));

  CHECK(fs::exists(dir / "oracle_vs_gt.ppm"));
  CHECK(fs::exists(dir / "field.ckpt"));
  std::ifstream csv(dir / "distill_log.csv");
  REQUIRE(csv.good());
  int lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  CHECK(lines == 9);  // header + one row per step

  // Renders row over ground-truth row, two columns of 32px tiles.
  const auto grid = read_ppm(dir / "oracle_vs_gt.ppm");
  CHECK(grid.size(0) == 64);
  CHECK(grid.size(1) == 64);

  const auto* psnr_check = find_check(r1, "AC7.oracle_psnr_min");
  REQUIRE(psnr_check != nullptr);
  CHECK(psnr_check->value == r1.metrics.at("oracle_psnr_min"));
  CHECK(r1.metadata.at("field_param_hash").size() == 64);
  CHECK(r1.metadata.at("seed") == "4");

  // Bitwise repeatable under the same seed; a new seed moves the field.
  const auto r2 = eval_oracle(c, scratch_dir("oracle_b"));
  CHECK(r2.metrics == r1.metrics);
  CHECK(r2.metadata.at("field_param_hash") == r1.metadata.at("field_param_hash"));
  auto moved = c;
  moved.seed = 5;
  moved.steps = 2;
  const auto r3 = eval_oracle(moved, scratch_dir("oracle_c"));
  CHECK(r3.metadata.at("field_param_hash") != r1.metadata.at("field_param_hash"));
}

TEST_CASE("attention ablation: both variants train, sample, and report") {
  // Tiny handmade dataset: 2 objects, 32px views, 4 fixed + 4 random poses.
  Rng rng(77);
  std::vector<ObjectRecord> dataset;
  for (int i = 0; i < 2; ++i) {
    ObjectRecord rec;
    rec.object = make_toy_object(rng, "obj" + std::to_string(i));
    for (const auto& pose : fixed_view_set(4)) {
      rec.fixed_views.push_back(rasterize_view(rec.object, pose, 32));
    }
    for (int k = 0; k < 4; ++k) {
      rec.random_views.push_back(rasterize_view(rec.object, sample_random_pose(rng), 32));
    }
    dataset.push_back(std::move(rec));
  }

  DenoiserConfig mc;
  mc.base_channels = 16;
  mc.depth = 2;
  mc.attn_heads = 4;
  mc.time_embed_dim = 16;
  mc.camera_embed_dim = 8;
  mc.max_views = 5;
  mc.c_lat = 3;
  mc.d_emb = 16;
  mc.latent_hw = 8;
  mc.attn_max_hw = 4;
  mc.emb_tokens = 2;

  CodecConfig cc;
  cc.pool_factor = 4;  // 8 * 4 = 32 matches the dataset resolution
  cc.d_emb = 16;
  const EmbeddingEncoder encoder(16, 123);
  const auto schedule = make_schedule(60, 1e-4, 2e-2);

  DenoiserCheckpoint base;
  base.model_config = mc;
  base.codec = cc;
  base.model_params = MultiViewUNet(mc, 99).params();
  base.encoder_params = encoder.params();
  base.alpha_bar = schedule.alpha_bar;

  AblationConfig ac;
  ac.stage2 = TrainConfig::stage2_defaults(3);
  ac.stage2.batch_objects = 1;
  ac.stage2.warmup_steps = 1;
  ac.stage2.seed = 17;
  ac.sampler.steps = 3;
  ac.sampler.scale = 1.0;
  ac.sampler.deterministic = true;
  ac.sample_views = 2;
  ac.eval_objects = 2;
  ac.seed = 11;

  const auto dir = scratch_dir("ablation");
  const auto r = run_ablation_ema(dataset, encoder, base, ac, dir);
  CHECK(r.suite == "ablation");

  for (const char* name : {"joint_attn", "plain_attn"}) {
    const double iou = r.metrics.at(std::string("ablation_iou_") + name);
    CHECK(iou >= 0.0);
    CHECK(iou <= 1.0);
    const double sim = r.metrics.at(std::string("ablation_emb_sim_") + name);
    CHECK(sim >= -1.0 - 1e-5);
    CHECK(sim <= 1.0 + 1e-5);
    CHECK(std::isfinite(r.metrics.at(std::string("ablation_final_loss_") + name)));
    CHECK(r.metadata.at(std::string("config_hash_") + name).size() == 64);
    CHECK(fs::exists(dir / name / "samples_vs_gt.ppm"));
    CHECK(fs::exists(dir / name / "denoiser.ckpt"));
    CHECK(fs::exists(dir / name / "losses.csv"));
  }
  CHECK(r.metadata.at("config_hash_joint_attn") != r.metadata.at("config_hash_plain_attn"));

  // The variant configs differ in the attention mode alone.
  DenoiserConfig joint = mc;
  joint.attention_mode = DenoiserConfig::AttentionMode::kEmaJoint;
  DenoiserConfig plain = mc;
  plain.attention_mode = DenoiserConfig::AttentionMode::kPlainMultiview;
  auto ja = to_json(joint);
  auto jb = to_json(plain);
  CHECK(ja != jb);
  ja.erase("attention_mode");
  jb.erase("attention_mode");
  CHECK(ja == jb);

  // Per-variant grid: 2 objects x (samples row + ground-truth row), 2 columns.
  const auto vgrid = read_ppm(dir / "joint_attn" / "samples_vs_gt.ppm");
  CHECK(vgrid.size(0) == 128);
  CHECK(vgrid.size(1) == 64);
  // Side-by-side grid: one row per variant plus the ground-truth row.
  const auto side = read_ppm(dir / "ablation_grid.ppm");
  CHECK(side.size(0) == 96);
  CHECK(side.size(1) == 64);

  for (const char* id : {"AC10.ablation_iou_joint", "AC10.ablation_iou_plain",
                         "AC10.ablation_emb_sim_joint", "AC10.ablation_emb_sim_plain"}) {
    const auto* check_row = find_check(r, id);
    REQUIRE(check_row != nullptr);
    CHECK(check_row->passed);
  }
}

TEST_SUITE_END();
