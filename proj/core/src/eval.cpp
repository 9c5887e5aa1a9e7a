#include "mvd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mvd/check.hpp"
#include "mvd/codec.hpp"
#include "mvd/distill.hpp"
#include "mvd/hash.hpp"
#include "mvd/image_io.hpp"
#include "mvd/metrics.hpp"
#include "mvd/oracle.hpp"
#include "mvd/render.hpp"
#include "mvd/schedule.hpp"

namespace mvd {

namespace {

void validate_threshold(const Threshold& t) {
  check(!t.id.empty() && !t.metric.empty(), "threshold needs an id and a metric");
  check(t.op == ">=" || t.op == "<=" || t.op == "==", "threshold op must be >=, <= or ==");
  check(std::isfinite(t.value), "threshold value must be finite");
}

bool threshold_passes(const Threshold& t, double value) {
  if (t.op == ">=") return value >= t.value;
  if (t.op == "<=") return value <= t.value;
  return value == t.value;  // "==": exact, reserved for closed-form constants
}

}  // namespace

std::vector<Threshold> default_thresholds() {
  // Embedded mirror of the repo-root thresholds.json; a test asserts the two
  // stay in sync. `==` rows are closed-form constants, `>=`/`<=` rows carry
  // pilot provenance in the note.
  return {
      {"AC1.lambda_orient_2500", "lambda_orient_2500", "==", 500.0,
       "orientation-weight schedule, linear branch: 0.2 * 2500"},
      {"AC1.lambda_orient_5000", "lambda_orient_5000", "==", 1000.0,
       "orientation-weight schedule at the branch point"},
      {"AC1.lambda_orient_9000", "lambda_orient_9000", "==", 1000.0,
       "orientation-weight schedule, constant branch"},
      {"AC1.anneal_t_max_start", "anneal_t_max_at_0", "==", 0.98,
       "timestep-window upper bound before annealing"},
      {"AC1.anneal_t_max_end", "anneal_t_max_at_8000", "==", 0.5,
       "timestep-window upper bound after the 8000-step anneal"},
      {"AC1.anneal_t_min", "anneal_t_min", "==", 0.02, "timestep-window lower bound"},
      {"AC1.guidance_scale_default", "guidance_scale_default", "==", 10.0,
       "distillation guidance-scale default"},
      {"AC1.camera_distance", "camera_distance", "==", 1.5,
       "shared camera distance of the view protocol"},
      {"AC1.fixed_elevation_err", "fixed_elevation_err", "==", 0.0,
       "fixed-view elevation matches 30 degrees exactly"},
      {"AC1.views_per_protocol", "views_per_protocol", "==", 16.0,
       "random and fixed views per object"},
      {"AC1.branch_p_single", "branch_p_single", "==", 0.3,
       "stage-2 single-view branch probability"},
      {"AC2.forward_identity_err", "forward_identity_max_err", "==", 0.0,
       "forward diffusion at t = 0 is the identity, bit-exact"},
      {"AC7.psnr_identical", "psnr_identical", "==", 99.0,
       "identical images hit the PSNR cap"},
      {"AC7.psnr_arithmetic_err", "psnr_20db_abs_err", "<=", 1e-12,
       "PSNR of a uniform 0.1 offset is 20 dB up to rounding"},
      {"AC10.iou_arithmetic_err", "iou_third_abs_err", "<=", 1e-15,
       "masks overlapping 1 of 3 cells give IoU 1/3"},
      {"AC7.oracle_psnr_min", "oracle_psnr_min", ">=", 20.0,
       "worst-view PSNR of the oracle-distilled sphere; pilots 2026-08-22 "
       "(seed 0, 32px, pool 2, window annealed over the run) measured "
       "20.3 dB at 300 steps and 21.6 dB at 600 steps"},
      {"AC8.stage1_loss_drop", "stage1_loss_drop", ">=", 0.5,
       "smoothed stage-1 loss reduction vs the step-100 baseline; pilot runs "
       "sit well past this at the acceptance budget"},
      {"AC8.stage2_loss_drop", "stage2_loss_drop", ">=", 0.5,
       "smoothed stage-2 loss reduction vs the step-100 baseline"},
      {"AC10.ablation_iou_joint", "ablation_iou_joint_attn", ">=", 0.0,
       "recorded for inspection; no ordering is asserted between attention variants"},
      {"AC10.ablation_iou_plain", "ablation_iou_plain_attn", ">=", 0.0,
       "recorded for inspection; no ordering is asserted between attention variants"},
      {"AC10.ablation_emb_sim_joint", "ablation_emb_sim_joint_attn", ">=", -1.0,
       "cosine similarity to the reference embedding; recorded, not ordered"},
      {"AC10.ablation_emb_sim_plain", "ablation_emb_sim_plain_attn", ">=", -1.0,
       "cosine similarity to the reference embedding; recorded, not ordered"},
  };
}

std::vector<Threshold> load_thresholds(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open thresholds file: " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  check(j.value("schema_version", 0) == 1, "unsupported thresholds schema_version");
  std::vector<Threshold> out;
  for (const auto& row : j.at("thresholds")) {
    Threshold t;
    t.id = row.at("id").get<std::string>();
    t.metric = row.at("metric").get<std::string>();
    t.op = row.at("op").get<std::string>();
    t.value = row.at("value").get<double>();
    t.note = row.value("note", std::string());
    validate_threshold(t);
    out.push_back(std::move(t));
  }
  return out;
}

bool EvalReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const ThresholdCheck& c) { return c.passed; });
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["suite"] = suite;
  j["metrics"] = metrics;
  j["metadata"] = metadata;
  j["checks"] = nlohmann::json::array();
  for (const auto& c : checks) {
    j["checks"].push_back({{"id", c.threshold.id},
                           {"metric", c.threshold.metric},
                           {"op", c.threshold.op},
                           {"threshold", c.threshold.value},
                           {"value", c.value},
                           {"passed", c.passed},
                           {"note", c.threshold.note}});
  }
  j["all_passed"] = all_passed();
  return j;
}

void EvalReport::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  check(out.good(), "cannot write report: " + path.string());
  out << to_json().dump(2) << "\n";
}

void apply_thresholds(EvalReport& report, const std::vector<Threshold>& thresholds) {
  report.checks.clear();
  for (const auto& t : thresholds) {
    validate_threshold(t);
    auto it = report.metrics.find(t.metric);
    if (it == report.metrics.end()) continue;  // another suite owns this metric
    report.checks.push_back({t, it->second, threshold_passes(t, it->second)});
  }
}

EvalReport eval_units() {
  EvalReport r;
  r.suite = "units";

  r.metrics["lambda_orient_2500"] = lambda_o(2500);
  r.metrics["lambda_orient_5000"] = lambda_o(5000);
  r.metrics["lambda_orient_9000"] = lambda_o(9000);

  const DistillConfig dc;
  r.metrics["anneal_t_max_at_0"] = anneal_window(0, dc).second;
  r.metrics["anneal_t_max_at_8000"] = anneal_window(8000, dc).second;
  r.metrics["anneal_t_min"] = anneal_window(0, dc).first;
  r.metrics["guidance_scale_default"] = dc.guidance_scale;

  r.metrics["camera_distance"] = kCameraDistance;
  const auto fixed = fixed_view_set(4);
  r.metrics["fixed_elevation_deg"] = rad2deg(fixed[0].elevation);
  r.metrics["fixed_elevation_err"] = std::abs(fixed[0].elevation - deg2rad(30.0));
  r.metrics["views_per_protocol"] = static_cast<double>(kViewsPerProtocol);
  r.metrics["branch_p_single"] = TrainConfig().branch_p_single;

  {
    // Forward diffusion at t = 0 must return the input bit-exactly.
    auto schedule = make_schedule(1000, 1e-4, 2e-2);
    auto gen = at::detail::createCPUGenerator(7);
    auto z = torch::randn({3, 4, 4}, gen, torch::kFloat64);
    auto eps = torch::randn({3, 4, 4}, gen, torch::kFloat64);
    r.metrics["forward_identity_max_err"] =
        (forward_diffuse(z, 0, eps, schedule) - z).abs().max().item<double>();
  }
  {
    auto gen = at::detail::createCPUGenerator(11);
    auto img = torch::rand({8, 8, 3}, gen, torch::kFloat64);
    r.metrics["psnr_identical"] = psnr(img, img);
    auto a = torch::zeros({8, 8, 3}, torch::kFloat64);
    auto b = torch::full({8, 8, 3}, 0.1, torch::kFloat64);
    r.metrics["psnr_20db_abs_err"] = std::abs(psnr(a, b) - 20.0);
  }
  {
    // 1x3 masks: foreground cells {0,1} vs {1,2} -> intersection 1, union 3.
    auto a = torch::ones({1, 3, 3}, torch::kFloat32);
    auto b = torch::ones({1, 3, 3}, torch::kFloat32);
    a[0][0] = 0.0;
    a[0][1] = 0.0;
    b[0][1] = 0.0;
    b[0][2] = 0.0;
    r.metrics["iou_third_abs_err"] = std::abs(silhouette_iou(a, b) - 1.0 / 3.0);
  }

  apply_thresholds(r, default_thresholds());
  return r;
}

void OracleEvalConfig::validate() const {
  check(steps >= 1 && steps <= 10000, "steps must be in [1, 10000]");
  check(resolution == 32 || resolution == 64 || resolution == 128,
        "resolution must be one of {32, 64, 128} (ground-truth rasterizer grid)");
  check(pool_factor == 1 || pool_factor == 2 || pool_factor == 4,
        "pool_factor must be one of {1, 2, 4}");
  check(resolution % pool_factor == 0, "resolution must be divisible by pool_factor");
  check(samples_per_ray >= 2, "samples_per_ray must be >= 2");
  check(schedule_T >= 1, "schedule_T must be >= 1");
  check(views >= 1 && views <= 16, "views must be in [1, 16]");
  check(lr > 0.0, "lr must be positive");
  check(anneal_steps >= 0, "anneal_steps must be >= 0");
}

EvalReport eval_oracle(const OracleEvalConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  EvalReport r;
  r.suite = "oracle";

  // Ground truth: a single off-center sphere (off-center so the fixed views
  // differ and a slot/pose mix-up cannot cancel out), rasterized at the
  // pinned evaluation poses.
  ToyObject obj;
  obj.object_id = "oracle_sphere";
  Primitive prim;
  prim.shape = Primitive::Shape::kSphere;
  prim.center = Eigen::Vector3d(0.12, -0.08, 0.05);
  prim.half_extent = 0.42;
  prim.albedo = Eigen::Vector3d(0.85, 0.35, 0.3);
  obj.primitives = {prim};

  const auto poses = fixed_view_set(config.views);
  std::vector<torch::Tensor> gt;
  std::vector<torch::Tensor> gt_latents;
  for (const auto& pose : poses) {
    auto view = rasterize_view(obj, pose, config.resolution);
    gt.push_back(view.image);
    gt_latents.push_back(encode_latent(view.image, config.pool_factor));
  }

  auto schedule = make_schedule(config.schedule_T, 1e-4, 2e-2);
  OracleDenoiser oracle(torch::stack(gt_latents), schedule);

  DistillConfig dc;
  dc.steps = config.steps;
  dc.lr = config.lr;
  dc.guidance_scale = 1.0;  // oracle ignores conditioning; single forward pass
  dc.render_resolution = config.resolution;
  dc.samples_per_ray = config.samples_per_ray;
  dc.seed = derive_seed(config.seed, "oracle-distill");
  dc.anneal_steps = config.anneal_steps > 0 ? config.anneal_steps : config.steps;
  dc.fixed_poses = poses;            // slot i must keep rendering target i
  dc.deterministic_shading = true;   // the rasterizer's plain point-light law
  auto field = distill(oracle, schedule, torch::Tensor(), dc, FieldConfig{},
                       config.pool_factor, out_dir);

  torch::NoGradGuard no_grad;
  RenderOptions ro;
  ro.resolution = config.resolution;
  ro.samples_per_ray = config.samples_per_ray;
  ro.shading = Shading::kLambertianPointLight;
  ro.stratified = false;
  double worst = std::numeric_limits<double>::infinity();
  double mean = 0.0;
  double worst_iou = 1.0;
  std::vector<torch::Tensor> grid_images;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    auto out = render(field, poses[i], ro);
    const double view_psnr = psnr(out.rgb, gt[i]);
    r.metrics["oracle_psnr_view_" + std::to_string(i)] = view_psnr;
    worst = std::min(worst, view_psnr);
    mean += view_psnr / static_cast<double>(poses.size());
    worst_iou = std::min(worst_iou, silhouette_iou(out.rgb, gt[i]));
    grid_images.push_back(out.rgb);
  }
  for (const auto& img : gt) grid_images.push_back(img);
  r.metrics["oracle_psnr_min"] = worst;
  r.metrics["oracle_psnr_mean"] = mean;
  r.metrics["oracle_iou_min"] = worst_iou;

  if (!out_dir.empty()) {
    const auto grid_path = out_dir / "oracle_vs_gt.ppm";
    write_ppm(grid_path, tile_grid(grid_images, static_cast<int>(poses.size())));
    r.metadata["grid"] = grid_path.string();
    r.metadata["field_ckpt"] = (out_dir / "field.ckpt").string();
  }
  r.metadata["seed"] = std::to_string(config.seed);
  r.metadata["steps"] = std::to_string(config.steps);
  r.metadata["resolution"] = std::to_string(config.resolution);
  r.metadata["pool_factor"] = std::to_string(config.pool_factor);
  r.metadata["field_param_hash"] = field.param_hash();

  apply_thresholds(r, default_thresholds());
  return r;
}

EvalReport run_ablation_ema(const std::vector<ObjectRecord>& dataset,
                            const EmbeddingEncoder& encoder, const DenoiserCheckpoint& base,
                            const AblationConfig& config,
                            const std::filesystem::path& out_dir) {
  check(!dataset.empty(), "ablation needs a dataset");
  check(!base.model_params.empty(), "ablation needs a trained base checkpoint");
  check(config.sample_views >= 1, "sample_views must be >= 1");
  check(config.eval_objects >= 1, "eval_objects must be >= 1");
  const int n_obj = std::min<int>(config.eval_objects, static_cast<int>(dataset.size()));
  const int n_fixed = static_cast<int>(dataset.front().fixed_views.size());
  check(n_fixed >= config.sample_views, "dataset fixed views must cover sample_views");
  const int expect_hw = base.model_config.latent_hw * base.codec.pool_factor;
  check(dataset.front().fixed_views.front().image.size(0) == expect_hw,
        "dataset resolution must match the sampler output resolution");

  EvalReport r;
  r.suite = "ablation";
  auto schedule = base.schedule();

  struct Variant {
    DenoiserConfig::AttentionMode mode;
    const char* name;
  };
  const Variant variants[] = {{DenoiserConfig::AttentionMode::kEmaJoint, "joint_attn"},
                              {DenoiserConfig::AttentionMode::kPlainMultiview, "plain_attn"}};
  // First-object sample rows per variant for the side-by-side grid.
  std::vector<std::vector<torch::Tensor>> front_rows;
  std::vector<torch::Tensor> gt_row;

  for (const auto& variant : variants) {
    DenoiserConfig mc = base.model_config;
    mc.attention_mode = variant.mode;
    r.metadata[std::string("config_hash_") + variant.name] = sha256_hex(to_json(mc).dump());

    TrainConfig t2 = config.stage2;
    t2.stage = TrainConfig::Stage::kStage2;
    TrainSetup setup;
    setup.dataset = &dataset;
    setup.encoder = &encoder;
    setup.schedule = schedule;
    setup.model = mc;
    setup.codec = base.codec;
    setup.init_params = base.model_params;
    const auto vdir = out_dir / variant.name;
    auto state = train(t2, setup, vdir);

    const int tail = std::min<int>(50, static_cast<int>(state.loss_history.size()));
    if (tail > 0) {
      double final_loss = 0.0;
      for (int i = 0; i < tail; ++i) {
        final_loss += state.loss_history[state.loss_history.size() - 1 - i] / tail;
      }
      r.metrics[std::string("ablation_final_loss_") + variant.name] = final_loss;
    }

    MultiViewUNet net(mc, state.params);
    SamplerOptions so = config.sampler;
    so.c_lat = mc.c_lat;
    so.latent_hw = mc.latent_hw;
    so.pool_factor = base.codec.pool_factor;

    double iou = 0.0, emb_sim = 0.0;
    std::vector<torch::Tensor> variant_grid;
    std::vector<torch::Tensor> front_row;
    for (int j = 0; j < n_obj; ++j) {
      const auto& rec = dataset[static_cast<std::size_t>(j)];
      const auto& ref = rec.fixed_views.front();
      auto embedding = encoder.encode(ref.image);

      // Evenly strided fixed views as targets (e.g. azimuths 0/90/180/270).
      std::vector<RelativePose> rels;
      std::vector<const RenderedView*> targets;
      for (int k = 0; k < config.sample_views; ++k) {
        const auto& tv = rec.fixed_views[static_cast<std::size_t>(k * n_fixed /
                                                                  config.sample_views)];
        targets.push_back(&tv);
        rels.push_back(relative_pose(ref.pose, tv.pose));
      }
      auto samples = sample_views(net, embedding, rels, schedule, so,
                                  derive_seed(config.seed, "ablation-sample", j));
      for (int k = 0; k < config.sample_views; ++k) {
        iou += silhouette_iou(samples[k], targets[k]->image) / (n_obj * config.sample_views);
        emb_sim += torch::dot(encoder.encode(samples[k]), embedding).item<double>() /
                   (n_obj * config.sample_views);
        variant_grid.push_back(samples[k]);
        if (j == 0) front_row.push_back(samples[k]);
        if (j == 0 && &variant == &variants[0]) gt_row.push_back(targets[k]->image);
      }
      for (const auto* tv : targets) variant_grid.push_back(tv->image);
    }
    r.metrics[std::string("ablation_iou_") + variant.name] = iou;
    r.metrics[std::string("ablation_emb_sim_") + variant.name] = emb_sim;
    front_rows.push_back(std::move(front_row));

    if (!out_dir.empty()) {
      const auto grid_path = vdir / "samples_vs_gt.ppm";
      write_ppm(grid_path, tile_grid(variant_grid, config.sample_views));
      r.metadata[std::string("grid_") + variant.name] = grid_path.string();
    }
  }

  if (!out_dir.empty()) {
    // Side-by-side: one row per variant over the shared ground-truth row.
    std::vector<torch::Tensor> side;
    for (auto& row : front_rows) side.insert(side.end(), row.begin(), row.end());
    side.insert(side.end(), gt_row.begin(), gt_row.end());
    const auto side_path = out_dir / "ablation_grid.ppm";
    write_ppm(side_path, tile_grid(side, config.sample_views));
    r.metadata["grid"] = side_path.string();
  }
  r.metadata["seed"] = std::to_string(config.seed);
  r.metadata["train_steps"] = std::to_string(config.stage2.steps);
  r.metadata["objects_scored"] = std::to_string(n_obj);

  apply_thresholds(r, default_thresholds());
  return r;
}

}  // namespace mvd
