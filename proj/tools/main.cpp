// mvd: command-line driver for the multi-view diffusion distillation pipeline.
// Every subcommand reads one experiment file (all sections optional), layers
// --set overrides on top, and writes its outputs plus a provenance manifest
// into its own directory. All commands are deterministic under their seeds:
// repeating a command reproduces its artifacts byte for byte.
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvd/camera.hpp"
#include "mvd/check.hpp"
#include "mvd/checkpoint.hpp"
#include "mvd/codec.hpp"
#include "mvd/config.hpp"
#include "mvd/denoiser.hpp"
#include "mvd/distill.hpp"
#include "mvd/eval.hpp"
#include "mvd/field.hpp"
#include "mvd/image_io.hpp"
#include "mvd/render.hpp"
#include "mvd/rng.hpp"
#include "mvd/sampler.hpp"
#include "mvd/synth.hpp"
#include "mvd/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--config", o.config_path, "Experiment JSON file (all sections optional)")
      ->check(CLI::ExistingFile);
  sub->add_option("--set", o.sets,
                  "Override one config value, e.g. --set distill.steps=500 (repeatable)");
  sub->add_option("--out", o.out, "Output directory (default: <out_root>/<command>)");
}

mvd::ExperimentConfig load_config(const CommonOpts& o) {
  json doc = json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    mvd::check(in.good(), "cannot open config file: " + o.config_path);
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      mvd::fail("config file " + o.config_path + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& s : o.sets) mvd::apply_override(doc, s);
  return mvd::experiment_from_json(doc);
}

fs::path resolve_out(const CommonOpts& o, const mvd::ExperimentConfig& cfg,
                     const char* command) {
  const fs::path out = o.out.empty() ? cfg.out_root / command : fs::path(o.out);
  fs::create_directories(out);
  return out;
}

// Writes the fully resolved config next to the outputs so a run can be
// reproduced without the original file + override list.
fs::path write_resolved(const mvd::ExperimentConfig& cfg, const fs::path& out) {
  const fs::path p = out / "resolved_config.json";
  std::ofstream f(p, std::ios::trunc);
  f << cfg.to_json().dump(2) << "\n";
  return p;
}

void finish(mvd::RunManifest& manifest, std::vector<fs::path> artifacts, const fs::path& out) {
  mvd::finish_manifest(manifest, artifacts, out / "run_manifest.json");
  std::cout << "wrote " << (out / "run_manifest.json").string() << " (" << artifacts.size()
            << " artifacts, config " << manifest.config_hash.substr(0, 12) << ")\n";
}

// Orbit used for qualitative grids: the dataset's fixed ring.
std::vector<mvd::RelativePose> ring_relative_poses(int n_views) {
  const auto ring = mvd::fixed_view_set(n_views);
  std::vector<mvd::RelativePose> rels;
  rels.reserve(ring.size());
  for (const auto& pose : ring) rels.push_back(mvd::relative_pose(ring.front(), pose));
  return rels;
}

int run_build_dataset(const CommonOpts& o) {
  const auto cfg = load_config(o);
  const fs::path out = resolve_out(o, cfg, "dataset");
  auto manifest = mvd::start_manifest("build-dataset", cfg.to_json());
  const fs::path resolved = write_resolved(cfg, out);
  const fs::path ds_manifest = mvd::build_dataset(cfg.dataset, out);
  std::cout << "dataset: " << cfg.dataset.n_objects << " objects at " << cfg.dataset.resolution
            << "px, seed " << cfg.dataset.seed << "\n";
  finish(manifest, {resolved, ds_manifest}, out);
  return 0;
}

int run_train_stage1(const CommonOpts& o, const std::string& dataset_dir, bool resume) {
  const auto cfg = load_config(o);
  const fs::path out = resolve_out(o, cfg, "stage1");
  auto manifest = mvd::start_manifest("train-stage1", cfg.to_json());
  const fs::path resolved = write_resolved(cfg, out);

  const auto dataset = mvd::load_dataset(dataset_dir);
  mvd::check(!dataset.empty(), "dataset is empty: " + dataset_dir);
  const auto side = dataset.front().fixed_views.front().image.size(0);
  mvd::check(side == cfg.denoiser.latent_hw * cfg.codec.pool_factor,
             "dataset resolution does not match denoiser.latent_hw * codec.pool_factor");

  const mvd::EmbeddingEncoder encoder(cfg.codec.d_emb, cfg.codec.embed_seed);
  mvd::TrainSetup setup;
  setup.dataset = &dataset;
  setup.encoder = &encoder;
  setup.schedule = cfg.schedule.build();
  setup.model = cfg.denoiser;
  setup.codec = cfg.codec;

  mvd::TrainState resumed;
  const mvd::TrainState* resume_from = nullptr;
  if (resume && fs::exists(out / "train_state.ckpt")) {
    resumed = mvd::load_train_checkpoint(out / "train_state.ckpt").state;
    resume_from = &resumed;
    std::cout << "resuming from step " << resumed.global_step << "\n";
  }
  const auto state = mvd::train(cfg.stage1, setup, out, resume_from);
  std::cout << "stage 1 done: " << state.global_step << " steps, last loss "
            << (state.loss_history.empty() ? 0.0 : state.loss_history.back()) << "\n";
  finish(manifest,
         {resolved, out / "denoiser.ckpt", out / "train_state.ckpt", out / "losses.csv"}, out);
  return 0;
}

int run_train_stage2(const CommonOpts& o, const std::string& dataset_dir,
                     const std::string& init_ckpt, bool resume) {
  const auto cfg = load_config(o);
  const fs::path out = resolve_out(o, cfg, "stage2");
  auto manifest = mvd::start_manifest("train-stage2", cfg.to_json());
  const fs::path resolved = write_resolved(cfg, out);

  const auto dataset = mvd::load_dataset(dataset_dir);
  mvd::check(!dataset.empty(), "dataset is empty: " + dataset_dir);
  // Model shape, codec, frozen encoder, and schedule all come from the
  // stage-1 checkpoint; the config's corresponding sections are ignored here.
  const auto base = mvd::load_checkpoint(init_ckpt);
  const auto side = dataset.front().fixed_views.front().image.size(0);
  mvd::check(side == base.model_config.latent_hw * base.codec.pool_factor,
             "dataset resolution does not match the checkpoint's latent geometry");

  const mvd::EmbeddingEncoder encoder(base.encoder_params);
  mvd::TrainSetup setup;
  setup.dataset = &dataset;
  setup.encoder = &encoder;
  setup.schedule = base.schedule();
  setup.model = base.model_config;
  setup.codec = base.codec;
  setup.init_params = base.model_params;

  mvd::TrainState resumed;
  const mvd::TrainState* resume_from = nullptr;
  if (resume && fs::exists(out / "train_state.ckpt")) {
    resumed = mvd::load_train_checkpoint(out / "train_state.ckpt").state;
    resume_from = &resumed;
    std::cout << "resuming from step " << resumed.global_step << "\n";
  }
  const auto state = mvd::train(cfg.stage2, setup, out, resume_from);
  std::cout << "stage 2 done: " << state.global_step << " steps, last loss "
            << (state.loss_history.empty() ? 0.0 : state.loss_history.back()) << "\n";
  finish(manifest,
         {resolved, out / "denoiser.ckpt", out / "train_state.ckpt", out / "losses.csv"}, out);
  return 0;
}

int run_sample_views(const CommonOpts& o, const std::string& ckpt_path,
                     const std::string& image_path, int n_views, CLI::Option* seed_opt,
                     std::uint64_t seed) {
  const auto cfg = load_config(o);
  const fs::path out = resolve_out(o, cfg, "samples");
  auto manifest = mvd::start_manifest("sample-views", cfg.to_json());
  const fs::path resolved = write_resolved(cfg, out);

  const auto ckpt = mvd::load_checkpoint(ckpt_path);
  mvd::MultiViewUNet net(ckpt.model_config, ckpt.model_params);
  const mvd::EmbeddingEncoder encoder(ckpt.encoder_params);
  // The reference image contributes its embedding and nothing else.
  const torch::Tensor embedding = encoder.encode(mvd::read_ppm(image_path));

  auto opts = cfg.sampler;
  opts.c_lat = ckpt.model_config.c_lat;
  opts.latent_hw = ckpt.model_config.latent_hw;
  opts.pool_factor = ckpt.codec.pool_factor;
  if (seed_opt->count() == 0) seed = mvd::derive_seed(cfg.seed, "sample");

  const auto rels = ring_relative_poses(n_views);
  const auto schedule = ckpt.schedule();
  const auto images = mvd::sample_views(net, embedding, rels, schedule, opts, seed);

  std::vector<fs::path> artifacts = {resolved};
  for (size_t i = 0; i < images.size(); ++i) {
    const fs::path p = out / ("view_" + std::to_string(i) + ".ppm");
    mvd::write_ppm(p, images[i]);
    artifacts.push_back(p);
  }
  const fs::path grid = out / "samples_grid.ppm";
  mvd::write_ppm(grid, mvd::tile_grid(images, static_cast<int>(images.size())));
  artifacts.push_back(grid);
  std::cout << "sampled " << images.size() << " views (seed " << seed << ")\n";
  finish(manifest, artifacts, out);
  return 0;
}

int run_distill(const CommonOpts& o, const std::string& ckpt_path,
                const std::string& image_path) {
  const auto cfg = load_config(o);
  const fs::path out = resolve_out(o, cfg, "distill");
  auto manifest = mvd::start_manifest("distill", cfg.to_json());
  const fs::path resolved = write_resolved(cfg, out);

  const auto ckpt = mvd::load_checkpoint(ckpt_path);
  mvd::MultiViewUNet net(ckpt.model_config, ckpt.model_params);
  const mvd::EmbeddingEncoder encoder(ckpt.encoder_params);
  // Embedding-only conditioning: pixels never reach the distillation loop.
  const torch::Tensor embedding = encoder.encode(mvd::read_ppm(image_path));

  auto dc = cfg.distill;
  mvd::check(dc.render_resolution == ckpt.model_config.latent_hw * ckpt.codec.pool_factor,
             "distill.render_resolution does not match the checkpoint's latent geometry");
  const auto schedule = ckpt.schedule();
  const auto field =
      mvd::distill(net, schedule, embedding, dc, mvd::FieldConfig{}, ckpt.codec.pool_factor, out);

  // Qualitative check: a fixed six-view ring of the distilled field.
  std::vector<torch::Tensor> views;
  {
    torch::NoGradGuard no_grad;
    mvd::RenderOptions ro;
    ro.resolution = dc.render_resolution;
    ro.samples_per_ray = dc.samples_per_ray;
    ro.shading = mvd::Shading::kLambertianPointLight;
    ro.stratified = false;
    for (const auto& pose : mvd::fixed_view_set(6)) {
      views.push_back(mvd::render(field, pose, ro).rgb);
    }
  }
  const fs::path grid = out / "distilled_views.ppm";
  mvd::write_ppm(grid, mvd::tile_grid(views, 6));
  std::cout << "distilled field over " << dc.steps << " steps (hash "
            << field.param_hash().substr(0, 12) << ")\n";
  finish(manifest, {resolved, out / "field.ckpt", out / "distill_log.csv", grid}, out);
  return 0;
}

int run_render_turntable(const CommonOpts& o, const std::string& field_path, int frames,
                         int resolution, int samples) {
  const auto cfg = load_config(o);
  const fs::path out = resolve_out(o, cfg, "turntable");
  auto manifest = mvd::start_manifest("render-turntable", cfg.to_json());
  const fs::path resolved = write_resolved(cfg, out);

  const auto field = mvd::load_field(field_path);
  mvd::RenderOptions ro;
  ro.resolution = resolution;
  ro.samples_per_ray = samples;
  ro.shading = mvd::Shading::kLambertianPointLight;
  ro.stratified = false;

  torch::NoGradGuard no_grad;
  fs::create_directories(out / "frames");
  std::vector<fs::path> artifacts = {resolved};
  std::vector<torch::Tensor> keyframes;
  for (int k = 0; k < frames; ++k) {
    const auto pose =
        mvd::CameraPose::from_degrees(30.0, 360.0 * k / frames, mvd::kCameraDistance);
    const auto rgb = mvd::render(field, pose, ro).rgb;
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03d.ppm", k);
    const fs::path p = out / "frames" / name;
    mvd::write_ppm(p, rgb);
    artifacts.push_back(p);
    if (frames < 6 || k % ((frames + 5) / 6) == 0) keyframes.push_back(rgb);
  }
  const fs::path grid = out / "turntable_grid.ppm";
  mvd::write_ppm(grid, mvd::tile_grid(keyframes, static_cast<int>(keyframes.size())));
  artifacts.push_back(grid);
  std::cout << "rendered " << frames << " frames at " << resolution << "px\n";
  finish(manifest, artifacts, out);
  return 0;
}

int run_eval(const CommonOpts& o, const std::string& suite, const std::string& thresholds_path,
             const std::string& dataset_dir, const std::string& ckpt_path) {
  const auto cfg = load_config(o);
  const fs::path out = resolve_out(o, cfg, ("eval_" + suite).c_str());
  auto manifest = mvd::start_manifest("eval-" + suite, cfg.to_json());
  const fs::path resolved = write_resolved(cfg, out);

  mvd::EvalReport report;
  if (suite == "units") {
    report = mvd::eval_units();
  } else if (suite == "oracle") {
    report = mvd::eval_oracle(cfg.oracle, out);
  } else {
    mvd::check(!dataset_dir.empty() && !ckpt_path.empty(),
               "eval --suite ablation needs --dataset and --ckpt");
    const auto dataset = mvd::load_dataset(dataset_dir);
    const auto base = mvd::load_checkpoint(ckpt_path);
    const mvd::EmbeddingEncoder encoder(base.encoder_params);
    mvd::AblationConfig ac;
    ac.stage2 = mvd::TrainConfig::stage2_defaults(cfg.ablation.train_steps);
    ac.stage2.batch_objects = cfg.stage2.batch_objects;
    ac.stage2.seed = mvd::derive_seed(cfg.seed, "ablation-train");
    ac.sampler = cfg.sampler;
    ac.sampler.steps = static_cast<int>(cfg.ablation.sampler_steps);
    ac.sampler.scale = cfg.ablation.sampler_scale;
    ac.sample_views = cfg.ablation.sample_views;
    ac.eval_objects = cfg.ablation.eval_objects;
    ac.seed = mvd::derive_seed(cfg.seed, "ablation");
    report = mvd::run_ablation_ema(dataset, encoder, base, ac, out);
  }
  if (!thresholds_path.empty()) {
    mvd::apply_thresholds(report, mvd::load_thresholds(thresholds_path));
  }

  const fs::path report_path = out / ("report_" + suite + ".json");
  report.save(report_path);
  int failed = 0;
  for (const auto& c : report.checks) {
    if (!c.passed) {
      ++failed;
      std::cout << "FAILED " << c.threshold.id << ": " << c.threshold.metric << " = " << c.value
                << " (want " << c.threshold.op << " " << c.threshold.value << ")\n";
    }
  }
  std::cout << "suite " << suite << ": " << report.metrics.size() << " metrics, "
            << report.checks.size() << " checks, " << failed << " failed\n";
  finish(manifest, {resolved, report_path}, out);
  return failed == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"multi-view diffusion distillation pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mvd::code_version());
  int rc = 0;

  CommonOpts ds_o;
  auto* ds = app.add_subcommand("build-dataset", "Generate the synthetic multi-view dataset");
  add_common(ds, ds_o);
  ds->callback([&] { rc = run_build_dataset(ds_o); });

  CommonOpts t1_o;
  std::string t1_dataset;
  bool t1_resume = false;
  auto* t1 = app.add_subcommand("train-stage1", "Train the denoiser on noisy target views");
  add_common(t1, t1_o);
  t1->add_option("--dataset", t1_dataset, "Dataset directory (from build-dataset)")
      ->required()
      ->check(CLI::ExistingDirectory);
  t1->add_flag("--resume", t1_resume, "Continue from this run's train_state.ckpt if present");
  t1->callback([&] { rc = run_train_stage1(t1_o, t1_dataset, t1_resume); });

  CommonOpts t2_o;
  std::string t2_dataset, t2_init;
  bool t2_resume = false;
  auto* t2 = app.add_subcommand(
      "train-stage2", "Fine-tune with the noise-free reference slot joined to the sequence");
  add_common(t2, t2_o);
  t2->add_option("--dataset", t2_dataset, "Dataset directory (from build-dataset)")
      ->required()
      ->check(CLI::ExistingDirectory);
  t2->add_option("--init", t2_init, "Stage-1 checkpoint (denoiser.ckpt)")
      ->required()
      ->check(CLI::ExistingFile);
  t2->add_flag("--resume", t2_resume, "Continue from this run's train_state.ckpt if present");
  t2->callback([&] { rc = run_train_stage2(t2_o, t2_dataset, t2_init, t2_resume); });

  CommonOpts sv_o;
  std::string sv_ckpt, sv_image;
  int sv_views = 4;
  std::uint64_t sv_seed = 0;
  auto* sv = app.add_subcommand("sample-views",
                                "Sample a ring of views conditioned on one image's embedding");
  add_common(sv, sv_o);
  sv->add_option("--ckpt", sv_ckpt, "Denoiser checkpoint")->required()->check(CLI::ExistingFile);
  sv->add_option("--image", sv_image, "Reference image (binary PPM); only its embedding is used")
      ->required()
      ->check(CLI::ExistingFile);
  sv->add_option("--views", sv_views, "Number of views on the ring")
      ->check(CLI::Range(1, 16));
  auto* sv_seed_opt = sv->add_option("--seed", sv_seed, "Sampling seed (default: derived)");
  sv->callback([&] { rc = run_sample_views(sv_o, sv_ckpt, sv_image, sv_views, sv_seed_opt, sv_seed); });

  CommonOpts di_o;
  std::string di_ckpt, di_image;
  auto* di = app.add_subcommand(
      "distill", "Distill a 3D radiance field from the denoiser via score distillation");
  add_common(di, di_o);
  di->add_option("--ckpt", di_ckpt, "Denoiser checkpoint")->required()->check(CLI::ExistingFile);
  di->add_option("--image", di_image, "Reference image (binary PPM); only its embedding is used")
      ->required()
      ->check(CLI::ExistingFile);
  di->callback([&] { rc = run_distill(di_o, di_ckpt, di_image); });

  CommonOpts tt_o;
  std::string tt_field;
  int tt_frames = 36, tt_resolution = 64, tt_samples = 48;
  auto* tt = app.add_subcommand("render-turntable", "Render an orbit of a distilled field");
  add_common(tt, tt_o);
  tt->add_option("--field", tt_field, "Field checkpoint (field.ckpt)")
      ->required()
      ->check(CLI::ExistingFile);
  tt->add_option("--frames", tt_frames, "Frames over the full orbit")->check(CLI::Range(1, 360));
  tt->add_option("--resolution", tt_resolution, "Frame resolution")->check(CLI::Range(8, 256));
  tt->add_option("--samples", tt_samples, "Samples per ray")->check(CLI::Range(2, 256));
  tt->callback([&] { rc = run_render_turntable(tt_o, tt_field, tt_frames, tt_resolution, tt_samples); });

  CommonOpts ev_o;
  std::string ev_suite, ev_thresholds, ev_dataset, ev_ckpt;
  auto* ev = app.add_subcommand("eval", "Run an evaluation suite and write its report");
  add_common(ev, ev_o);
  ev->add_option("--suite", ev_suite, "units | oracle | ablation")
      ->required()
      ->check(CLI::IsMember({"units", "oracle", "ablation"}));
  ev->add_option("--thresholds", ev_thresholds, "Threshold table JSON (default: built-in)")
      ->check(CLI::ExistingFile);
  ev->add_option("--dataset", ev_dataset, "Dataset directory (ablation only)")
      ->check(CLI::ExistingDirectory);
  ev->add_option("--ckpt", ev_ckpt, "Base denoiser checkpoint (ablation only)")
      ->check(CLI::ExistingFile);
  ev->callback([&] { rc = run_eval(ev_o, ev_suite, ev_thresholds, ev_dataset, ev_ckpt); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
