#include "mvd/config.hpp"

#include <ctime>
#include <fstream>
#include <set>

#include "mvd/check.hpp"
#include "mvd/hash.hpp"
#include "mvd/rng.hpp"

#ifndef MVD_CODE_VERSION
#define MVD_CODE_VERSION "unversioned"
#endif

namespace mvd {

namespace {

// Strict section walker: every known key is type-checked, every unknown key is
// an error naming the full dotted path. Value parsing itself is delegated to
// the per-struct from_json readers after a defaults merge.
class SectionReader {
 public:
  SectionReader(const nlohmann::json* j, std::string prefix)
      : j_(j), prefix_(std::move(prefix)) {
    if (j_ != nullptr && !j_->is_object()) {
      fail("config section '" + prefix_ + "' must be a JSON object");
    }
  }

  bool has(const char* key) const { return j_ != nullptr && j_->contains(key); }

  void expect_integer(const char* key) { expect(key, "an integer", &nlohmann::json::is_number_integer); }
  void expect_number(const char* key) { expect(key, "a number", &nlohmann::json::is_number); }
  void expect_string(const char* key) { expect(key, "a string", &nlohmann::json::is_string); }
  void expect_boolean(const char* key) { expect(key, "a boolean", &nlohmann::json::is_boolean); }

  void finish() const {
    if (j_ == nullptr) return;
    for (const auto& item : j_->items()) {
      if (seen_.count(item.key()) == 0) {
        fail("unknown config key '" + prefix_ + item.key() + "'");
      }
    }
  }

 private:
  template <typename Pred>
  void expect(const char* key, const char* want, Pred pred) {
    seen_.insert(key);
    if (!has(key)) return;
    if (!((*j_)[key].*pred)()) {
      fail("config key '" + prefix_ + key + "' must be " + want);
    }
  }

  const nlohmann::json* j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

const nlohmann::json* section(const nlohmann::json& j, const char* name) {
  return j.contains(name) ? &j.at(name) : nullptr;
}

nlohmann::json merged_with_defaults(nlohmann::json defaults, const nlohmann::json* file) {
  if (file != nullptr) defaults.update(*file);
  return defaults;
}

TrainConfig read_train_section(const nlohmann::json* j, const char* name,
                               TrainConfig defaults, TrainConfig::Stage stage,
                               std::uint64_t global_seed) {
  SectionReader r(j, std::string(name) + ".");
  r.expect_string("stage");
  r.expect_integer("steps");
  r.expect_integer("batch_objects");
  r.expect_number("lr_peak");
  r.expect_string("lr_schedule");
  r.expect_integer("warmup_steps");
  r.expect_number("adam_beta1");
  r.expect_number("adam_beta2");
  r.expect_number("weight_decay");
  r.expect_number("branch_p_single");
  r.expect_number("cond_dropout");
  r.expect_integer("grad_accum");
  r.expect_integer("seed");
  r.expect_integer("checkpoint_every");
  r.expect_integer("log_every");
  r.finish();
  defaults.stage = stage;
  // The stage is owned by the section name; an explicit key must agree.
  const std::string want = to_json(defaults)["stage"];
  if (r.has("stage") && (*j)["stage"] != want) {
    fail(std::string(name) + ".stage must be '" + want + "'");
  }
  auto c = train_config_from_json(merged_with_defaults(to_json(defaults), j));
  c.stage = stage;
  if (!r.has("seed")) c.seed = derive_seed(global_seed, name);
  return c;
}

}  // namespace

nlohmann::json to_json(const ScheduleParams& c) {
  return {{"T", c.T}, {"beta_min", c.beta_min}, {"beta_max", c.beta_max}};
}

ScheduleParams schedule_params_from_json(const nlohmann::json& j) {
  ScheduleParams c;
  c.T = j.value("T", c.T);
  c.beta_min = j.value("beta_min", c.beta_min);
  c.beta_max = j.value("beta_max", c.beta_max);
  return c;
}

nlohmann::json to_json(const DatasetParams& c) {
  return {{"n_objects", c.n_objects}, {"seed", c.seed}, {"resolution", c.resolution}};
}

DatasetParams dataset_params_from_json(const nlohmann::json& j) {
  DatasetParams c;
  c.n_objects = j.value("n_objects", c.n_objects);
  c.seed = j.value("seed", c.seed);
  c.resolution = j.value("resolution", c.resolution);
  return c;
}

nlohmann::json to_json(const DistillConfig& c) {
  // The pinned-pose / deterministic-shading evaluation hooks are deliberately
  // not file-configurable; they exist for the oracle evaluation path only.
  return {{"steps", c.steps},
          {"lr", c.lr},
          {"guidance_scale", c.guidance_scale},
          {"lambda_e", c.lambda_e},
          {"t_max_start", c.t_max_start},
          {"t_max_end", c.t_max_end},
          {"t_min", c.t_min},
          {"anneal_steps", c.anneal_steps},
          {"views_per_step", c.views_per_step},
          {"render_resolution", c.render_resolution},
          {"samples_per_ray", c.samples_per_ray},
          {"seed", c.seed},
          {"use_reference_slot", c.use_reference_slot}};
}

DistillConfig distill_config_from_json(const nlohmann::json& j) {
  DistillConfig c;
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.guidance_scale = j.value("guidance_scale", c.guidance_scale);
  c.lambda_e = j.value("lambda_e", c.lambda_e);
  c.t_max_start = j.value("t_max_start", c.t_max_start);
  c.t_max_end = j.value("t_max_end", c.t_max_end);
  c.t_min = j.value("t_min", c.t_min);
  c.anneal_steps = j.value("anneal_steps", c.anneal_steps);
  c.views_per_step = j.value("views_per_step", c.views_per_step);
  c.render_resolution = j.value("render_resolution", c.render_resolution);
  c.samples_per_ray = j.value("samples_per_ray", c.samples_per_ray);
  c.seed = j.value("seed", c.seed);
  c.use_reference_slot = j.value("use_reference_slot", c.use_reference_slot);
  c.validate();
  return c;
}

nlohmann::json to_json(const SamplerOptions& c) {
  // Latent geometry (c_lat, latent_hw, pool_factor) follows the checkpoint at
  // run time and is not part of the experiment file.
  return {{"steps", c.steps},
          {"scale", c.scale},
          {"deterministic", c.deterministic},
          {"use_reference_slot", c.use_reference_slot}};
}

SamplerOptions sampler_options_from_json(const nlohmann::json& j) {
  SamplerOptions c;
  c.steps = j.value("steps", c.steps);
  c.scale = j.value("scale", c.scale);
  c.deterministic = j.value("deterministic", c.deterministic);
  c.use_reference_slot = j.value("use_reference_slot", c.use_reference_slot);
  return c;
}

nlohmann::json to_json(const OracleEvalConfig& c) {
  return {{"steps", c.steps},
          {"resolution", c.resolution},
          {"samples_per_ray", c.samples_per_ray},
          {"pool_factor", c.pool_factor},
          {"schedule_T", c.schedule_T},
          {"views", c.views},
          {"lr", c.lr},
          {"anneal_steps", c.anneal_steps},
          {"seed", c.seed}};
}

OracleEvalConfig oracle_eval_config_from_json(const nlohmann::json& j) {
  OracleEvalConfig c;
  c.steps = j.value("steps", c.steps);
  c.resolution = j.value("resolution", c.resolution);
  c.samples_per_ray = j.value("samples_per_ray", c.samples_per_ray);
  c.pool_factor = j.value("pool_factor", c.pool_factor);
  c.schedule_T = j.value("schedule_T", c.schedule_T);
  c.views = j.value("views", c.views);
  c.lr = j.value("lr", c.lr);
  c.anneal_steps = j.value("anneal_steps", c.anneal_steps);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

nlohmann::json to_json(const AblationParams& c) {
  return {{"train_steps", c.train_steps},
          {"sample_views", c.sample_views},
          {"eval_objects", c.eval_objects},
          {"sampler_steps", c.sampler_steps},
          {"sampler_scale", c.sampler_scale}};
}

AblationParams ablation_params_from_json(const nlohmann::json& j) {
  AblationParams c;
  c.train_steps = j.value("train_steps", c.train_steps);
  c.sample_views = j.value("sample_views", c.sample_views);
  c.eval_objects = j.value("eval_objects", c.eval_objects);
  c.sampler_steps = j.value("sampler_steps", c.sampler_steps);
  c.sampler_scale = j.value("sampler_scale", c.sampler_scale);
  return c;
}

void ExperimentConfig::validate() const {
  check(schema_version == 1, "unsupported schema_version");
  check(schedule.T >= 1, "schedule.T must be >= 1");
  check(schedule.beta_min > 0.0 && schedule.beta_min < schedule.beta_max &&
            schedule.beta_max < 1.0,
        "need 0 < schedule.beta_min < schedule.beta_max < 1");
  check(dataset.n_objects >= 1, "dataset.n_objects must be >= 1");
  check(dataset.resolution == 32 || dataset.resolution == 64 || dataset.resolution == 128,
        "dataset.resolution must be one of {32, 64, 128}");
  denoiser.validate();
  check(codec.pool_factor == 1 || codec.pool_factor == 2 || codec.pool_factor == 4,
        "codec.pool_factor must be one of {1, 2, 4}");
  check(codec.c_lat == denoiser.c_lat, "codec.c_lat must match denoiser.c_lat");
  check(codec.d_emb == denoiser.d_emb, "codec.d_emb must match denoiser.d_emb");
  check(dataset.resolution == denoiser.latent_hw * codec.pool_factor,
        "dataset.resolution must equal denoiser.latent_hw * codec.pool_factor");
  check(stage1.stage == TrainConfig::Stage::kStage1, "stage1 section must train stage 1");
  check(stage2.stage == TrainConfig::Stage::kStage2, "stage2 section must train stage 2");
  stage1.validate();
  stage2.validate();
  distill.validate();
  check(distill.render_resolution % codec.pool_factor == 0,
        "distill.render_resolution must be divisible by codec.pool_factor");
  oracle.validate();
  check(sampler.steps >= 1, "sampler.steps must be >= 1");
  check(sampler.scale >= 0.0, "sampler.scale must be >= 0");
  check(ablation.train_steps >= 1, "ablation.train_steps must be >= 1");
  check(ablation.sample_views >= 1, "ablation.sample_views must be >= 1");
  check(ablation.eval_objects >= 1, "ablation.eval_objects must be >= 1");
  check(ablation.sampler_steps >= 1, "ablation.sampler_steps must be >= 1");
  check(ablation.sampler_scale >= 0.0, "ablation.sampler_scale must be >= 0");
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"schema_version", schema_version},
          {"seed", seed},
          {"out_root", out_root.string()},
          {"dataset", mvd::to_json(dataset)},
          {"schedule", mvd::to_json(schedule)},
          {"codec", mvd::to_json(codec)},
          {"denoiser", mvd::to_json(denoiser)},
          {"stage1", mvd::to_json(stage1)},
          {"stage2", mvd::to_json(stage2)},
          {"distill", mvd::to_json(distill)},
          {"sampler", mvd::to_json(sampler)},
          {"oracle", mvd::to_json(oracle)},
          {"ablation", mvd::to_json(ablation)}};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  check(j.is_object(), "experiment config must be a JSON object");
  SectionReader top(&j, "");
  top.expect_integer("schema_version");
  top.expect_integer("seed");
  top.expect_string("out_root");
  for (const char* name : {"dataset", "schedule", "codec", "denoiser", "stage1", "stage2",
                           "distill", "sampler", "oracle", "ablation"}) {
    // Section presence/type is checked by each SectionReader below; mark the
    // key as known here so finish() only flags genuinely unknown names.
    if (j.contains(name)) {
      check(j.at(name).is_object(),
            std::string("config section '") + name + "' must be a JSON object");
    }
  }

  ExperimentConfig c;
  c.schema_version = j.value("schema_version", c.schema_version);
  c.seed = j.value("seed", c.seed);
  c.out_root = j.value("out_root", c.out_root.string());

  {
    const auto* s = section(j, "dataset");
    SectionReader r(s, "dataset.");
    r.expect_integer("n_objects");
    r.expect_integer("seed");
    r.expect_integer("resolution");
    r.finish();
    c.dataset = dataset_params_from_json(merged_with_defaults(to_json(c.dataset), s));
    if (!r.has("seed")) c.dataset.seed = derive_seed(c.seed, "dataset");
  }
  {
    const auto* s = section(j, "schedule");
    SectionReader r(s, "schedule.");
    r.expect_integer("T");
    r.expect_number("beta_min");
    r.expect_number("beta_max");
    r.finish();
    c.schedule = schedule_params_from_json(merged_with_defaults(to_json(c.schedule), s));
  }
  {
    const auto* s = section(j, "codec");
    SectionReader r(s, "codec.");
    r.expect_integer("pool_factor");
    r.expect_integer("c_lat");
    r.expect_integer("d_emb");
    r.expect_integer("embed_seed");
    r.finish();
    // embed_seed is a protocol constant (the frozen encoder); it does not fan
    // out from the global seed.
    c.codec = codec_config_from_json(merged_with_defaults(to_json(c.codec), s));
  }
  {
    const auto* s = section(j, "denoiser");
    SectionReader r(s, "denoiser.");
    r.expect_integer("base_channels");
    r.expect_integer("depth");
    r.expect_integer("attn_heads");
    r.expect_integer("time_embed_dim");
    r.expect_integer("camera_embed_dim");
    r.expect_integer("max_views");
    r.expect_integer("c_lat");
    r.expect_integer("d_emb");
    r.expect_integer("latent_hw");
    r.expect_integer("attn_max_hw");
    r.expect_integer("emb_tokens");
    r.expect_string("attention_mode");
    r.finish();
    c.denoiser = denoiser_config_from_json(merged_with_defaults(to_json(c.denoiser), s));
  }
  c.stage1 = read_train_section(section(j, "stage1"), "stage1", TrainConfig::stage1_defaults(),
                                TrainConfig::Stage::kStage1, c.seed);
  c.stage2 = read_train_section(section(j, "stage2"), "stage2", TrainConfig::stage2_defaults(),
                                TrainConfig::Stage::kStage2, c.seed);
  {
    const auto* s = section(j, "distill");
    SectionReader r(s, "distill.");
    r.expect_integer("steps");
    r.expect_number("lr");
    r.expect_number("guidance_scale");
    r.expect_number("lambda_e");
    r.expect_number("t_max_start");
    r.expect_number("t_max_end");
    r.expect_number("t_min");
    r.expect_integer("anneal_steps");
    r.expect_integer("views_per_step");
    r.expect_integer("render_resolution");
    r.expect_integer("samples_per_ray");
    r.expect_integer("seed");
    r.expect_boolean("use_reference_slot");
    r.finish();
    c.distill = distill_config_from_json(merged_with_defaults(to_json(c.distill), s));
    if (!r.has("seed")) c.distill.seed = derive_seed(c.seed, "distill");
  }
  {
    const auto* s = section(j, "sampler");
    SectionReader r(s, "sampler.");
    r.expect_integer("steps");
    r.expect_number("scale");
    r.expect_boolean("deterministic");
    r.expect_boolean("use_reference_slot");
    r.finish();
    c.sampler = sampler_options_from_json(merged_with_defaults(to_json(c.sampler), s));
  }
  {
    const auto* s = section(j, "oracle");
    SectionReader r(s, "oracle.");
    r.expect_integer("steps");
    r.expect_integer("resolution");
    r.expect_integer("samples_per_ray");
    r.expect_integer("pool_factor");
    r.expect_integer("schedule_T");
    r.expect_integer("views");
    r.expect_number("lr");
    r.expect_integer("anneal_steps");
    r.expect_integer("seed");
    r.finish();
    c.oracle = oracle_eval_config_from_json(merged_with_defaults(to_json(c.oracle), s));
    if (!r.has("seed")) c.oracle.seed = derive_seed(c.seed, "oracle");
  }
  {
    const auto* s = section(j, "ablation");
    SectionReader r(s, "ablation.");
    r.expect_integer("train_steps");
    r.expect_integer("sample_views");
    r.expect_integer("eval_objects");
    r.expect_integer("sampler_steps");
    r.expect_number("sampler_scale");
    r.finish();
    c.ablation = ablation_params_from_json(merged_with_defaults(to_json(c.ablation), s));
  }

  // Unknown top-level keys: anything not consumed above.
  static const std::set<std::string> kTopKeys = {
      "schema_version", "seed",    "out_root", "dataset", "schedule", "codec", "denoiser",
      "stage1",         "stage2",  "distill",  "sampler", "oracle",   "ablation"};
  for (const auto& item : j.items()) {
    if (kTopKeys.count(item.key()) == 0) {
      fail("unknown config key '" + item.key() + "'");
    }
  }

  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_from_json(j);
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  check(eq != std::string::npos && eq > 0, "override must look like section.key=value");
  std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  for (auto& ch : key) {
    if (ch == '.') ch = '/';
  }
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    parsed = value;  // bare strings need no quoting on the command line
  }
  doc[nlohmann::json::json_pointer("/" + key)] = parsed;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json arts = nlohmann::json::array();
  for (const auto& a : artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}});
  return {{"command", command},
          {"config_hash", config_hash},
          {"code_version", code_version},
          {"started_utc", started_utc},
          {"finished_utc", finished_utc},
          {"artifacts", arts}};
}

std::string code_version() { return MVD_CODE_VERSION; }

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunManifest start_manifest(const std::string& command, const nlohmann::json& resolved_config) {
  RunManifest m;
  m.command = command;
  m.config_hash = sha256_hex(resolved_config.dump());
  m.code_version = code_version();
  m.started_utc = utc_timestamp();
  return m;
}

void finish_manifest(RunManifest& manifest, const std::vector<std::filesystem::path>& artifacts,
                     const std::filesystem::path& manifest_path) {
  for (const auto& p : artifacts) {
    check(std::filesystem::exists(p), "manifest artifact missing: " + p.string());
    manifest.artifacts.push_back({p.string(), sha256_file(p)});
  }
  manifest.finished_utc = utc_timestamp();
  if (manifest_path.has_parent_path()) {
    std::filesystem::create_directories(manifest_path.parent_path());
  }
  std::ofstream out(manifest_path, std::ios::trunc);
  check(out.good(), "cannot write manifest: " + manifest_path.string());
  out << manifest.to_json().dump(2) << "\n";
}

}  // namespace mvd
