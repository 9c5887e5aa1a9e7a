#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvd/checkpoint.hpp"
#include "mvd/distill.hpp"
#include "mvd/eval.hpp"
#include "mvd/sampler.hpp"
#include "mvd/synth.hpp"
#include "mvd/train.hpp"

namespace mvd {

struct ScheduleParams {
  std::int64_t T = 1000;
  double beta_min = 1e-4;
  double beta_max = 2e-2;

  NoiseSchedule build() const { return make_schedule(T, beta_min, beta_max); }
};

// Attention-ablation budget for the eval subcommand.
struct AblationParams {
  std::int64_t train_steps = 300;
  int sample_views = 4;
  int eval_objects = 2;
  std::int64_t sampler_steps = 50;
  double sampler_scale = 10.0;
};

// One file describing a whole experiment. Parsing is strict: unknown keys and
// wrongly typed values are errors naming the offending key. Every section is
// optional; omitted keys take the defaults below. Section seeds omitted in the
// file are derived from the global seed, one substream per section.
struct ExperimentConfig {
  int schema_version = 1;
  std::uint64_t seed = 0;
  std::filesystem::path out_root = "runs";
  DatasetParams dataset;
  ScheduleParams schedule;
  CodecConfig codec;
  DenoiserConfig denoiser;
  TrainConfig stage1 = TrainConfig::stage1_defaults();
  TrainConfig stage2 = TrainConfig::stage2_defaults();
  DistillConfig distill;
  SamplerOptions sampler;
  OracleEvalConfig oracle;
  AblationParams ablation;

  // Cross-section consistency (latent sizes, embedding widths, stages) plus
  // each section's own validation.
  void validate() const;
  // Fully resolved round trip: what a run manifest hashes.
  nlohmann::json to_json() const;
};

// Lenient single-section round trips (missing keys take defaults). The strict
// key/type policing lives in experiment_from_json.
nlohmann::json to_json(const ScheduleParams& c);
ScheduleParams schedule_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatasetParams& c);
DatasetParams dataset_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DistillConfig& c);  // evaluation hooks excluded
DistillConfig distill_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SamplerOptions& c);  // latent geometry excluded
SamplerOptions sampler_options_from_json(const nlohmann::json& j);
nlohmann::json to_json(const OracleEvalConfig& c);
OracleEvalConfig oracle_eval_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AblationParams& c);
AblationParams ablation_params_from_json(const nlohmann::json& j);

ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Applies one "section.key=value" override onto a raw config document; the
// value is parsed as JSON, falling back to a plain string. The merged document
// still goes through the strict parser, so typos surface as unknown keys.
void apply_override(nlohmann::json& doc, const std::string& assignment);

struct ArtifactRecord {
  std::string path;
  std::string sha256;
};

// Provenance sidecar written next to every command's outputs.
struct RunManifest {
  std::string command;
  std::string config_hash;  // sha256 of the resolved config document
  std::string code_version;
  std::string started_utc;
  std::string finished_utc;
  std::vector<ArtifactRecord> artifacts;

  nlohmann::json to_json() const;
};

std::string utc_timestamp();

// Short git revision the library was built from; "unversioned" outside git.
std::string code_version();

// Stamps command, config hash, code version, and the start time.
RunManifest start_manifest(const std::string& command, const nlohmann::json& resolved_config);
// Hashes each existing artifact file, stamps the finish time, writes the
// manifest as JSON.
void finish_manifest(RunManifest& manifest, const std::vector<std::filesystem::path>& artifacts,
                     const std::filesystem::path& manifest_path);

}  // namespace mvd
