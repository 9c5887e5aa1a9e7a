#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvd/batches.hpp"
#include "mvd/checkpoint.hpp"
#include "mvd/codec.hpp"
#include "mvd/denoiser.hpp"
#include "mvd/rng.hpp"
#include "mvd/schedule.hpp"
#include "mvd/synth.hpp"

namespace mvd {

struct TrainConfig {
  enum class Stage { kStage1, kStage2 };
  enum class LrSchedule { kConstantWithWarmup, kLinearPeak };

  Stage stage = Stage::kStage1;
  std::int64_t steps = 2000;
  int batch_objects = 2;  // object sequences averaged per optimizer step
  double lr_peak = 1e-4;
  LrSchedule lr_schedule = LrSchedule::kConstantWithWarmup;
  std::int64_t warmup_steps = 200;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double weight_decay = 1e-2;
  double branch_p_single = 0.3;
  double cond_dropout = 0.1;
  int grad_accum = 1;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0 = final checkpoint only
  std::int64_t log_every = 50;

  // Desk-scale defaults; `steps` scales the full-scale recipe down with the
  // warmup pinned at steps/10 (the full-scale configuration uses a 10k-step
  // warmup at comparable proportion).
  static TrainConfig stage1_defaults(std::int64_t steps = 2000);
  // Fine-tuning stage: lower peak rate on a ramp-then-decay schedule.
  static TrainConfig stage2_defaults(std::int64_t steps = 2000);

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Learning rate at a 1-based optimizer-step index; step 0 is the pre-training
// value. constant_with_warmup: linear 0 -> lr_peak over warmup_steps, then
// flat. linear_peak: same ramp, then linear decay to 0 at `steps`.
double lr_at(const TrainConfig& config, std::int64_t step);

// Decoupled-weight-decay Adam over a named parameter map. Iteration order is
// the map's name order, so updates are bit-reproducible; moments are plain
// tensors that checkpoint verbatim.
class AdamW {
 public:
  AdamW(std::map<std::string, torch::Tensor>& params, double beta1, double beta2,
        double weight_decay, double eps = 1e-8);

  void zero_grad();
  void step(double lr);  // skips parameters with no gradient

  std::map<std::string, torch::Tensor>& exp_avg() { return m_; }
  std::map<std::string, torch::Tensor>& exp_avg_sq() { return v_; }
  std::int64_t steps_taken() const { return t_; }
  // Checkpoint restore; moment names must match the parameter map.
  void load_state(std::map<std::string, torch::Tensor> m,
                  std::map<std::string, torch::Tensor> v, std::int64_t t);

 private:
  std::map<std::string, torch::Tensor>& params_;
  std::map<std::string, torch::Tensor> m_, v_;
  double beta1_, beta2_, weight_decay_, eps_;
  std::int64_t t_ = 0;
};

// Collaborators each batch draws on; batch content is a pure function of
// (seed-derived rng, these inputs).
struct BatchInputs {
  const std::vector<ObjectRecord>* dataset = nullptr;
  const EmbeddingEncoder* encoder = nullptr;
  std::int64_t T = 1000;
  int pool_factor = 4;
  double branch_p_single = 0.3;
  double cond_dropout = 0.1;
};

// Stage 1: noisy targets conditioned on a random reference view's embedding.
// Single-view branch: one other random view; multi-view branch: one of the
// four orthogonal fixed-view quadruples. All targets share one timestep;
// poses are relative to the reference view.
DiffusionBatch make_stage1_batch(const BatchInputs& in, Rng& rng);

// Stage 2: the same branch logic with the reference view's noise-free latent
// prepended at slot 0 (explicit multi-view attention on both branches).
EMABatch make_stage2_batch(const BatchInputs& in, Rng& rng);

constexpr int kLossHistoryCap = 2048;

// Everything needed to resume: parameters, optimizer moments, step counter,
// and the master seed (batch i depends only on the seed and i, so no other
// rng state exists to save). loss_history keeps the most recent losses.
struct TrainState {
  DenoiserConfig model_config;
  std::map<std::string, torch::Tensor> params;
  std::map<std::string, torch::Tensor> opt_m, opt_v;
  std::int64_t global_step = 0;
  std::uint64_t seed = 0;
  std::vector<double> loss_history;
};

struct TrainCheckpoint {
  DenoiserCheckpoint base;
  TrainConfig train_config;
  TrainState state;  // params mirror base.model_params
};

void save_train_checkpoint(const TrainCheckpoint& ckpt, const std::filesystem::path& path);
TrainCheckpoint load_train_checkpoint(const std::filesystem::path& path);

struct TrainSetup {
  const std::vector<ObjectRecord>* dataset = nullptr;
  const EmbeddingEncoder* encoder = nullptr;
  NoiseSchedule schedule;
  DenoiserConfig model;
  CodecConfig codec;
  // Initial parameters: required for stage 2 (the stage-1 checkpoint); stage 1
  // falls back to a fresh seed-derived initialization when empty.
  std::map<std::string, torch::Tensor> init_params;
};

using StepHook = std::function<void(std::int64_t step, double loss, double lr)>;

// Runs the configured stage. Writes train_state.ckpt + denoiser.ckpt + a
// losses.csv into out_dir (pass an empty path to skip all file output).
// `resume` continues an interrupted run bitwise. A non-finite loss saves a
// diagnostic snapshot (when out_dir is set) and throws std::runtime_error.
TrainState train(const TrainConfig& config, const TrainSetup& setup,
                 const std::filesystem::path& out_dir, const TrainState* resume = nullptr,
                 const StepHook& hook = {});

}  // namespace mvd
