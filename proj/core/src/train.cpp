#include "mvd/train.hpp"

#include <cmath>
#include <fstream>

#include "mvd/check.hpp"
#include "mvd/losses.hpp"
#include "mvd/tensor_store.hpp"

namespace mvd {
namespace {

constexpr int kSchemaVersion = 1;

std::string stage_to_string(TrainConfig::Stage s) {
  return s == TrainConfig::Stage::kStage1 ? "stage1" : "stage2";
}

TrainConfig::Stage stage_from_string(const std::string& s) {
  if (s == "stage1") return TrainConfig::Stage::kStage1;
  if (s == "stage2") return TrainConfig::Stage::kStage2;
  fail("unknown train stage: " + s);
}

std::string lr_schedule_to_string(TrainConfig::LrSchedule s) {
  return s == TrainConfig::LrSchedule::kConstantWithWarmup ? "constant_with_warmup"
                                                           : "linear_peak";
}

TrainConfig::LrSchedule lr_schedule_from_string(const std::string& s) {
  if (s == "constant_with_warmup") return TrainConfig::LrSchedule::kConstantWithWarmup;
  if (s == "linear_peak") return TrainConfig::LrSchedule::kLinearPeak;
  fail("unknown lr_schedule: " + s);
}

void put_all(TensorStore& store, const std::string& prefix,
             const std::map<std::string, torch::Tensor>& params) {
  for (const auto& [name, t] : params) store.put(prefix + name, t.detach());
}

std::map<std::string, torch::Tensor> collect(const TensorStore& store,
                                             const std::string& prefix) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& name : store.names()) {
    if (name.rfind(prefix, 0) == 0) out[name.substr(prefix.size())] = store.get(name);
  }
  return out;
}

// Common front half of both batch builders: object, reference view, branch,
// target views, shared timestep. Draw order is part of the determinism
// contract — batches depend only on the rng stream.
struct BatchDraw {
  const ObjectRecord* object = nullptr;
  const RenderedView* reference = nullptr;
  std::vector<const RenderedView*> targets;
};

BatchDraw draw_views(const BatchInputs& in, Rng& rng) {
  check(in.dataset && !in.dataset->empty(), "batch needs a nonempty dataset");
  check(in.encoder, "batch needs the embedding encoder");
  BatchDraw d;
  d.object = &(*in.dataset)[uniform_int(rng, 0, std::ssize(*in.dataset) - 1)];
  const auto& rnd = d.object->random_views;
  const auto& fix = d.object->fixed_views;
  check(rnd.size() >= 2, "object needs at least two random views");
  check(fix.size() % 4 == 0 && !fix.empty(), "fixed views must come in orthogonal quadruples");
  const std::int64_t ref_idx = uniform_int(rng, 0, std::ssize(rnd) - 1);
  d.reference = &rnd[ref_idx];
  if (uniform01(rng) < in.branch_p_single) {
    // Single-view branch: one other random perspective.
    std::int64_t t_idx = uniform_int(rng, 0, std::ssize(rnd) - 2);
    if (t_idx >= ref_idx) ++t_idx;
    d.targets.push_back(&rnd[t_idx]);
  } else {
    // Multi-view branch: one of the orthogonal fixed-view quadruples.
    const std::int64_t stride = std::ssize(fix) / 4;
    const std::int64_t offset = uniform_int(rng, 0, stride - 1);
    for (int j = 0; j < 4; ++j) d.targets.push_back(&fix[offset + j * stride]);
  }
  return d;
}

DiffusionBatch finish_batch(const BatchInputs& in, Rng& rng, const BatchDraw& d) {
  const auto n = std::ssize(d.targets);
  // All target slots share one timestep, as at sampling time.
  const std::int64_t t = uniform_int(rng, 1, in.T);
  const bool dropped = uniform01(rng) < in.cond_dropout;
  auto tgen = at::detail::createCPUGenerator(rng());

  DiffusionBatch batch;
  std::vector<torch::Tensor> latents;
  for (const auto* view : d.targets) {
    latents.push_back(encode_latent(view->image, in.pool_factor));
    batch.condition.poses.push_back(relative_pose(d.reference->pose, view->pose));
  }
  batch.latents = torch::stack(latents);
  batch.timesteps = torch::full({n}, t, torch::kInt64);
  batch.noises = torch::randn(batch.latents.sizes(), tgen, batch.latents.options());
  if (!dropped) {
    torch::NoGradGuard no_grad;  // the embedding encoder stays frozen
    batch.condition.embedding = in.encoder->encode(d.reference->image);
  }
  return batch;
}

}  // namespace

TrainConfig TrainConfig::stage1_defaults(std::int64_t steps) {
  TrainConfig c;
  c.stage = Stage::kStage1;
  c.steps = steps;
  c.warmup_steps = steps / 10;
  c.lr_peak = 1e-4;
  c.lr_schedule = LrSchedule::kConstantWithWarmup;
  return c;
}

TrainConfig TrainConfig::stage2_defaults(std::int64_t steps) {
  TrainConfig c;
  c.stage = Stage::kStage2;
  c.steps = steps;
  c.warmup_steps = steps / 10;
  c.lr_peak = 5e-5;
  c.lr_schedule = LrSchedule::kLinearPeak;
  return c;
}

void TrainConfig::validate() const {
  check(steps >= 1, "steps must be >= 1");
  check(batch_objects >= 1, "batch_objects must be >= 1");
  check(lr_peak > 0.0, "lr_peak must be positive");
  check(warmup_steps >= 0 && warmup_steps <= steps, "warmup_steps must lie in [0, steps]");
  check(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0,
        "adam betas must lie in (0, 1)");
  check(weight_decay >= 0.0, "weight_decay must be >= 0");
  check(branch_p_single >= 0.0 && branch_p_single <= 1.0, "branch_p_single must be in [0,1]");
  check(cond_dropout >= 0.0 && cond_dropout <= 1.0, "cond_dropout must be in [0,1]");
  check(grad_accum >= 1, "grad_accum must be >= 1");
  check(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  check(log_every >= 1, "log_every must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"stage", stage_to_string(c.stage)},
          {"steps", c.steps},
          {"batch_objects", c.batch_objects},
          {"lr_peak", c.lr_peak},
          {"lr_schedule", lr_schedule_to_string(c.lr_schedule)},
          {"warmup_steps", c.warmup_steps},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"weight_decay", c.weight_decay},
          {"branch_p_single", c.branch_p_single},
          {"cond_dropout", c.cond_dropout},
          {"grad_accum", c.grad_accum},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"log_every", c.log_every}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.stage = stage_from_string(j.value("stage", std::string("stage1")));
  c.steps = j.value("steps", c.steps);
  c.batch_objects = j.value("batch_objects", c.batch_objects);
  c.lr_peak = j.value("lr_peak", c.lr_peak);
  c.lr_schedule = lr_schedule_from_string(
      j.value("lr_schedule", lr_schedule_to_string(c.lr_schedule)));
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.branch_p_single = j.value("branch_p_single", c.branch_p_single);
  c.cond_dropout = j.value("cond_dropout", c.cond_dropout);
  c.grad_accum = j.value("grad_accum", c.grad_accum);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.log_every = j.value("log_every", c.log_every);
  c.validate();
  return c;
}

double lr_at(const TrainConfig& config, std::int64_t step) {
  check(step >= 0, "step must be >= 0");
  const double ramp =
      config.warmup_steps > 0
          ? std::min(1.0, static_cast<double>(step) / static_cast<double>(config.warmup_steps))
          : 1.0;
  if (config.lr_schedule == TrainConfig::LrSchedule::kConstantWithWarmup ||
      step <= config.warmup_steps) {
    return config.lr_peak * ramp;
  }
  if (step >= config.steps) return 0.0;
  return config.lr_peak * static_cast<double>(config.steps - step) /
         static_cast<double>(config.steps - config.warmup_steps);
}

AdamW::AdamW(std::map<std::string, torch::Tensor>& params, double beta1, double beta2,
             double weight_decay, double eps)
    : params_(params), beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {
  check(!params_.empty(), "optimizer needs parameters");
  for (const auto& [name, p] : params_) {
    m_[name] = torch::zeros_like(p, p.options().requires_grad(false));
    v_[name] = torch::zeros_like(p, p.options().requires_grad(false));
  }
}

void AdamW::zero_grad() {
  for (auto& [name, p] : params_) p.mutable_grad() = torch::Tensor();
}

void AdamW::step(double lr) {
  torch::NoGradGuard no_grad;
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params_) {
    const auto& g = p.grad();
    if (!g.defined()) continue;
    auto& m = m_.at(name);
    auto& v = v_.at(name);
    m.mul_(beta1_).add_(g, 1.0 - beta1_);
    v.mul_(beta2_).addcmul_(g, g, 1.0 - beta2_);
    p.mul_(1.0 - lr * weight_decay_);  // decoupled weight decay
    auto denom = (v / bc2).sqrt_().add_(eps_);
    p.addcdiv_(m / bc1, denom, -lr);
  }
}

void AdamW::load_state(std::map<std::string, torch::Tensor> m,
                       std::map<std::string, torch::Tensor> v, std::int64_t t) {
  check(t >= 0, "optimizer step count must be >= 0");
  for (const auto& [name, p] : params_) {
    auto im = m.find(name), iv = v.find(name);
    check(im != m.end() && iv != v.end(), "missing optimizer moment for " + name);
    check(im->second.sizes() == p.sizes() && iv->second.sizes() == p.sizes(),
          "optimizer moment shape mismatch for " + name);
  }
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

DiffusionBatch make_stage1_batch(const BatchInputs& in, Rng& rng) {
  const auto d = draw_views(in, rng);
  return finish_batch(in, rng, d);
}

EMABatch make_stage2_batch(const BatchInputs& in, Rng& rng) {
  const auto d = draw_views(in, rng);
  auto targets = finish_batch(in, rng, d);
  // The reference enters noise-free: its latent exactly as the codec produced
  // it, timestep 0, zero relative pose (the EMABatch constructor enforces it).
  return EMABatch(encode_latent(d.reference->image, in.pool_factor), std::move(targets));
}

void save_train_checkpoint(const TrainCheckpoint& ckpt, const std::filesystem::path& path) {
  check(!ckpt.base.model_params.empty(), "train checkpoint has no model parameters");
  TensorStore store;
  store.meta = {{"schema_version", kSchemaVersion},
                {"kind", "train_state"},
                {"model", to_json(ckpt.base.model_config)},
                {"codec", to_json(ckpt.base.codec)},
                {"schedule", {{"T", ckpt.base.schedule().T}}},
                {"train", to_json(ckpt.train_config)},
                {"global_step", ckpt.state.global_step},
                {"seed", ckpt.state.seed}};
  put_all(store, "model.", ckpt.base.model_params);
  put_all(store, "encoder.", ckpt.base.encoder_params);
  store.put("schedule.alpha_bar", ckpt.base.alpha_bar);
  put_all(store, "opt.m.", ckpt.state.opt_m);
  put_all(store, "opt.v.", ckpt.state.opt_v);
  store.put("state.loss_history",
            torch::tensor(ckpt.state.loss_history, torch::kFloat64));
  store.save(path);
}

TrainCheckpoint load_train_checkpoint(const std::filesystem::path& path) {
  auto store = TensorStore::load(path);
  check(store.meta.value("schema_version", -1) == kSchemaVersion,
        "unsupported checkpoint schema_version");
  check(store.meta.value("kind", std::string()) == "train_state",
        "checkpoint kind mismatch: expected train_state");
  TrainCheckpoint ckpt;
  ckpt.base.model_config = denoiser_config_from_json(store.meta.at("model"));
  ckpt.base.codec = codec_config_from_json(store.meta.at("codec"));
  ckpt.base.model_params = collect(store, "model.");
  ckpt.base.encoder_params = collect(store, "encoder.");
  ckpt.base.alpha_bar = store.get("schedule.alpha_bar");
  ckpt.base.schedule();  // validates
  ckpt.train_config = train_config_from_json(store.meta.at("train"));
  ckpt.state.model_config = ckpt.base.model_config;
  ckpt.state.params = ckpt.base.model_params;
  ckpt.state.opt_m = collect(store, "opt.m.");
  ckpt.state.opt_v = collect(store, "opt.v.");
  ckpt.state.global_step = store.meta.at("global_step").get<std::int64_t>();
  ckpt.state.seed = store.meta.at("seed").get<std::uint64_t>();
  auto hist = store.get("state.loss_history");
  ckpt.state.loss_history.assign(hist.data_ptr<double>(),
                                 hist.data_ptr<double>() + hist.numel());
  return ckpt;
}

TrainState train(const TrainConfig& config, const TrainSetup& setup,
                 const std::filesystem::path& out_dir, const TrainState* resume,
                 const StepHook& hook) {
  config.validate();
  check(setup.dataset && !setup.dataset->empty(), "train needs a nonempty dataset");
  check(setup.encoder, "train needs the embedding encoder");
  check(setup.schedule.T >= 1, "train needs a noise schedule");
  if (config.stage == TrainConfig::Stage::kStage2) {
    check(!setup.init_params.empty() || resume,
          "stage 2 requires stage-1 checkpoint parameters as init");
  }

  MultiViewUNet net =
      resume ? MultiViewUNet(setup.model, resume->params)
             : (setup.init_params.empty()
                    ? MultiViewUNet(setup.model, derive_seed(config.seed, "init"))
                    : MultiViewUNet(setup.model, setup.init_params));

  AdamW opt(net.params(), config.adam_beta1, config.adam_beta2, config.weight_decay);
  std::int64_t start = 0;
  std::vector<double> history;
  if (resume) {
    start = resume->global_step;
    check(start <= config.steps, "resume step exceeds configured steps");
    opt.load_state(resume->opt_m, resume->opt_v, resume->global_step);
    history = resume->loss_history;
  }

  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    csv.open(out_dir / "losses.csv", resume ? std::ios::app : std::ios::trunc);
    check(csv.good(), "cannot open losses.csv for writing");
    if (!resume) csv << "step,loss,lr\n";
  }

  auto snapshot = [&](std::int64_t step_done) {
    TrainCheckpoint ckpt;
    ckpt.base.model_config = setup.model;
    ckpt.base.codec = setup.codec;
    ckpt.base.model_params = net.params();
    ckpt.base.encoder_params = setup.encoder->params();
    ckpt.base.alpha_bar = setup.schedule.alpha_bar;
    ckpt.train_config = config;
    ckpt.state.model_config = setup.model;
    ckpt.state.params = net.params();
    ckpt.state.opt_m = opt.exp_avg();
    ckpt.state.opt_v = opt.exp_avg_sq();
    ckpt.state.global_step = step_done;
    ckpt.state.seed = config.seed;
    ckpt.state.loss_history = history;
    return ckpt;
  };

  BatchInputs bin;
  bin.dataset = setup.dataset;
  bin.encoder = setup.encoder;
  bin.T = setup.schedule.T;
  bin.pool_factor = setup.codec.pool_factor;
  bin.branch_p_single = config.branch_p_single;
  bin.cond_dropout = config.cond_dropout;

  const int n_seq = config.batch_objects * config.grad_accum;
  for (std::int64_t step = start; step < config.steps; ++step) {
    const double lr = lr_at(config, step + 1);
    opt.zero_grad();
    double loss_sum = 0.0;
    for (int j = 0; j < n_seq; ++j) {
      // Batch content depends only on (seed, step, j): resume is bitwise.
      Rng brng(derive_seed(derive_seed(config.seed, "step", step), "obj", j));
      torch::Tensor loss;
      if (config.stage == TrainConfig::Stage::kStage1) {
        loss = loss_mv(net, make_stage1_batch(bin, brng), setup.schedule);
      } else {
        loss = loss_ema(net, make_stage2_batch(bin, brng), setup.schedule);
      }
      loss = loss / n_seq;
      loss.backward();
      loss_sum += loss.item<double>();
    }
    if (!std::isfinite(loss_sum)) {
      if (!out_dir.empty()) save_train_checkpoint(snapshot(step), out_dir / "diagnostic_nan.ckpt");
      throw std::runtime_error("non-finite training loss at step " + std::to_string(step + 1));
    }
    opt.step(lr);

    history.push_back(loss_sum);
    if (std::ssize(history) > kLossHistoryCap) history.erase(history.begin());
    if (csv.is_open()) csv << (step + 1) << ',' << loss_sum << ',' << lr << '\n' << std::flush;
    if (hook) hook(step + 1, loss_sum, lr);
    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 &&
        !out_dir.empty()) {
      save_train_checkpoint(snapshot(step + 1), out_dir / "train_state.ckpt");
    }
  }

  auto final_ckpt = snapshot(config.steps);
  if (!out_dir.empty()) {
    save_train_checkpoint(final_ckpt, out_dir / "train_state.ckpt");
    save_checkpoint(final_ckpt.base, out_dir / "denoiser.ckpt");
  }
  return final_ckpt.state;
}

}  // namespace mvd
