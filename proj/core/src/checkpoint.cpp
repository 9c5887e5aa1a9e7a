#include "mvd/checkpoint.hpp"

#include "mvd/check.hpp"
#include "mvd/tensor_store.hpp"

namespace mvd {
namespace {

constexpr int kSchemaVersion = 1;

std::string mode_to_string(DenoiserConfig::AttentionMode m) {
  return m == DenoiserConfig::AttentionMode::kEmaJoint ? "ema_joint" : "plain_multiview";
}

DenoiserConfig::AttentionMode mode_from_string(const std::string& s) {
  if (s == "ema_joint") return DenoiserConfig::AttentionMode::kEmaJoint;
  if (s == "plain_multiview") return DenoiserConfig::AttentionMode::kPlainMultiview;
  fail("unknown attention_mode: " + s);
}

// Tensors under `prefix.` with the prefix stripped.
std::map<std::string, torch::Tensor> collect(const TensorStore& store,
                                             const std::string& prefix) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& name : store.names()) {
    if (name.rfind(prefix, 0) == 0) out[name.substr(prefix.size())] = store.get(name);
  }
  return out;
}

void put_all(TensorStore& store, const std::string& prefix,
             const std::map<std::string, torch::Tensor>& params) {
  for (const auto& [name, t] : params) store.put(prefix + name, t.detach());
}

void check_header(const TensorStore& store, const std::string& kind) {
  check(store.meta.value("schema_version", -1) == kSchemaVersion,
        "unsupported checkpoint schema_version");
  check(store.meta.value("kind", std::string()) == kind,
        "checkpoint kind mismatch: expected " + kind);
}

}  // namespace

nlohmann::json to_json(const DenoiserConfig& c) {
  return {{"base_channels", c.base_channels},
          {"depth", c.depth},
          {"attn_heads", c.attn_heads},
          {"time_embed_dim", c.time_embed_dim},
          {"camera_embed_dim", c.camera_embed_dim},
          {"max_views", c.max_views},
          {"c_lat", c.c_lat},
          {"d_emb", c.d_emb},
          {"latent_hw", c.latent_hw},
          {"attn_max_hw", c.attn_max_hw},
          {"emb_tokens", c.emb_tokens},
          {"attention_mode", mode_to_string(c.attention_mode)}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.base_channels = j.value("base_channels", c.base_channels);
  c.depth = j.value("depth", c.depth);
  c.attn_heads = j.value("attn_heads", c.attn_heads);
  c.time_embed_dim = j.value("time_embed_dim", c.time_embed_dim);
  c.camera_embed_dim = j.value("camera_embed_dim", c.camera_embed_dim);
  c.max_views = j.value("max_views", c.max_views);
  c.c_lat = j.value("c_lat", c.c_lat);
  c.d_emb = j.value("d_emb", c.d_emb);
  c.latent_hw = j.value("latent_hw", c.latent_hw);
  c.attn_max_hw = j.value("attn_max_hw", c.attn_max_hw);
  c.emb_tokens = j.value("emb_tokens", c.emb_tokens);
  c.attention_mode = mode_from_string(j.value("attention_mode", std::string("ema_joint")));
  c.validate();
  return c;
}

nlohmann::json to_json(const CodecConfig& c) {
  return {{"pool_factor", c.pool_factor},
          {"c_lat", c.c_lat},
          {"d_emb", c.d_emb},
          {"embed_seed", c.embed_seed}};
}

CodecConfig codec_config_from_json(const nlohmann::json& j) {
  CodecConfig c;
  c.pool_factor = j.value("pool_factor", c.pool_factor);
  c.c_lat = j.value("c_lat", c.c_lat);
  c.d_emb = j.value("d_emb", c.d_emb);
  c.embed_seed = j.value("embed_seed", c.embed_seed);
  return c;
}

NoiseSchedule DenoiserCheckpoint::schedule() const {
  check(alpha_bar.defined() && alpha_bar.dim() == 1 && alpha_bar.size(0) >= 2 &&
            alpha_bar.dtype() == torch::kFloat64,
        "checkpoint alpha_bar must be a float64 vector of T+1 entries");
  NoiseSchedule s;
  s.T = alpha_bar.size(0) - 1;
  s.alpha_bar = alpha_bar;
  return s;
}

void save_checkpoint(const DenoiserCheckpoint& ckpt, const std::filesystem::path& path) {
  check(!ckpt.model_params.empty(), "checkpoint has no model parameters");
  check(!ckpt.encoder_params.empty(), "checkpoint has no embedding-encoder parameters");
  TensorStore store;
  store.meta = {{"schema_version", kSchemaVersion},
                {"kind", "denoiser"},
                {"model", to_json(ckpt.model_config)},
                {"codec", to_json(ckpt.codec)},
                {"schedule", {{"T", ckpt.schedule().T}}}};
  put_all(store, "model.", ckpt.model_params);
  put_all(store, "encoder.", ckpt.encoder_params);
  store.put("schedule.alpha_bar", ckpt.alpha_bar);
  store.save(path);
}

DenoiserCheckpoint load_checkpoint(const std::filesystem::path& path) {
  auto store = TensorStore::load(path);
  check_header(store, "denoiser");
  DenoiserCheckpoint ckpt;
  ckpt.model_config = denoiser_config_from_json(store.meta.at("model"));
  ckpt.codec = codec_config_from_json(store.meta.at("codec"));
  ckpt.model_params = collect(store, "model.");
  ckpt.encoder_params = collect(store, "encoder.");
  ckpt.alpha_bar = store.get("schedule.alpha_bar");
  ckpt.schedule();  // validates
  check(!ckpt.model_params.empty(), "checkpoint has no model parameters");
  return ckpt;
}

}  // namespace mvd
