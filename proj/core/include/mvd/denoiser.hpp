#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mvd/batches.hpp"
#include "mvd/camera.hpp"
#include "mvd/rng.hpp"

namespace mvd {

struct DenoiserConfig {
  int base_channels = 32;
  int depth = 2;             // resolution levels: latent_hw, latent_hw/2, ...
  int attn_heads = 4;
  int time_embed_dim = 64;   // sinusoidal feature width (even)
  int camera_embed_dim = 32;
  int max_views = 5;         // >= targets + 1 when attention_mode = kEmaJoint
  int c_lat = 3;
  int d_emb = 64;
  int latent_hw = 16;
  int attn_max_hw = 8;       // joint/cross attention only at sides <= this
  int emb_tokens = 4;        // context tokens derived from the image embedding
  enum class AttentionMode { kEmaJoint, kPlainMultiview };
  AttentionMode attention_mode = AttentionMode::kEmaJoint;

  void validate() const;
};

// Per-slot metadata for the joint sequence. A reference slot is noise-free by
// definition: timestep 0 and zero relative pose.
struct SlotMeta {
  std::int64_t timestep = 0;
  RelativePose pose{0.0, 0.0, kCameraDistance};
  bool is_reference = false;
};

// Raw (unlearned) conditioning features, exposed for oracle tests.
// Sinusoid: half cos, half sin of t scaled by geometric frequencies
// exp(-ln(10000) * i / (dim/2)); t = 0 gives [1,...,1, 0,...,0].
torch::Tensor sinusoidal_features(std::int64_t t, int dim,
                                  torch::Dtype dtype = torch::kFloat32);
// [sin d_elev, cos d_elev, sin d_azim, cos d_azim, distance]
torch::Tensor camera_features(const RelativePose& pose,
                              torch::Dtype dtype = torch::kFloat32);

// Prepends the noise-free reference at slot 0: timestep 0, zero pose,
// is_reference set. Target metas must be non-reference with timestep >= 1.
std::pair<torch::Tensor, std::vector<SlotMeta>> assemble_ema_sequence(
    const torch::Tensor& reference, const torch::Tensor& targets,
    const std::vector<SlotMeta>& target_meta);

// Stage-2 branch split: single-view with probability 0.3, multi-view 0.7.
enum class Branch { kSingleView, kMultiView };
Branch branch_selector(Rng& rng);

// UNet-style multi-view denoiser with joint self-attention across
// (view x spatial) tokens, per-slot timestep+camera conditioning, and
// cross-attention to tokens derived from the global image embedding (or a
// learned null embedding when conditioning is dropped). Slot order carries no
// positional identity: permuting target slots permutes outputs.
class MultiViewUNet : public NoisePredictor {
 public:
  // Fresh deterministic initialization from seed.
  MultiViewUNet(DenoiserConfig config, std::uint64_t seed,
                torch::Dtype dtype = torch::kFloat32);
  // Adoption of existing named parameters (checkpoint load).
  MultiViewUNet(DenoiserConfig config, std::map<std::string, torch::Tensor> params);

  torch::Tensor predict(const torch::Tensor& latents, const torch::Tensor& timesteps,
                        const std::vector<RelativePose>& poses,
                        const torch::Tensor& embedding) override;

  // SlotMeta-validating entry point; delegates to predict().
  torch::Tensor predict_noise(const torch::Tensor& latents, const std::vector<SlotMeta>& metas,
                              const torch::Tensor& embedding);

  // Learned per-slot conditioning vectors (projected raw features).
  torch::Tensor embed_timestep(std::int64_t t) const;
  torch::Tensor embed_camera(const RelativePose& pose) const;

  const DenoiserConfig& config() const { return config_; }
  std::map<std::string, torch::Tensor>& params() { return params_; }
  const std::map<std::string, torch::Tensor>& params() const { return params_; }
  // Parameter tensors in name-sorted order (optimizer/checkpoint order).
  std::vector<torch::Tensor> parameters() const;
  std::int64_t num_params() const;
  torch::Dtype dtype() const { return dtype_; }

 private:
  torch::Tensor forward(const torch::Tensor& latents, const torch::Tensor& timesteps,
                        const std::vector<RelativePose>& poses,
                        const torch::Tensor& embedding) const;

  DenoiserConfig config_;
  std::map<std::string, torch::Tensor> params_;
  torch::Dtype dtype_ = torch::kFloat32;
};

}  // namespace mvd
