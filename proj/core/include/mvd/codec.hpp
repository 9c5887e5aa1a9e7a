#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <string>

namespace mvd {

struct CodecConfig {
  int pool_factor = 4;  // one of {1, 2, 4}
  int c_lat = 3;        // the pooling codec keeps the RGB channels
  int d_emb = 64;
  std::uint64_t embed_seed = 0x5eedc0de;  // fixed for the lifetime of an experiment
};

// [H,W,3] in [0,1] -> [3, H/pool, W/pool] in [-1,1]: per-channel average pool
// then x -> 2x-1. H and W must be divisible by pool_factor.
torch::Tensor encode_latent(const torch::Tensor& image_hw3, int pool_factor);

// Inverse: affine back to [0,1], nearest-neighbor upsample, clamp.
// [3,h,w] -> [h*pool, w*pool, 3]
torch::Tensor decode_latent(const torch::Tensor& latent_chw, int pool_factor);

// Frozen random-weight conv feature extractor standing in for a pretrained
// image embedder: three stride-2 convs, global average pool, L2 normalization.
// Parameters are created once from embed_seed and never updated; checkpoints
// store them verbatim so inference never re-derives them from the seed.
class EmbeddingEncoder {
 public:
  EmbeddingEncoder(int d_emb, std::uint64_t embed_seed);
  // Reconstruction from checkpointed parameters.
  explicit EmbeddingEncoder(std::map<std::string, torch::Tensor> params);

  // [H,W,3] in [0,1] -> [d_emb] with unit L2 norm.
  torch::Tensor encode(const torch::Tensor& image_hw3) const;

  const std::map<std::string, torch::Tensor>& params() const { return params_; }
  // Digest over parameter names, dtypes, shapes and bytes; constant across the
  // whole experiment (frozen-encoder contract).
  std::string param_hash() const;
  int d_emb() const;

 private:
  std::map<std::string, torch::Tensor> params_;  // float32, requires_grad=false
};

}  // namespace mvd
