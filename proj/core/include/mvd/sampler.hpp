#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "mvd/batches.hpp"
#include "mvd/schedule.hpp"

namespace mvd {

struct SamplerOptions {
  int steps = 50;
  double scale = 10.0;          // CFG guidance scale
  bool deterministic = false;   // eta = 0 variant for reproducible tests
  int c_lat = 3;
  int latent_hw = 16;
  int pool_factor = 4;          // decode factor back to image space
  // Experimental: prepend a pseudo-reference slot holding the running mean of
  // the predicted clean latent (timestep 0, zero relative pose). Off by
  // default — sampling consumes no reference image.
  bool use_reference_slot = false;
};

// Ancestral DDPM sampling from t = T down to 1 over all target slots jointly.
// Conditioning is the image embedding plus relative poses only. Returns one
// decoded [H, W, 3] image in [0,1] per pose. Deterministic under (seed, opts).
std::vector<torch::Tensor> sample_views(NoisePredictor& model, const torch::Tensor& embedding,
                                        const std::vector<RelativePose>& poses,
                                        const NoiseSchedule& schedule,
                                        const SamplerOptions& opts, std::uint64_t seed);

// The descending timestep subsequence the sampler visits (linspace T..1,
// rounded, deduplicated). Exposed for tests.
std::vector<std::int64_t> sampler_timesteps(std::int64_t T, int steps);

}  // namespace mvd
