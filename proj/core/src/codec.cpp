#include "mvd/codec.hpp"

#include <cmath>

#include "mvd/check.hpp"
#include "mvd/hash.hpp"

namespace mvd {
namespace {

void check_pool(int pool_factor) {
  check(pool_factor == 1 || pool_factor == 2 || pool_factor == 4,
        "pool_factor must be one of {1, 2, 4}");
}

}  // namespace

torch::Tensor encode_latent(const torch::Tensor& image_hw3, int pool_factor) {
  check_pool(pool_factor);
  check(image_hw3.dim() == 3 && image_hw3.size(2) == 3,
        "encode_latent expects an [H,W,3] image");
  check(image_hw3.size(0) % pool_factor == 0 && image_hw3.size(1) % pool_factor == 0,
        "encode_latent: image resolution not divisible by pool_factor");
  auto x = image_hw3.permute({2, 0, 1});
  if (pool_factor > 1) {
    x = torch::avg_pool2d(x.unsqueeze(0), pool_factor).squeeze(0);
  }
  return x * 2.0 - 1.0;
}

torch::Tensor decode_latent(const torch::Tensor& latent_chw, int pool_factor) {
  check_pool(pool_factor);
  check(latent_chw.dim() == 3 && latent_chw.size(0) == 3,
        "decode_latent expects a [3,h,w] latent");
  auto x = (latent_chw + 1.0) / 2.0;
  if (pool_factor > 1) {
    x = x.repeat_interleave(pool_factor, 1).repeat_interleave(pool_factor, 2);
  }
  return x.clamp(0.0, 1.0).permute({1, 2, 0});
}

EmbeddingEncoder::EmbeddingEncoder(int d_emb, std::uint64_t embed_seed) {
  check(d_emb >= 1, "d_emb must be positive");
  auto gen = at::detail::createCPUGenerator(embed_seed);
  auto he = [&](std::vector<std::int64_t> shape, double fan_in) {
    return torch::randn(shape, gen, torch::kFloat32) * std::sqrt(2.0 / fan_in);
  };
  params_["conv0.weight"] = he({16, 3, 3, 3}, 3 * 9);
  params_["conv0.bias"] = torch::zeros({16});
  params_["conv1.weight"] = he({32, 16, 3, 3}, 16 * 9);
  params_["conv1.bias"] = torch::zeros({32});
  params_["conv2.weight"] = he({d_emb, 32, 3, 3}, 32 * 9);
  params_["conv2.bias"] = torch::zeros({d_emb});
}

EmbeddingEncoder::EmbeddingEncoder(std::map<std::string, torch::Tensor> params)
    : params_(std::move(params)) {
  for (const char* name : {"conv0.weight", "conv0.bias", "conv1.weight", "conv1.bias",
                           "conv2.weight", "conv2.bias"}) {
    check(params_.count(name) == 1, std::string("embedding encoder missing parameter ") + name);
  }
}

torch::Tensor EmbeddingEncoder::encode(const torch::Tensor& image_hw3) const {
  check(image_hw3.dim() == 3 && image_hw3.size(2) == 3,
        "encode expects an [H,W,3] image");
  torch::NoGradGuard no_grad;
  auto x = image_hw3.to(torch::kFloat32).permute({2, 0, 1}).unsqueeze(0);
  x = torch::silu(torch::conv2d(x, params_.at("conv0.weight"), params_.at("conv0.bias"),
                                /*stride=*/2, /*padding=*/1));
  x = torch::silu(torch::conv2d(x, params_.at("conv1.weight"), params_.at("conv1.bias"), 2, 1));
  x = torch::conv2d(x, params_.at("conv2.weight"), params_.at("conv2.bias"), 2, 1);
  x = torch::adaptive_avg_pool2d(x, {1, 1}).flatten();
  const double norm = x.norm().item<double>();
  check(std::isfinite(norm) && norm > 0.0, "embedding collapsed to zero norm");
  return x / norm;
}

std::string EmbeddingEncoder::param_hash() const {
  std::vector<torch::Tensor> ordered;
  std::string names;
  for (const auto& [name, tensor] : params_) {  // std::map iterates name-sorted
    names += name;
    names += '\n';
    ordered.push_back(tensor);
  }
  return sha256_hex(names + sha256_tensors(ordered));
}

int EmbeddingEncoder::d_emb() const {
  return static_cast<int>(params_.at("conv2.weight").size(0));
}

}  // namespace mvd
