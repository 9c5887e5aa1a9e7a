#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mvd {

struct FieldConfig {
  int pe_frequencies = 4;  // sin/cos octaves per coordinate; 0 = raw xyz only
  int hidden = 64;
  int layers = 2;          // hidden linear layers in the trunk (0 = heads on features)
  double bound = 1.0;      // axis-aligned box half-side the field lives in

  void validate() const;
};

struct FieldSample {
  torch::Tensor sigma;   // [N] >= 0
  torch::Tensor albedo;  // [N, 3] in [0,1]
};

// Anything the volume renderer can march through: densities and albedos at
// arbitrary points, differentiable w.r.t. the points (for density normals).
class FieldFunction {
 public:
  virtual ~FieldFunction() = default;
  virtual FieldSample query(const torch::Tensor& points) const = 0;  // [N, 3]
  virtual torch::Dtype dtype() const = 0;
};

// Small positional-encoded MLP mapping 3D points to a nonnegative density and
// an albedo in [0,1]^3. Parameters live in a named map (seed-deterministic
// creation order) so the shared optimizer and checkpoint code apply unchanged.
class RadianceField : public FieldFunction {
 public:
  RadianceField(FieldConfig config, std::uint64_t seed, torch::Dtype dtype = torch::kFloat32);
  // Adopts checkpointed parameters (cloned; the field owns its storage).
  RadianceField(FieldConfig config, const std::map<std::string, torch::Tensor>& params);

  using Output = FieldSample;
  // points [N, 3]; differentiable w.r.t. both points and parameters.
  Output query(const torch::Tensor& points) const override;

  const FieldConfig& config() const { return config_; }
  std::map<std::string, torch::Tensor>& params() { return params_; }
  const std::map<std::string, torch::Tensor>& params() const { return params_; }
  std::int64_t num_params() const;
  torch::Dtype dtype() const override { return dtype_; }
  std::string param_hash() const;

 private:
  FieldConfig config_;
  std::map<std::string, torch::Tensor> params_;
  torch::Dtype dtype_ = torch::kFloat32;
};

// Frequency features [x, sin(2^k x), cos(2^k x)]_{k<L} per coordinate.
torch::Tensor positional_encoding(const torch::Tensor& points, int frequencies);

void save_field(const RadianceField& field, const std::filesystem::path& path);
RadianceField load_field(const std::filesystem::path& path);

}  // namespace mvd
