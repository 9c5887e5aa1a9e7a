#include "mvd/field.hpp"

#include <cmath>

#include "mvd/check.hpp"
#include "mvd/checkpoint.hpp"
#include "mvd/hash.hpp"
#include "mvd/tensor_store.hpp"

namespace mvd {
namespace {

int feature_dim(const FieldConfig& c) { return 3 + 6 * c.pe_frequencies; }

void build_params(std::map<std::string, torch::Tensor>& params, const FieldConfig& c,
                  std::uint64_t seed, torch::Dtype dtype) {
  auto gen = at::detail::createCPUGenerator(seed);
  auto opts = torch::TensorOptions().dtype(dtype);
  auto add = [&](const std::string& name, torch::Tensor t) {
    params.emplace(name, t.set_requires_grad(true));
  };
  auto he_linear = [&](const std::string& prefix, int in, int out) {
    add(prefix + ".weight", torch::randn({out, in}, gen, opts) * std::sqrt(2.0 / in));
    add(prefix + ".bias", torch::zeros({out}, opts));
  };
  int in = feature_dim(c);
  for (int i = 0; i < c.layers; ++i) {
    he_linear("trunk." + std::to_string(i), in, c.hidden);
    in = c.hidden;
  }
  add("sigma.weight", torch::randn({1, in}, gen, opts) * 0.1);
  // Softplus(-3) ~ 0.049: the field starts almost transparent instead of fog.
  add("sigma.bias", torch::full({1}, -3.0, opts));
  add("albedo.weight", torch::randn({3, in}, gen, opts) * 0.1);
  add("albedo.bias", torch::zeros({3}, opts));  // sigmoid(0) = mid gray
}

}  // namespace

void FieldConfig::validate() const {
  check(pe_frequencies >= 0 && pe_frequencies <= 12, "pe_frequencies must be in [0, 12]");
  check(hidden >= 1, "hidden must be >= 1");
  check(layers >= 0, "layers must be >= 0");
  check(bound > 0.0, "bound must be positive");
}

torch::Tensor positional_encoding(const torch::Tensor& points, int frequencies) {
  check(points.dim() == 2 && points.size(1) == 3, "points must be [N, 3]");
  std::vector<torch::Tensor> feats{points};
  for (int k = 0; k < frequencies; ++k) {
    const double f = std::ldexp(1.0, k);  // 2^k
    feats.push_back(torch::sin(points * f));
    feats.push_back(torch::cos(points * f));
  }
  return torch::cat(feats, 1);
}

RadianceField::RadianceField(FieldConfig config, std::uint64_t seed, torch::Dtype dtype)
    : config_(config), dtype_(dtype) {
  config_.validate();
  build_params(params_, config_, seed, dtype);
}

RadianceField::RadianceField(FieldConfig config,
                             const std::map<std::string, torch::Tensor>& params)
    : config_(config) {
  config_.validate();
  check(!params.empty(), "empty parameter map");
  dtype_ = params.begin()->second.scalar_type();
  std::map<std::string, torch::Tensor> expected;
  build_params(expected, config_, 0, dtype_);
  check(params.size() == expected.size(), "parameter count mismatch against config");
  for (const auto& [name, t] : expected) {
    auto it = params.find(name);
    check(it != params.end(), "missing parameter " + name);
    check(it->second.sizes() == t.sizes(), "shape mismatch for parameter " + name);
    params_[name] = it->second.detach().to(dtype_).clone().set_requires_grad(true);
  }
}

RadianceField::Output RadianceField::query(const torch::Tensor& points) const {
  check(points.dim() == 2 && points.size(1) == 3, "points must be [N, 3]");
  auto x = positional_encoding(points.to(dtype_), config_.pe_frequencies);
  for (int i = 0; i < config_.layers; ++i) {
    const std::string pre = "trunk." + std::to_string(i);
    x = torch::silu(torch::linear(x, params_.at(pre + ".weight"), params_.at(pre + ".bias")));
  }
  Output out;
  out.sigma = torch::softplus(
                  torch::linear(x, params_.at("sigma.weight"), params_.at("sigma.bias")))
                  .squeeze(-1);
  out.albedo = torch::sigmoid(
      torch::linear(x, params_.at("albedo.weight"), params_.at("albedo.bias")));
  return out;
}

std::int64_t RadianceField::num_params() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

std::string RadianceField::param_hash() const {
  std::string acc;
  std::vector<torch::Tensor> ordered;
  for (const auto& [name, t] : params_) {
    acc += name;
    acc += '\n';
    ordered.push_back(t.detach());
  }
  return sha256_hex(acc + sha256_tensors(ordered));
}

void save_field(const RadianceField& field, const std::filesystem::path& path) {
  TensorStore store;
  store.meta = {{"schema_version", 1},
                {"kind", "field"},
                {"field",
                 {{"pe_frequencies", field.config().pe_frequencies},
                  {"hidden", field.config().hidden},
                  {"layers", field.config().layers},
                  {"bound", field.config().bound}}}};
  for (const auto& [name, t] : field.params()) store.put(name, t.detach());
  store.save(path);
}

RadianceField load_field(const std::filesystem::path& path) {
  auto store = TensorStore::load(path);
  check(store.meta.value("schema_version", -1) == 1, "unsupported checkpoint schema_version");
  check(store.meta.value("kind", std::string()) == "field",
        "checkpoint kind mismatch: expected field");
  const auto& j = store.meta.at("field");
  FieldConfig c;
  c.pe_frequencies = j.value("pe_frequencies", c.pe_frequencies);
  c.hidden = j.value("hidden", c.hidden);
  c.layers = j.value("layers", c.layers);
  c.bound = j.value("bound", c.bound);
  std::map<std::string, torch::Tensor> params;
  for (const auto& name : store.names()) params[name] = store.get(name);
  return RadianceField(c, params);
}

}  // namespace mvd
