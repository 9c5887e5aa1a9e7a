#include "mvd/denoiser.hpp"

#include <cmath>

#include "mvd/check.hpp"

namespace mvd {
namespace {

std::int64_t groups_for(std::int64_t channels) {
  std::int64_t g = std::min<std::int64_t>(8, channels);
  while (channels % g != 0) --g;
  return g;
}

// Channel width and feature-map side per resolution level.
struct LevelSpec {
  int ch = 0;
  int side = 0;
  bool attn = false;
};

std::vector<LevelSpec> level_specs(const DenoiserConfig& c) {
  std::vector<LevelSpec> out;
  for (int i = 0; i < c.depth; ++i) {
    LevelSpec l;
    l.ch = c.base_channels << i;
    l.side = c.latent_hw >> i;
    l.attn = l.side <= c.attn_max_hw;
    out.push_back(l);
  }
  return out;
}

int emb_dim_of(const DenoiserConfig& c) { return 4 * c.base_channels; }

// Builds every named parameter in a fixed creation order so that a seed fully
// determines the initialization.
class ParamBuilder {
 public:
  ParamBuilder(std::map<std::string, torch::Tensor>& params, std::uint64_t seed,
               torch::Dtype dtype)
      : params_(params), gen_(at::detail::createCPUGenerator(seed)), dtype_(dtype) {}

  void randn(const std::string& name, std::vector<std::int64_t> shape, double scale) {
    add(name, torch::randn(shape, gen_, torch::TensorOptions().dtype(dtype_)) * scale);
  }
  void zeros(const std::string& name, std::vector<std::int64_t> shape) {
    add(name, torch::zeros(shape, torch::TensorOptions().dtype(dtype_)));
  }
  void ones(const std::string& name, std::vector<std::int64_t> shape) {
    add(name, torch::ones(shape, torch::TensorOptions().dtype(dtype_)));
  }

  void linear(const std::string& prefix, int in, int out, double scale) {
    randn(prefix + ".weight", {out, in}, scale);
    zeros(prefix + ".bias", {out});
  }
  void he_linear(const std::string& prefix, int in, int out) {
    linear(prefix, in, out, std::sqrt(2.0 / in));
  }
  void conv3(const std::string& prefix, int in, int out) {
    randn(prefix + ".weight", {out, in, 3, 3}, std::sqrt(2.0 / (in * 9)));
    zeros(prefix + ".bias", {out});
  }
  void conv1(const std::string& prefix, int in, int out) {
    randn(prefix + ".weight", {out, in, 1, 1}, std::sqrt(2.0 / in));
    zeros(prefix + ".bias", {out});
  }
  void gn(const std::string& prefix, int ch) {
    ones(prefix + ".weight", {ch});
    zeros(prefix + ".bias", {ch});
  }
  void resblock(const std::string& prefix, int in, int out, int emb_dim) {
    gn(prefix + ".gn1", in);
    conv3(prefix + ".conv1", in, out);
    linear(prefix + ".emb", emb_dim, out, 0.02);
    gn(prefix + ".gn2", out);
    conv3(prefix + ".conv2", out, out);
    if (in != out) conv1(prefix + ".skip", in, out);
  }
  void joint_attn(const std::string& prefix, int ch) {
    gn(prefix + ".gn", ch);
    linear(prefix + ".qkv", ch, 3 * ch, std::sqrt(1.0 / ch));
    linear(prefix + ".out", ch, ch, 0.02);
  }
  void cross_attn(const std::string& prefix, int ch, int d_emb) {
    gn(prefix + ".gn", ch);
    linear(prefix + ".q", ch, ch, std::sqrt(1.0 / ch));
    linear(prefix + ".k", d_emb, ch, std::sqrt(1.0 / d_emb));
    linear(prefix + ".v", d_emb, ch, std::sqrt(1.0 / d_emb));
    linear(prefix + ".out", ch, ch, 0.02);
  }

 private:
  void add(const std::string& name, torch::Tensor t) {
    check(params_.emplace(name, t.set_requires_grad(true)).second,
          "duplicate parameter " + name);
  }
  std::map<std::string, torch::Tensor>& params_;
  torch::Generator gen_;
  torch::Dtype dtype_;
};

void build_params(std::map<std::string, torch::Tensor>& params, const DenoiserConfig& c,
                  std::uint64_t seed, torch::Dtype dtype) {
  ParamBuilder b(params, seed, dtype);
  const int E = emb_dim_of(c);
  const auto levels = level_specs(c);

  b.he_linear("time_mlp.0", c.time_embed_dim, E);
  b.he_linear("time_mlp.2", E, E);
  b.he_linear("cam_mlp.0", 5, c.camera_embed_dim);
  b.he_linear("cam_mlp.2", c.camera_embed_dim, E);
  b.randn("ctx.null_embedding", {c.d_emb}, std::sqrt(1.0 / c.d_emb));
  b.he_linear("ctx.tokens", c.d_emb, c.emb_tokens * c.d_emb);

  b.conv3("stem", c.c_lat, levels[0].ch);
  for (int i = 0; i < c.depth; ++i) {
    const std::string pre = "down" + std::to_string(i);
    const int in_ch = i == 0 ? levels[0].ch : levels[i - 1].ch;
    if (i > 0) b.conv3(pre + ".down", in_ch, in_ch);  // stride-2 at forward time
    b.resblock(pre + ".res", in_ch, levels[i].ch, E);
    if (levels[i].attn) {
      b.joint_attn(pre + ".attn", levels[i].ch);
      b.cross_attn(pre + ".cross", levels[i].ch, c.d_emb);
    }
  }

  const int mid_ch = levels.back().ch;
  b.resblock("mid.res1", mid_ch, mid_ch, E);
  b.joint_attn("mid.attn", mid_ch);
  b.cross_attn("mid.cross", mid_ch, c.d_emb);
  b.resblock("mid.res2", mid_ch, mid_ch, E);

  int carry = mid_ch;  // channels flowing up
  for (int i = c.depth - 1; i >= 0; --i) {
    const std::string pre = "up" + std::to_string(i);
    b.resblock(pre + ".res", levels[i].ch + carry, levels[i].ch, E);
    if (levels[i].attn) {
      b.joint_attn(pre + ".attn", levels[i].ch);
      b.cross_attn(pre + ".cross", levels[i].ch, c.d_emb);
    }
    if (i > 0) b.conv3(pre + ".up", levels[i].ch, levels[i].ch);
    carry = levels[i].ch;
  }

  b.gn("head.gn", levels[0].ch);
  // Near-zero (not exactly zero) head: predictions start tiny for stable early
  // loss, while keeping every upstream path live from the first step.
  b.randn("head.conv.weight", {c.c_lat, levels[0].ch, 3, 3}, 1e-4);
  b.zeros("head.conv.bias", {c.c_lat});
}

}  // namespace

void DenoiserConfig::validate() const {
  check(base_channels >= 8, "base_channels must be >= 8");
  check(attn_heads >= 1 && base_channels % attn_heads == 0,
        "base_channels must be divisible by attn_heads");
  check(depth >= 1, "depth must be >= 1");
  check(latent_hw >= 4 && latent_hw % (1 << (depth - 1)) == 0,
        "latent_hw must be divisible by 2^(depth-1)");
  check(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "time_embed_dim must be even");
  check(camera_embed_dim >= 1, "camera_embed_dim must be >= 1");
  check(c_lat >= 1 && d_emb >= 1 && emb_tokens >= 1, "channel counts must be positive");
  if (attention_mode == AttentionMode::kEmaJoint) {
    check(max_views >= 2, "ema_joint needs max_views >= targets + 1 (at least 2)");
  } else {
    check(max_views >= 1, "max_views must be >= 1");
  }
}

torch::Tensor sinusoidal_features(std::int64_t t, int dim, torch::Dtype dtype) {
  check(t >= 0, "timestep must be >= 0");
  check(dim >= 2 && dim % 2 == 0, "sinusoid dim must be even");
  const int half = dim / 2;
  auto out = torch::empty({dim}, torch::TensorOptions().dtype(torch::kFloat64));
  auto acc = out.accessor<double, 1>();
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    acc[i] = std::cos(double(t) * freq);
    acc[half + i] = std::sin(double(t) * freq);
  }
  return out.to(dtype);
}

torch::Tensor camera_features(const RelativePose& pose, torch::Dtype dtype) {
  auto out = torch::empty({5}, torch::TensorOptions().dtype(torch::kFloat64));
  auto acc = out.accessor<double, 1>();
  acc[0] = std::sin(pose.d_elevation);
  acc[1] = std::cos(pose.d_elevation);
  acc[2] = std::sin(pose.d_azimuth);
  acc[3] = std::cos(pose.d_azimuth);
  acc[4] = pose.distance;
  return out.to(dtype);
}

std::pair<torch::Tensor, std::vector<SlotMeta>> assemble_ema_sequence(
    const torch::Tensor& reference, const torch::Tensor& targets,
    const std::vector<SlotMeta>& target_meta) {
  check(reference.dim() == 3, "reference latent must be [C, h, w]");
  check(targets.dim() == 4 && targets.sizes().slice(1) == reference.sizes(),
        "targets must be [V, C, h, w] matching the reference");
  check(static_cast<std::int64_t>(target_meta.size()) == targets.size(0),
        "one SlotMeta per target");
  for (const auto& m : target_meta) {
    check(!m.is_reference, "target metas must not be marked is_reference");
    check(m.timestep >= 1, "target timesteps must be >= 1");
  }
  SlotMeta ref_meta;
  ref_meta.timestep = 0;
  ref_meta.pose = RelativePose{0.0, 0.0,
                               target_meta.empty() ? kCameraDistance
                                                   : target_meta.front().pose.distance};
  ref_meta.is_reference = true;
  std::vector<SlotMeta> metas;
  metas.push_back(ref_meta);
  metas.insert(metas.end(), target_meta.begin(), target_meta.end());
  return {torch::cat({reference.unsqueeze(0), targets}), std::move(metas)};
}

Branch branch_selector(Rng& rng) {
  return uniform01(rng) < 0.3 ? Branch::kSingleView : Branch::kMultiView;
}

MultiViewUNet::MultiViewUNet(DenoiserConfig config, std::uint64_t seed, torch::Dtype dtype)
    : config_(config), dtype_(dtype) {
  config_.validate();
  build_params(params_, config_, seed, dtype);
}

MultiViewUNet::MultiViewUNet(DenoiserConfig config, std::map<std::string, torch::Tensor> params)
    : config_(config) {
  config_.validate();
  check(!params.empty(), "empty parameter map");
  dtype_ = params.begin()->second.scalar_type();
  // Validate the adopted names and shapes against a reference layout.
  std::map<std::string, torch::Tensor> expected;
  build_params(expected, config_, 0, dtype_);
  check(params.size() == expected.size(), "parameter count mismatch against config");
  for (const auto& [name, t] : expected) {
    auto it = params.find(name);
    check(it != params.end(), "missing parameter " + name);
    check(it->second.sizes() == t.sizes(), "shape mismatch for parameter " + name);
    // Own the storage: training must never mutate the caller's map in place.
    params_[name] = it->second.detach().to(dtype_).clone().set_requires_grad(true);
  }
}

std::vector<torch::Tensor> MultiViewUNet::parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

std::int64_t MultiViewUNet::num_params() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

torch::Tensor MultiViewUNet::embed_timestep(std::int64_t t) const {
  auto f = sinusoidal_features(t, config_.time_embed_dim, dtype_);
  auto h = torch::linear(f, params_.at("time_mlp.0.weight"), params_.at("time_mlp.0.bias"));
  return torch::linear(torch::silu(h), params_.at("time_mlp.2.weight"),
                       params_.at("time_mlp.2.bias"));
}

torch::Tensor MultiViewUNet::embed_camera(const RelativePose& pose) const {
  auto f = camera_features(pose, dtype_);
  auto h = torch::linear(f, params_.at("cam_mlp.0.weight"), params_.at("cam_mlp.0.bias"));
  return torch::linear(torch::silu(h), params_.at("cam_mlp.2.weight"),
                       params_.at("cam_mlp.2.bias"));
}

torch::Tensor MultiViewUNet::predict(const torch::Tensor& latents,
                                     const torch::Tensor& timesteps,
                                     const std::vector<RelativePose>& poses,
                                     const torch::Tensor& embedding) {
  check(latents.dim() == 4, "latents must be [S, C, h, w]");
  const auto S = latents.size(0);
  check(S >= 1 && S <= config_.max_views,
        "sequence length " + std::to_string(S) + " exceeds max_views " +
            std::to_string(config_.max_views));
  check(latents.size(1) == config_.c_lat && latents.size(2) == config_.latent_hw &&
            latents.size(3) == config_.latent_hw,
        "latent shape does not match the configured codec");
  check(timesteps.dim() == 1 && timesteps.size(0) == S && timesteps.dtype() == torch::kInt64,
        "timesteps must be int64 [S]");
  check(static_cast<std::int64_t>(poses.size()) == S, "one pose per slot");
  if (embedding.defined()) {
    check(embedding.dim() == 1 && embedding.size(0) == config_.d_emb,
          "embedding must be [d_emb]");
  }
  return forward(latents, timesteps, poses, embedding);
}

torch::Tensor MultiViewUNet::predict_noise(const torch::Tensor& latents,
                                           const std::vector<SlotMeta>& metas,
                                           const torch::Tensor& embedding) {
  check(static_cast<std::int64_t>(metas.size()) == latents.size(0), "one SlotMeta per slot");
  std::vector<RelativePose> poses;
  auto timesteps = torch::empty({latents.size(0)}, torch::kInt64);
  for (std::size_t i = 0; i < metas.size(); ++i) {
    const auto& m = metas[i];
    if (m.is_reference) {
      check(m.timestep == 0 && m.pose.d_elevation == 0.0 && m.pose.d_azimuth == 0.0,
            "reference slot meta must have timestep 0 and zero pose");
    }
    check(m.timestep >= 0, "slot timestep must be >= 0");
    poses.push_back(m.pose);
    timesteps[i] = m.timestep;
  }
  return predict(latents, timesteps, poses, embedding);
}

torch::Tensor MultiViewUNet::forward(const torch::Tensor& latents,
                                     const torch::Tensor& timesteps,
                                     const std::vector<RelativePose>& poses,
                                     const torch::Tensor& embedding) const {
  const auto& c = config_;
  const auto S = latents.size(0);
  const auto levels = level_specs(c);

  auto P = [&](const std::string& n) -> const torch::Tensor& { return params_.at(n); };
  auto lin = [&](const torch::Tensor& x, const std::string& pre) {
    return torch::linear(x, P(pre + ".weight"), P(pre + ".bias"));
  };
  auto conv = [&](const torch::Tensor& x, const std::string& pre, std::int64_t stride = 1,
                  std::int64_t pad = 1) {
    return torch::conv2d(x, P(pre + ".weight"), P(pre + ".bias"), stride, pad);
  };
  auto gnorm = [&](const torch::Tensor& x, const std::string& pre) {
    return torch::group_norm(x, groups_for(x.size(1)), P(pre + ".weight"), P(pre + ".bias"));
  };
  auto resblock = [&](const torch::Tensor& x, const std::string& pre,
                      const torch::Tensor& cond) {
    auto h = conv(torch::silu(gnorm(x, pre + ".gn1")), pre + ".conv1");
    h = h + lin(torch::silu(cond), pre + ".emb").unsqueeze(-1).unsqueeze(-1);
    h = conv(torch::silu(gnorm(h, pre + ".gn2")), pre + ".conv2");
    auto skip = params_.count(pre + ".skip.weight")
                    ? torch::conv2d(x, P(pre + ".skip.weight"), P(pre + ".skip.bias"))
                    : x;
    return h + skip;
  };
  // Joint self-attention: tokens pooled across (view x spatial), so every slot
  // attends to every other — this is where the views couple.
  auto joint_attn = [&](const torch::Tensor& x, const std::string& pre) {
    const auto C = x.size(1), h = x.size(2), w = x.size(3);
    const std::int64_t H = c.attn_heads, dh = C / H, N = S * h * w;
    auto tokens = gnorm(x, pre + ".gn").permute({0, 2, 3, 1}).reshape({N, C});
    auto qkv = lin(tokens, pre + ".qkv").reshape({N, 3, H, dh}).permute({1, 2, 0, 3});
    auto attn = torch::softmax(
        torch::matmul(qkv[0], qkv[1].transpose(-2, -1)) / std::sqrt(double(dh)), -1);
    auto out = torch::matmul(attn, qkv[2]).permute({1, 0, 2}).reshape({N, C});
    return x + lin(out, pre + ".out").reshape({S, h, w, C}).permute({0, 3, 1, 2});
  };
  // Cross-attention from every spatial token to the embedding-derived context.
  auto cross_attn = [&](const torch::Tensor& x, const std::string& pre,
                        const torch::Tensor& ctx) {
    const auto C = x.size(1), h = x.size(2), w = x.size(3);
    const std::int64_t H = c.attn_heads, dh = C / H, N = S * h * w;
    const std::int64_t K = ctx.size(0);
    auto tokens = gnorm(x, pre + ".gn").permute({0, 2, 3, 1}).reshape({N, C});
    auto q = lin(tokens, pre + ".q").reshape({N, H, dh}).permute({1, 0, 2});
    auto k = lin(ctx, pre + ".k").reshape({K, H, dh}).permute({1, 0, 2});
    auto v = lin(ctx, pre + ".v").reshape({K, H, dh}).permute({1, 0, 2});
    auto attn =
        torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(double(dh)), -1);
    auto out = torch::matmul(attn, v).permute({1, 0, 2}).reshape({N, C});
    return x + lin(out, pre + ".out").reshape({S, h, w, C}).permute({0, 3, 1, 2});
  };

  // Per-slot conditioning: projected sinusoid + projected camera features.
  auto ts = timesteps.accessor<std::int64_t, 1>();
  std::vector<torch::Tensor> sin_rows, cam_rows;
  for (std::int64_t s = 0; s < S; ++s) {
    sin_rows.push_back(sinusoidal_features(ts[s], c.time_embed_dim, dtype_));
    cam_rows.push_back(camera_features(poses[s], dtype_));
  }
  auto t_emb = lin(torch::silu(lin(torch::stack(sin_rows), "time_mlp.0")), "time_mlp.2");
  auto c_emb = lin(torch::silu(lin(torch::stack(cam_rows), "cam_mlp.0")), "cam_mlp.2");
  auto cond = t_emb + c_emb;  // [S, E]

  // Context tokens from the image embedding; the learned null embedding stands
  // in when conditioning was dropped (classifier-free guidance).
  auto emb = embedding.defined() ? embedding.to(dtype_) : P("ctx.null_embedding");
  auto ctx = lin(emb, "ctx.tokens").reshape({c.emb_tokens, c.d_emb});

  auto x = conv(latents.to(dtype_), "stem");
  std::vector<torch::Tensor> skips;
  for (int i = 0; i < c.depth; ++i) {
    const std::string pre = "down" + std::to_string(i);
    if (i > 0) x = conv(x, pre + ".down", /*stride=*/2);
    x = resblock(x, pre + ".res", cond);
    if (levels[i].attn) {
      x = joint_attn(x, pre + ".attn");
      x = cross_attn(x, pre + ".cross", ctx);
    }
    skips.push_back(x);
  }

  x = resblock(x, "mid.res1", cond);
  x = joint_attn(x, "mid.attn");
  x = cross_attn(x, "mid.cross", ctx);
  x = resblock(x, "mid.res2", cond);

  for (int i = c.depth - 1; i >= 0; --i) {
    const std::string pre = "up" + std::to_string(i);
    x = resblock(torch::cat({skips[i], x}, 1), pre + ".res", cond);
    if (levels[i].attn) {
      x = joint_attn(x, pre + ".attn");
      x = cross_attn(x, pre + ".cross", ctx);
    }
    if (i > 0) {
      const std::int64_t side = levels[i - 1].side;
      x = conv(torch::upsample_nearest2d(x, {side, side}), pre + ".up");
    }
  }

  return conv(torch::silu(gnorm(x, "head.gn")), "head.conv");
}

}  // namespace mvd
