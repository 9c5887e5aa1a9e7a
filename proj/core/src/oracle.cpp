#include "mvd/oracle.hpp"

#include <cmath>

#include "mvd/check.hpp"

namespace mvd {

OracleDenoiser::OracleDenoiser(torch::Tensor target, NoiseSchedule schedule)
    : target_(std::move(target)), schedule_(std::move(schedule)) {
  check(target_.defined() && (target_.dim() == 3 || target_.dim() == 4),
        "oracle target must be [C,h,w] or [S,C,h,w]");
  check(schedule_.T >= 1, "oracle needs a schedule");
}

torch::Tensor OracleDenoiser::predict_one(const torch::Tensor& z_t, std::int64_t t,
                                          std::int64_t slot) const {
  check(t >= 1 && t <= schedule_.T, "oracle closed form needs 1 <= t <= T");
  check(slot >= 0 && (target_.dim() == 3 || slot < target_.size(0)),
        "oracle slot out of range");
  auto star = (target_.dim() == 4 ? target_[slot] : target_).to(z_t.options());
  check(star.sizes() == z_t.sizes(), "oracle target shape mismatch");
  const double ab = schedule_.alpha_bar_at(t);
  return (z_t - std::sqrt(ab) * star) / std::sqrt(1.0 - ab);
}

torch::Tensor OracleDenoiser::predict(const torch::Tensor& latents,
                                      const torch::Tensor& timesteps,
                                      const std::vector<RelativePose>& poses,
                                      const torch::Tensor& embedding) {
  (void)poses;
  (void)embedding;
  check(latents.dim() == 4, "latents must be [S, C, h, w]");
  const auto S = latents.size(0);
  check(timesteps.dim() == 1 && timesteps.size(0) == S, "one timestep per slot");
  if (target_.dim() == 4) {
    check(target_.size(0) == S, "per-slot oracle target count mismatch");
  }
  auto ts = timesteps.accessor<std::int64_t, 1>();
  std::vector<torch::Tensor> out;
  for (std::int64_t i = 0; i < S; ++i) {
    auto z = latents[i];
    auto star = (target_.dim() == 4 ? target_[i] : target_).to(z.options());
    check(star.sizes() == z.sizes(), "oracle target shape mismatch");
    const auto t = ts[i];
    if (t == 0) {  // noise-free slot: nothing to predict
      out.push_back(torch::zeros_like(z));
      continue;
    }
    const double ab = schedule_.alpha_bar_at(t);
    out.push_back((z - std::sqrt(ab) * star) / std::sqrt(1.0 - ab));
  }
  return torch::stack(out);
}

}  // namespace mvd
