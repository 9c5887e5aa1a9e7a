#include "mvd/schedule.hpp"

#include <cmath>

#include "mvd/check.hpp"

namespace mvd {

double NoiseSchedule::alpha_bar_at(std::int64_t t) const {
  check(t >= 0 && t <= T, "timestep " + std::to_string(t) + " outside [0, " +
                              std::to_string(T) + "]");
  return alpha_bar[t].item<double>();
}

NoiseSchedule make_schedule(std::int64_t T, double beta_min, double beta_max) {
  check(T >= 1, "schedule needs T >= 1");
  check(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0,
        "schedule needs 0 < beta_min < beta_max < 1");
  NoiseSchedule s;
  s.T = T;
  s.alpha_bar = torch::empty({T + 1}, torch::kFloat64);
  auto ab = s.alpha_bar.accessor<double, 1>();
  ab[0] = 1.0;
  double prod = 1.0;
  for (std::int64_t step = 1; step <= T; ++step) {
    const double beta =
        T == 1 ? beta_min
               : beta_min + double(step - 1) * (beta_max - beta_min) / double(T - 1);
    prod *= 1.0 - beta;
    ab[step] = prod;
  }
  check(ab[T] > 0.0, "schedule underflowed to zero");
  return s;
}

torch::Tensor forward_diffuse(const torch::Tensor& z, std::int64_t t, const torch::Tensor& eps,
                              const NoiseSchedule& schedule) {
  check(eps.sizes() == z.sizes(), "forward_diffuse: eps shape must match z");
  const double ab = schedule.alpha_bar_at(t);
  if (t == 0) return z;  // noise-free convention, bit-exact
  return z * std::sqrt(ab) + eps * std::sqrt(1.0 - ab);
}

}  // namespace mvd
