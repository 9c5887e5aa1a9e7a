#include "mvd/metrics.hpp"

#include <cmath>

#include "mvd/check.hpp"

namespace mvd {

namespace {
constexpr double kPsnrCap = 99.0;
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  check(a.defined() && b.defined(), "psnr needs two images");
  check(a.sizes() == b.sizes(), "psnr shape mismatch");
  const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).square().mean().item<double>();
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double silhouette_iou(const torch::Tensor& image, const torch::Tensor& gt_image,
                      double threshold) {
  check(image.defined() && gt_image.defined(), "silhouette_iou needs two images");
  check(image.sizes() == gt_image.sizes(), "silhouette_iou shape mismatch");
  check(image.dim() == 3 && image.size(2) == 3, "images must be [H,W,3]");
  check(threshold >= 0.0 && threshold < 1.0, "threshold must be in [0,1)");
  auto fg = [&](const torch::Tensor& im) {
    return (im.to(torch::kFloat64) < 1.0 - threshold).any(2);
  };
  auto a = fg(image), b = fg(gt_image);
  const double inter = (a & b).sum().item<double>();
  const double uni = (a | b).sum().item<double>();
  if (uni == 0.0) return 1.0;  // both images are pure background: identical masks
  return inter / uni;
}

}  // namespace mvd
