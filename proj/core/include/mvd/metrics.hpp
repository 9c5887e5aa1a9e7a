#pragma once

#include <torch/torch.h>

namespace mvd {

// Peak signal-to-noise ratio in dB for images in [0,1]: 10*log10(1/mse),
// capped at 99 dB (the identical-image sentinel). Throws on shape mismatch.
double psnr(const torch::Tensor& a, const torch::Tensor& b);

// IoU of the non-background masks of two [H,W,3] images over a white
// backdrop: a pixel is foreground when any channel < 1 - threshold. Two empty
// masks are identical, so their IoU is 1.
double silhouette_iou(const torch::Tensor& image, const torch::Tensor& gt_image,
                      double threshold = 0.05);

}  // namespace mvd
