#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <vector>

namespace mvd {

// Binary PPM (P6), 8-bit RGB. Chosen over compressed formats so that artifact
// bytes are a pure function of pixel values.
void write_ppm(const std::filesystem::path& path, const torch::Tensor& image_hw3);

// Returns [H,W,3] float32 in [0,1].
torch::Tensor read_ppm(const std::filesystem::path& path);

// Quantization used on disk: round(x*255)/255.
torch::Tensor quantize_8bit(const torch::Tensor& image_hw3);

// Tile equally sized [H,W,3] images into one grid image, row-major.
torch::Tensor tile_grid(const std::vector<torch::Tensor>& images, int cols);

}  // namespace mvd
