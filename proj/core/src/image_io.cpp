#include "mvd/image_io.hpp"

#include <fstream>
#include <string>

#include "mvd/check.hpp"

namespace mvd {

void write_ppm(const std::filesystem::path& path, const torch::Tensor& image_hw3) {
  check(image_hw3.dim() == 3 && image_hw3.size(2) == 3,
        "write_ppm: expected [H,W,3] tensor");
  auto img = image_hw3.detach().to(torch::kFloat32).clamp(0.0, 1.0).contiguous();
  const int64_t h = img.size(0), w = img.size(1);
  auto bytes = (img * 255.0f).round().to(torch::kUInt8).contiguous();

  std::ofstream out(path, std::ios::binary);
  check(out.good(), "write_ppm: cannot open " + path.string());
  out << "P6\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data_ptr<uint8_t>()), h * w * 3);
  check(out.good(), "write_ppm: write failed for " + path.string());
}

torch::Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "read_ppm: cannot open " + path.string());
  std::string magic;
  in >> magic;
  check(magic == "P6", "read_ppm: not a P6 file: " + path.string());
  int64_t w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  check(w > 0 && h > 0 && maxval == 255, "read_ppm: bad header in " + path.string());
  in.get();  // single whitespace after header
  auto bytes = torch::empty({h, w, 3}, torch::kUInt8);
  in.read(reinterpret_cast<char*>(bytes.data_ptr<uint8_t>()), h * w * 3);
  check(in.gcount() == h * w * 3, "read_ppm: truncated pixel data in " + path.string());
  return bytes.to(torch::kFloat32) / 255.0f;
}

torch::Tensor quantize_8bit(const torch::Tensor& image_hw3) {
  return (image_hw3.clamp(0.0, 1.0) * 255.0).round() / 255.0;
}

torch::Tensor tile_grid(const std::vector<torch::Tensor>& images, int cols) {
  check(!images.empty() && cols >= 1, "tile_grid: need at least one image");
  const int64_t h = images[0].size(0), w = images[0].size(1);
  const int rows = static_cast<int>((images.size() + cols - 1) / cols);
  auto grid = torch::ones({rows * h, cols * w, 3}, torch::kFloat32);
  for (size_t i = 0; i < images.size(); ++i) {
    check(images[i].size(0) == h && images[i].size(1) == w,
          "tile_grid: images must share one size");
    const int64_t r = static_cast<int64_t>(i) / cols, c = static_cast<int64_t>(i) % cols;
    grid.index_put_({torch::indexing::Slice(r * h, (r + 1) * h),
                     torch::indexing::Slice(c * w, (c + 1) * w)},
                    images[i].to(torch::kFloat32));
  }
  return grid;
}

}  // namespace mvd
