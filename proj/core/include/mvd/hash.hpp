#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mvd {

std::string sha256_hex(const void* data, size_t nbytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);

// Digest over dtype, shape and raw element bytes of each tensor in order.
// Tensors are brought to contiguous CPU storage first.
std::string sha256_tensors(const std::vector<torch::Tensor>& tensors);

}  // namespace mvd
