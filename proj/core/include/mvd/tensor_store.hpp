#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace mvd {

// Checkpoint container: named tensors plus one JSON metadata document in a
// single file. Entries are written sorted by name and the JSON with sorted
// keys, so equal contents produce equal bytes.
class TensorStore {
 public:
  static constexpr uint32_t kFormatVersion = 1;

  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, const torch::Tensor& tensor);
  torch::Tensor get(const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<std::string> names() const;
  size_t size() const { return tensors_.size(); }

  // Digest over all entries (names, dtypes, shapes, bytes) and the metadata.
  std::string content_hash() const;

  void save(const std::filesystem::path& path) const;
  static TensorStore load(const std::filesystem::path& path);

 private:
  std::map<std::string, torch::Tensor> tensors_;
};

}  // namespace mvd
