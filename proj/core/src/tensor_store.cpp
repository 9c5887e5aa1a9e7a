#include "mvd/tensor_store.hpp"

#include <fstream>

#include "mvd/check.hpp"
#include "mvd/hash.hpp"

namespace mvd {

namespace {

const char kMagic[4] = {'M', 'V', 'D', 'T'};

std::string dtype_name(torch::Dtype d) {
  switch (d) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    default: fail("TensorStore: unsupported dtype");
  }
}

torch::Dtype dtype_from_name(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  if (s == "u8") return torch::kUInt8;
  fail("TensorStore: unknown dtype tag '" + s + "'");
}

}  // namespace

void TensorStore::put(const std::string& name, const torch::Tensor& tensor) {
  check(!name.empty(), "TensorStore::put: empty name");
  tensors_[name] = tensor.detach().cpu().contiguous();
}

torch::Tensor TensorStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  check(it != tensors_.end(), "TensorStore::get: no entry named '" + name + "'");
  return it->second;
}

bool TensorStore::has(const std::string& name) const {
  return tensors_.count(name) > 0;
}

std::vector<std::string> TensorStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

std::string TensorStore::content_hash() const {
  std::vector<torch::Tensor> ts;
  std::string tag = meta.dump();
  for (const auto& [name, t] : tensors_) {
    tag += "|" + name;
    ts.push_back(t);
  }
  return sha256_hex(tag + sha256_tensors(ts));
}

void TensorStore::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["meta"] = meta;
  auto entries = nlohmann::json::array();
  for (const auto& [name, t] : tensors_) {  // std::map: sorted by name
    nlohmann::json e;
    e["name"] = name;
    e["dtype"] = dtype_name(t.scalar_type());
    e["shape"] = std::vector<int64_t>(t.sizes().begin(), t.sizes().end());
    e["nbytes"] = static_cast<int64_t>(t.numel() * t.element_size());
    entries.push_back(e);
  }
  header["entries"] = entries;
  const std::string hjson = header.dump();

  std::ofstream out(path, std::ios::binary);
  check(out.good(), "TensorStore::save: cannot open " + path.string());
  out.write(kMagic, 4);
  const uint32_t ver = kFormatVersion;
  out.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  const uint64_t hlen = hjson.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hjson.data(), static_cast<std::streamsize>(hjson.size()));
  for (const auto& [name, t] : tensors_) {
    out.write(reinterpret_cast<const char*>(t.data_ptr()),
              static_cast<std::streamsize>(t.numel() * t.element_size()));
  }
  check(out.good(), "TensorStore::save: write failed for " + path.string());
}

TensorStore TensorStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "TensorStore::load: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  check(in.good() && std::equal(magic, magic + 4, kMagic),
        "TensorStore::load: bad magic in " + path.string());
  uint32_t ver = 0;
  in.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  check(ver == kFormatVersion,
        "TensorStore::load: unsupported format version in " + path.string());
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hjson(hlen, '\0');
  in.read(hjson.data(), static_cast<std::streamsize>(hlen));
  check(in.good(), "TensorStore::load: truncated header in " + path.string());
  auto header = nlohmann::json::parse(hjson);

  TensorStore store;
  store.meta = header.at("meta");
  for (const auto& e : header.at("entries")) {
    const std::string name = e.at("name");
    const auto shape = e.at("shape").get<std::vector<int64_t>>();
    const auto dtype = dtype_from_name(e.at("dtype"));
    const int64_t nbytes = e.at("nbytes");
    auto t = torch::empty(shape, dtype);
    check(t.numel() * t.element_size() == nbytes,
          "TensorStore::load: size mismatch for entry '" + name + "'");
    in.read(reinterpret_cast<char*>(t.data_ptr()), nbytes);
    check(in.gcount() == nbytes,
          "TensorStore::load: truncated data for entry '" + name + "'");
    store.tensors_[name] = t;
  }
  return store;
}

}  // namespace mvd
