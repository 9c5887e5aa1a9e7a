#include "mvd/hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>

#include "mvd/check.hpp"

namespace mvd {

namespace {

struct Sha256 {
  EVP_MD_CTX* ctx;
  Sha256() : ctx(EVP_MD_CTX_new()) {
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  }
  ~Sha256() { EVP_MD_CTX_free(ctx); }
  void update(const void* data, size_t n) { EVP_DigestUpdate(ctx, data, n); }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest.data(), &len);
    static const char* k = "0123456789abcdef";
    std::string out(2 * len, '0');
    for (unsigned int i = 0; i < len; ++i) {
      out[2 * i] = k[digest[i] >> 4];
      out[2 * i + 1] = k[digest[i] & 0xf];
    }
    return out;
  }
};

}  // namespace

std::string sha256_hex(const void* data, size_t nbytes) {
  Sha256 h;
  h.update(data, nbytes);
  return h.hex();
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(text.data(), text.size());
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "sha256_file: cannot open " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<size_t>(in.gcount()));
  }
  return h.hex();
}

std::string sha256_tensors(const std::vector<torch::Tensor>& tensors) {
  Sha256 h;
  for (const auto& t : tensors) {
    auto c = t.detach().cpu().contiguous();
    const auto dtype = static_cast<int32_t>(c.scalar_type());
    h.update(&dtype, sizeof(dtype));
    for (auto s : c.sizes()) {
      const int64_t dim = s;
      h.update(&dim, sizeof(dim));
    }
    h.update(c.data_ptr(), c.numel() * c.element_size());
  }
  return h.hex();
}

}  // namespace mvd
