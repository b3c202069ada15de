#include "manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>

#include "ivs/errors.hpp"

namespace ivs::cli {

namespace {

struct Digest {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};

  Digest() {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx.get(), data, n) != 1) throw Error("sha256: update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) throw Error("sha256: final failed");
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 15];
    }
    return out;
  }
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Digest d;
  d.update(bytes.data(), bytes.size());
  return d.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  Digest d;
  std::array<char, 1 << 16> buf{};
  while (f) {
    f.read(buf.data(), buf.size());
    d.update(buf.data(), static_cast<std::size_t>(f.gcount()));
  }
  return d.hex();
}

Manifest::Manifest(std::string command, std::filesystem::path base) : base_(std::move(base)) {
  doc_["command"] = std::move(command);
  doc_["info"] = nlohmann::ordered_json::object();
  doc_["inputs"] = nlohmann::ordered_json::object();
  doc_["outputs"] = nlohmann::ordered_json::object();
}

std::string Manifest::label(const std::filesystem::path& p) const {
  const auto rel = std::filesystem::relative(p, base_);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return p.generic_string();
}

void Manifest::input(const std::filesystem::path& p) { doc_["inputs"][label(p)] = sha256_file(p); }

void Manifest::output(const std::filesystem::path& p) { doc_["outputs"][label(p)] = sha256_file(p); }

void Manifest::write(const std::filesystem::path& p) const {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  f << doc_.dump(2) << '\n';
}

}  // namespace ivs::cli
