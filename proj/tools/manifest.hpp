#pragma once

// Run manifest: the command, seed, config digest and SHA-256 of every input
// and output file, written as JSON next to the outputs.

#include <filesystem>
#include <json.hpp>
#include <string>
#include <string_view>

namespace ivs::cli {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

class Manifest {
 public:
  Manifest(std::string command, std::filesystem::path base);

  /// Paths are recorded relative to the base directory when they lie under it.
  void input(const std::filesystem::path& p);
  void output(const std::filesystem::path& p);
  nlohmann::ordered_json& info() { return doc_["info"]; }
  void write(const std::filesystem::path& p) const;

 private:
  std::string label(const std::filesystem::path& p) const;

  std::filesystem::path base_;
  nlohmann::ordered_json doc_;
};

}  // namespace ivs::cli
