#pragma once

// Versioned container for model weights and other labeled tensors.
//
// Layout (all integers little-endian):
//   "IVSP"                      4-byte magic
//   u32 format version
//   u64 header length, then the header as UTF-8 JSON: architecture name,
//       layer descriptors, tensor names and shapes, string attributes
//   u64 value count, then that many IEEE-754 doubles (little-endian),
//       tensors in header order, each row-major
//   u64 FNV-1a digest of the payload bytes

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ivs/nn/graph.hpp"
#include "ivs/nn/layers.hpp"

namespace ivs::nn {

struct LayerDescriptor {
  std::string name;
  std::string kind;  // dense, batch_norm, lstm_cell, ...
  int fan_in = 0;
  int fan_out = 0;
  std::string activation;

  friend bool operator==(const LayerDescriptor&, const LayerDescriptor&) = default;
};

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct NetworkParams {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string architecture;
  std::vector<LayerDescriptor> layers;
  std::vector<NamedTensor> tensors;
  std::map<std::string, std::string> attributes;

  void add(std::string name, Matrix value);
  bool has(std::string_view name) const;
  const Matrix& tensor(std::string_view name) const;
  const std::string& attribute(std::string_view key) const;
  double number(std::string_view key) const;
  void set_number(const std::string& key, double value);

  /// Throws FormatError unless the container holds the given architecture.
  void expect_architecture(std::string_view expected) const;
};

bool operator==(const NetworkParams& a, const NetworkParams& b);

void save_params(const NetworkParams& params, std::ostream& out);
NetworkParams load_params(std::istream& in);
void save_params(const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_params(const std::filesystem::path& path);

/// Stores an Mlp under `prefix`: one descriptor per layer plus its tensors.
void store_mlp(NetworkParams& params, const std::string& prefix, const Mlp& mlp);
/// Rebuilds an Mlp stored by store_mlp; shapes are checked against the descriptors.
Mlp restore_mlp(const NetworkParams& params, const std::string& prefix);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace ivs::nn
