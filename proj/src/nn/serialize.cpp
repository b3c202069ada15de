#include "ivs/nn/serialize.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <json.hpp>
#include <ostream>

#include "ivs/errors.hpp"

namespace ivs::nn {

namespace {

constexpr std::array<char, 4> kMagic = {'I', 'V', 'S', 'P'};

template <typename UInt>
void write_le(std::ostream& out, UInt v) {
  std::array<char, sizeof(UInt)> bytes;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename UInt>
UInt read_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(UInt)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw FormatError(std::string("model file truncated while reading ") + what);
  }
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
  return v;
}

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ull;
  void add(std::uint64_t word) {
    for (int i = 0; i < 8; ++i) {
      h ^= (word >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ull;
    }
  }
};

}  // namespace

void NetworkParams::add(std::string name, Matrix value) {
  if (has(name)) throw FormatError("duplicate tensor '" + name + "'");
  tensors.push_back({std::move(name), std::move(value)});
}

bool NetworkParams::has(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

const Matrix& NetworkParams::tensor(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw FormatError(architecture + ": missing tensor '" + std::string(name) + "'");
}

const std::string& NetworkParams::attribute(std::string_view key) const {
  const auto it = attributes.find(std::string(key));
  if (it == attributes.end()) throw FormatError(architecture + ": missing attribute '" + std::string(key) + "'");
  return it->second;
}

double NetworkParams::number(std::string_view key) const { return parse_double(attribute(key)); }

void NetworkParams::set_number(const std::string& key, double value) { attributes[key] = format_double(value); }

void NetworkParams::expect_architecture(std::string_view expected) const {
  if (architecture != expected) {
    throw FormatError("descriptor mismatch: file holds '" + architecture + "', expected '" +
                      std::string(expected) + "'");
  }
}

bool operator==(const NetworkParams& a, const NetworkParams& b) {
  if (a.architecture != b.architecture || a.layers != b.layers || a.attributes != b.attributes ||
      a.tensors.size() != b.tensors.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    const auto& x = a.tensors[i];
    const auto& y = b.tensors[i];
    if (x.name != y.name || x.value.rows() != y.value.rows() || x.value.cols() != y.value.cols()) return false;
    for (Eigen::Index k = 0; k < x.value.size(); ++k) {
      if (std::bit_cast<std::uint64_t>(x.value.data()[k]) != std::bit_cast<std::uint64_t>(y.value.data()[k])) {
        return false;
      }
    }
  }
  return true;
}

void save_params(const NetworkParams& params, std::ostream& out) {
  nlohmann::ordered_json header;
  header["architecture"] = params.architecture;
  header["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : params.layers) {
    header["layers"].push_back(
        {{"name", l.name}, {"kind", l.kind}, {"fan_in", l.fan_in}, {"fan_out", l.fan_out}, {"activation", l.activation}});
  }
  header["tensors"] = nlohmann::ordered_json::array();
  std::uint64_t count = 0;
  for (const auto& t : params.tensors) {
    header["tensors"].push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
    count += static_cast<std::uint64_t>(t.value.size());
  }
  header["attributes"] = params.attributes;
  const std::string text = header.dump();

  out.write(kMagic.data(), kMagic.size());
  write_le<std::uint32_t>(out, NetworkParams::kFormatVersion);
  write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_le<std::uint64_t>(out, count);
  Fnv1a digest;
  for (const auto& t : params.tensors) {
    for (Eigen::Index i = 0; i < t.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.value.cols(); ++j) {
        const auto word = std::bit_cast<std::uint64_t>(t.value(i, j));
        write_le<std::uint64_t>(out, word);
        digest.add(word);
      }
    }
  }
  write_le<std::uint64_t>(out, digest.h);
  if (!out) throw FormatError("failed writing model data");
}

NetworkParams load_params(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 4 || magic != kMagic) throw FormatError("not a model file (bad magic)");
  const auto version = read_le<std::uint32_t>(in, "version");
  if (version != NetworkParams::kFormatVersion) {
    throw FormatError("unsupported format version " + std::to_string(version));
  }
  const auto header_len = read_le<std::uint64_t>(in, "header length");
  if (header_len > (1ull << 28)) throw FormatError("corrupted header length");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (in.gcount() != static_cast<std::streamsize>(header_len)) throw FormatError("model file truncated in header");

  NetworkParams params;
  std::uint64_t expected = 0;
  try {
    const auto header = nlohmann::json::parse(text);
    params.architecture = header.at("architecture").get<std::string>();
    for (const auto& l : header.at("layers")) {
      params.layers.push_back({l.at("name").get<std::string>(), l.at("kind").get<std::string>(), l.at("fan_in").get<int>(),
                               l.at("fan_out").get<int>(), l.at("activation").get<std::string>()});
    }
    for (const auto& t : header.at("tensors")) {
      const auto rows = t.at("rows").get<Eigen::Index>();
      const auto cols = t.at("cols").get<Eigen::Index>();
      if (rows < 0 || cols < 0) throw FormatError("negative tensor shape");
      params.tensors.push_back({t.at("name").get<std::string>(), Matrix(rows, cols)});
      expected += static_cast<std::uint64_t>(rows * cols);
    }
    params.attributes = header.at("attributes").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model header: ") + e.what());
  }

  const auto count = read_le<std::uint64_t>(in, "value count");
  if (count != expected) {
    throw FormatError("corrupted length: header describes " + std::to_string(expected) + " values, payload claims " +
                      std::to_string(count));
  }
  Fnv1a digest;
  for (auto& t : params.tensors) {
    for (Eigen::Index i = 0; i < t.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.value.cols(); ++j) {
        const auto word = read_le<std::uint64_t>(in, "payload");
        digest.add(word);
        t.value(i, j) = std::bit_cast<double>(word);
      }
    }
  }
  if (read_le<std::uint64_t>(in, "digest") != digest.h) throw FormatError("payload digest mismatch");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after payload");
  return params;
}

void save_params(const NetworkParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  save_params(params, out);
}

NetworkParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return load_params(in);
}

void store_mlp(NetworkParams& params, const std::string& prefix, const Mlp& mlp) {
  if (mlp.input_norm) {
    params.layers.push_back({prefix + ".norm", "batch_norm", static_cast<int>(mlp.norm.dim()),
                             static_cast<int>(mlp.norm.dim()), "identity"});
    params.add(prefix + ".norm.mean", mlp.norm.running_mean);
    params.add(prefix + ".norm.var", mlp.norm.running_var);
    params.set_number(prefix + ".norm.eps", mlp.norm.eps);
  }
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const auto& l = mlp.layers[i];
    const std::string name = prefix + ".l" + std::to_string(i);
    params.layers.push_back({name, "dense", l.fan_in(), l.fan_out(), std::string(to_string(l.activation))});
    params.add(name + ".weight", l.weight.value);
    params.add(name + ".bias", l.bias.value);
  }
}

Mlp restore_mlp(const NetworkParams& params, const std::string& prefix) {
  Mlp mlp;
  for (const auto& d : params.layers) {
    if (d.name == prefix + ".norm") {
      mlp.input_norm = true;
      mlp.norm.running_mean = params.tensor(prefix + ".norm.mean");
      mlp.norm.running_var = params.tensor(prefix + ".norm.var");
      mlp.norm.eps = params.number(prefix + ".norm.eps");
      mlp.norm.updates = 1;
      if (mlp.norm.running_mean.size() != d.fan_in || mlp.norm.running_var.size() != d.fan_in) {
        throw FormatError(prefix + ": batch-norm statistics do not match the descriptor");
      }
      if ((mlp.norm.running_var.array() < 0.0).any()) throw FormatError(prefix + ": negative running variance");
      continue;
    }
    if (d.name != prefix + ".l" + std::to_string(mlp.layers.size())) continue;
    if (d.kind != "dense") throw FormatError(prefix + ": unexpected layer kind '" + d.kind + "'");
    Dense layer;
    layer.weight = Parameter(d.name + ".weight", params.tensor(d.name + ".weight"));
    layer.bias = Parameter(d.name + ".bias", params.tensor(d.name + ".bias"));
    layer.activation = activation_from_string(d.activation);
    if (layer.fan_in() != d.fan_in || layer.fan_out() != d.fan_out || layer.bias.value.rows() != d.fan_out ||
        layer.bias.value.cols() != 1) {
      throw FormatError(d.name + ": tensor shapes do not match the descriptor");
    }
    if (!mlp.layers.empty() && mlp.layers.back().fan_out() != layer.fan_in()) {
      throw FormatError(d.name + ": layer chain is inconsistent");
    }
    mlp.layers.push_back(std::move(layer));
  }
  if (mlp.layers.empty()) throw FormatError(params.architecture + ": no layers stored under '" + prefix + "'");
  if (mlp.input_norm && mlp.norm.dim() != mlp.input_dim()) throw FormatError(prefix + ": normalization size mismatch");
  return mlp;
}

std::string format_double(double v) {
  std::array<char, 40> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) throw FormatError("not a number: '" + std::string(s) + "'");
  return v;
}

}  // namespace ivs::nn
