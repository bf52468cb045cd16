#include "casr/checkpoint.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include "casr/binary_io.hpp"
#include "casr/config.hpp"
#include "casr/errors.hpp"

namespace casr {

namespace {

constexpr char kMagic[4] = {'C', 'A', 'S', 'R'};

bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
  if (prefixes.empty()) return true;
  for (const auto& p : prefixes)
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

}  // namespace

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

std::string Checkpoint::config_value(const std::string& key,
                                     const std::string& fallback) const {
  for (const auto& [k, v] : parse_key_values(config_text))
    if (k == key) return v;
  return fallback;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream os(std::ios::binary);
  os.write(kMagic, 4);
  binary::write_le<std::uint32_t>(os, ckpt.version);
  if (ckpt.config_text.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError("checkpoint config text too large");
  }
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.config_text.size()));
  os.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
  binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("tensor name too long: " + name.substr(0, 32));
    }
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw FormatError("tensor rank too large for " + name);
    }
    binary::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    binary::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double x : t.data()) binary::write_le<double>(os, x);
  }
  return os.str();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  if (bytes.size() < 4) throw CorruptionError("checkpoint truncated before magic");
  if (binary::read_bytes(is, 4) != std::string(kMagic, 4)) {
    throw FormatError("not a checkpoint: wrong magic bytes");
  }
  Checkpoint ckpt;
  ckpt.version = binary::read_le<std::uint32_t>(is);
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  const auto config_len = binary::read_le<std::uint32_t>(is);
  ckpt.config_text = binary::read_bytes(is, config_len);
  const auto count = binary::read_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = binary::read_le<std::uint16_t>(is);
    std::string name = binary::read_bytes(is, name_len);
    const auto rank = binary::read_le<std::uint8_t>(is);
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = binary::read_le<std::uint32_t>(is);
      numel *= d;
    }
    if (rank == 0) throw CorruptionError("tensor '" + name + "' has rank 0");
    const auto remaining = bytes.size() - static_cast<std::size_t>(is.tellg());
    if (numel > remaining / sizeof(double)) {
      throw CorruptionError("tensor '" + name + "' payload truncated");
    }
    std::vector<double> data(numel);
    for (double& x : data) x = binary::read_le<double>(is);
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw CorruptionError("trailing bytes after checkpoint tensors");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

void append_parameters(Checkpoint& ckpt, const ParameterStore& store) {
  for (const auto& p : store.items()) ckpt.tensors.emplace_back(p.name, p.tensor.detach());
}

std::size_t load_parameters(ParameterStore& store, const Checkpoint& ckpt,
                            const std::vector<std::string>& prefixes, bool require_all) {
  std::size_t copied = 0;
  for (const auto& p : store.items()) {
    if (!has_prefix(p.name, prefixes)) continue;
    if (!ckpt.has(p.name)) {
      if (require_all) throw FormatError("checkpoint lacks parameter '" + p.name + "'");
      continue;
    }
    const Tensor& src = ckpt.get(p.name);
    if (src.shape() != p.tensor.shape()) {
      throw FormatError("parameter '" + p.name + "' has shape " +
                        shape_to_string(src.shape()) + " in checkpoint but " +
                        shape_to_string(p.tensor.shape()) + " in the model");
    }
    Tensor target = p.tensor;
    auto dst = target.mutable_data();
    const auto values = src.data();
    std::copy(values.begin(), values.end(), dst.begin());
    ++copied;
  }
  return copied;
}

}  // namespace casr
