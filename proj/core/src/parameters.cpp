#include "casr/parameters.hpp"

#include <cstring>

#include "casr/errors.hpp"

namespace casr {

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  return splitmix64(splitmix64(base) ^ (salt * 0x9E3779B97F4A7C15ULL + 1));
}

std::uint64_t derive_seed(std::uint64_t base, const std::string& salt) {
  // FNV-1a keeps string salts platform independent.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : salt) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return derive_seed(base, h);
}

double sample_normal(Rng& rng, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(rng);
}

double sample_uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(rng);
}

std::size_t sample_index(Rng& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

Tensor ParameterStore::add(const std::string& name, Tensor tensor) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  items_.push_back({name, tensor});
  return tensor;
}

Tensor ParameterStore::normal(const std::string& name, Shape shape,
                              double stddev, Rng& rng, bool trainable) {
  std::vector<double> values(shape_numel(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : values) v = dist(rng);
  return add(name, Tensor(std::move(shape), std::move(values), trainable));
}

Tensor ParameterStore::zeros(const std::string& name, Shape shape,
                             bool trainable) {
  return add(name, Tensor::zeros(std::move(shape), trainable));
}

Tensor ParameterStore::constant(const std::string& name, Shape shape,
                                double value, bool trainable) {
  return add(name, Tensor::full(std::move(shape), value, trainable));
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return true;
  return false;
}

Tensor ParameterStore::get(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return p.tensor;
  throw ConfigError("unknown parameter '" + name + "'");
}

std::vector<Tensor> ParameterStore::trainable() const {
  std::vector<Tensor> out;
  for (const auto& p : items_)
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& tensors) {
  std::vector<std::vector<double>> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) {
    const auto d = t.data();
    out.emplace_back(d.begin(), d.end());
  }
  return out;
}

bool bit_identical(const std::vector<std::vector<double>>& a,
                   const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    if (!a[i].empty() &&
        std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace casr
