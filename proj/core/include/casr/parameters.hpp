// Named parameter registry and seeded initialization helpers.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "casr/tensor.hpp"

namespace casr {

using Rng = std::mt19937_64;

// Derives an independent stream seed from a base seed and a salt.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);
std::uint64_t derive_seed(std::uint64_t base, const std::string& salt);

double sample_normal(Rng& rng, double mean = 0.0, double stddev = 1.0);
double sample_uniform(Rng& rng, double lo = 0.0, double hi = 1.0);
std::size_t sample_index(Rng& rng, std::size_t n);

struct Parameter {
  std::string name;
  Tensor tensor;
};

// Ordered collection of model tensors. Insertion order is the persistence
// order; names are unique. Frozen entries are stored with requires_grad off.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor tensor);
  Tensor normal(const std::string& name, Shape shape, double stddev, Rng& rng,
                bool trainable = true);
  Tensor zeros(const std::string& name, Shape shape, bool trainable = true);
  Tensor constant(const std::string& name, Shape shape, double value,
                  bool trainable = true);

  const std::vector<Parameter>& items() const { return items_; }
  bool contains(const std::string& name) const;
  Tensor get(const std::string& name) const;
  std::vector<Tensor> trainable() const;

  void zero_grad();
  std::size_t total_size() const;

 private:
  std::vector<Parameter> items_;
};

// Bitwise snapshot of parameter values, for frozen-parameter assertions.
std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& tensors);
bool bit_identical(const std::vector<std::vector<double>>& a,
                   const std::vector<std::vector<double>>& b);

}  // namespace casr
