#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "neural_core/tensor.hpp"

namespace cvtnet::nn {

/// Named parameters with matching gradient accumulators. Iteration is by name.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    Tensor<T> grad;
  };

  void add(const std::string& name, Tensor<T> value);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const Tensor<T>& value(const std::string& name) const { return entry(name).value; }
  Tensor<T>& mutable_value(const std::string& name) { return entry(name).value; }
  const Tensor<T>& grad(const std::string& name) const { return entry(name).grad; }
  Tensor<T>& mutable_grad(const std::string& name) { return entry(name).grad; }

  void zero_grad();
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, e] : entries_) out.add(name, e.value.template cast<U>());
    return out;
  }

 private:
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;

  std::map<std::string, Entry> entries_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization from a seeded engine.
template <typename T>
Tensor<T> uniform_init(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng);

/// p <- p - lr * g, then zero the gradients.
template <typename T>
void sgd_step(ParamStore<T>& params, double learning_rate);

// Checkpoint: "CVTP", version u32, count u32, then per parameter
// (name length u32, name bytes, rank u32, dims u32 x rank, float32 data).
void save_checkpoint(const ParamStore<float>& params, const std::string& path);
ParamStore<float> load_checkpoint(const std::string& path);

/// FNV-1a over names, shapes and float bytes; used for config/determinism hashing.
std::uint64_t hash_params(const ParamStore<float>& params);

}  // namespace cvtnet::nn
