#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neural_core/param_store.hpp"
#include "neural_core/tape.hpp"

namespace cvtnet::nn {

enum class Init { Uniform, Ones, Zeros };

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 1;
  Init init = Init::Uniform;
};

using SpecList = std::vector<ParamSpec>;

void linear_specs(SpecList& specs, const std::string& name, std::size_t in, std::size_t out);
void layer_norm_specs(SpecList& specs, const std::string& name, std::size_t dim);
void ffn_specs(SpecList& specs, const std::string& prefix, std::size_t dim, std::size_t hidden);
void attention_specs(SpecList& specs, const std::string& prefix, std::size_t dim);

/// Draws every tensor in spec order from one engine seeded with `seed`.
template <typename T>
ParamStore<T> materialize(const SpecList& specs, std::uint64_t seed);

/// Throws unless `params` holds exactly the specified names with matching shapes.
template <typename T>
void check_params(const ParamStore<T>& params, const SpecList& specs);

std::size_t spec_parameter_count(const SpecList& specs);

template <typename T>
using Var = typename Tape<T>::Var;

template <typename T>
Var<T> linear(Tape<T>& tape, const ParamStore<T>& params, const std::string& name, Var<T> x);

template <typename T>
Var<T> layer_norm(Tape<T>& tape, const ParamStore<T>& params, const std::string& name, Var<T> x);

/// fc1 -> ReLU -> fc2, applied tokenwise.
template <typename T>
Var<T> ffn(Tape<T>& tape, const ParamStore<T>& params, const std::string& prefix, Var<T> x);

/// Q, K, V projected from their sources; per-head softmax(Q K^T / sqrt(d_k)) V; heads
/// concatenated and projected. No positional encoding: the op commutes with any
/// simultaneous permutation of the token rows of all three sources.
template <typename T>
Var<T> multi_head_attention(Tape<T>& tape, const ParamStore<T>& params, const std::string& prefix,
                            Var<T> query_src, Var<T> key_src, Var<T> value_src, std::size_t heads);

}  // namespace cvtnet::nn
