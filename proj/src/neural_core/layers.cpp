#include "neural_core/layers.hpp"

#include <random>
#include <set>

namespace cvtnet::nn {

void linear_specs(SpecList& specs, const std::string& name, std::size_t in, std::size_t out) {
  specs.push_back({name + ".weight", {out, in}, in, Init::Uniform});
  specs.push_back({name + ".bias", {out}, in, Init::Zeros});
}

void layer_norm_specs(SpecList& specs, const std::string& name, std::size_t dim) {
  specs.push_back({name + ".gamma", {dim}, dim, Init::Ones});
  specs.push_back({name + ".beta", {dim}, dim, Init::Zeros});
}

void ffn_specs(SpecList& specs, const std::string& prefix, std::size_t dim, std::size_t hidden) {
  linear_specs(specs, prefix + ".fc1", dim, hidden);
  linear_specs(specs, prefix + ".fc2", hidden, dim);
}

void attention_specs(SpecList& specs, const std::string& prefix, std::size_t dim) {
  for (const char* part : {".q", ".k", ".v", ".o"}) linear_specs(specs, prefix + part, dim, dim);
}

std::size_t spec_parameter_count(const SpecList& specs) {
  std::size_t n = 0;
  for (const auto& s : specs) n += shape_size(s.shape);
  return n;
}

template <typename T>
ParamStore<T> materialize(const SpecList& specs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ParamStore<T> params;
  for (const auto& s : specs) {
    switch (s.init) {
      case Init::Uniform: params.add(s.name, uniform_init<T>(s.shape, s.fan_in, rng)); break;
      case Init::Ones: params.add(s.name, Tensor<T>(s.shape, T(1))); break;
      case Init::Zeros: params.add(s.name, Tensor<T>(s.shape, T(0))); break;
    }
  }
  return params;
}

template <typename T>
void check_params(const ParamStore<T>& params, const SpecList& specs) {
  std::set<std::string> expected;
  for (const auto& s : specs) {
    expected.insert(s.name);
    require(params.contains(s.name), ErrorCode::Format, "checkpoint is missing parameter " + s.name);
    require(params.value(s.name).shape() == s.shape, ErrorCode::Shape,
            "parameter " + s.name + " has shape " + shape_string(params.value(s.name).shape()) +
                ", model expects " + shape_string(s.shape));
  }
  for (const auto& [name, e] : params) {
    require(expected.count(name) != 0, ErrorCode::Format, "checkpoint has unexpected parameter " + name);
  }
}

template <typename T>
Var<T> linear(Tape<T>& tape, const ParamStore<T>& params, const std::string& name, Var<T> x) {
  return tape.linear(x, tape.parameter(params, name + ".weight"), tape.parameter(params, name + ".bias"));
}

template <typename T>
Var<T> layer_norm(Tape<T>& tape, const ParamStore<T>& params, const std::string& name, Var<T> x) {
  return tape.layer_norm(x, tape.parameter(params, name + ".gamma"), tape.parameter(params, name + ".beta"));
}

template <typename T>
Var<T> ffn(Tape<T>& tape, const ParamStore<T>& params, const std::string& prefix, Var<T> x) {
  return linear(tape, params, prefix + ".fc2", tape.relu(linear(tape, params, prefix + ".fc1", x)));
}

template <typename T>
Var<T> multi_head_attention(Tape<T>& tape, const ParamStore<T>& params, const std::string& prefix,
                            Var<T> query_src, Var<T> key_src, Var<T> value_src, std::size_t heads) {
  const Var<T> q = linear(tape, params, prefix + ".q", query_src);
  const Var<T> k = linear(tape, params, prefix + ".k", key_src);
  const Var<T> v = linear(tape, params, prefix + ".v", value_src);
  return linear(tape, params, prefix + ".o", tape.attention(q, k, v, heads));
}

#define CVTNET_INSTANTIATE_LAYERS(T)                                                              \
  template ParamStore<T> materialize<T>(const SpecList&, std::uint64_t);                         \
  template void check_params<T>(const ParamStore<T>&, const SpecList&);                           \
  template Var<T> linear<T>(Tape<T>&, const ParamStore<T>&, const std::string&, Var<T>);          \
  template Var<T> layer_norm<T>(Tape<T>&, const ParamStore<T>&, const std::string&, Var<T>);      \
  template Var<T> ffn<T>(Tape<T>&, const ParamStore<T>&, const std::string&, Var<T>);             \
  template Var<T> multi_head_attention<T>(Tape<T>&, const ParamStore<T>&, const std::string&,     \
                                          Var<T>, Var<T>, Var<T>, std::size_t);

CVTNET_INSTANTIATE_LAYERS(float)
CVTNET_INSTANTIATE_LAYERS(double)

}  // namespace cvtnet::nn
