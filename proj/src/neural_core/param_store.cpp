#include "neural_core/param_store.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "common/binary_io.hpp"

namespace cvtnet::nn {
namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
void ParamStore<T>::add(const std::string& name, Tensor<T> value) {
  require(!contains(name), ErrorCode::Duplicate, "duplicate parameter " + name);
  Tensor<T> grad(value.shape());
  entries_.emplace(name, Entry{std::move(value), std::move(grad)});
}

template <typename T>
typename ParamStore<T>::Entry& ParamStore<T>::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorCode::NotFound, "unknown parameter " + name);
  return it->second;
}

template <typename T>
const typename ParamStore<T>::Entry& ParamStore<T>::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorCode::NotFound, "unknown parameter " + name);
  return it->second;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, e] : entries_) e.grad.fill(T(0));
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.size();
  return n;
}

template <typename T>
Tensor<T> uniform_init(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
void sgd_step(ParamStore<T>& params, double learning_rate) {
  const T lr = static_cast<T>(learning_rate);
  for (auto& [name, e] : params) {
    T* p = e.value.data();
    T* g = e.grad.data();
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      p[i] -= lr * g[i];
      g[i] = T(0);
    }
  }
}

void save_checkpoint(const ParamStore<float>& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path);
  io::write_bytes(out, "CVTP", 4);
  io::write_le<std::uint32_t>(out, kCheckpointVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, e] : params) {
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    io::write_bytes(out, name.data(), name.size());
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    io::write_bytes(out, e.value.data(), e.value.size() * sizeof(float));
  }
  if (!out) fail(ErrorCode::Io, "failed writing " + path);
}

ParamStore<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  io::expect_magic(in, "CVTP", path);
  const auto version = io::read_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    fail(ErrorCode::Format, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = io::read_le<std::uint32_t>(in, "count");
  ParamStore<float> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = io::read_le<std::uint32_t>(in, "name length");
    require(name_len < (1u << 16), ErrorCode::Format, "implausible parameter name length");
    std::string name(name_len, '\0');
    io::read_bytes(in, name.data(), name_len, "parameter name");
    const auto rank = io::read_le<std::uint32_t>(in, "rank");
    require(rank <= 8, ErrorCode::Format, "implausible tensor rank in " + path);
    Shape shape(rank);
    for (auto& d : shape) d = io::read_le<std::uint32_t>(in, "dim");
    Tensor<float> t(shape);
    io::read_bytes(in, t.data(), t.size() * sizeof(float), "parameter data");
    params.add(name, std::move(t));
  }
  return params;
}

std::uint64_t hash_params(const ParamStore<float>& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
  };
  for (const auto& [name, e] : params) {
    mix(name.data(), name.size());
    for (auto d : e.value.shape()) mix(&d, sizeof d);
    mix(e.value.data(), e.value.size() * sizeof(float));
  }
  return h;
}

template class ParamStore<float>;
template class ParamStore<double>;
template Tensor<float> uniform_init<float>(const Shape&, std::size_t, std::mt19937_64&);
template Tensor<double> uniform_init<double>(const Shape&, std::size_t, std::mt19937_64&);
template void sgd_step<float>(ParamStore<float>&, double);
template void sgd_step<double>(ParamStore<double>&, double);

}  // namespace cvtnet::nn
