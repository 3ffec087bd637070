#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "neural_core/param_store.hpp"
#include "neural_core/tensor.hpp"

namespace cvtnet::nn {

/// Reverse-mode autodiff over a recorded tape, restricted to the operations the
/// network needs. Matrices are rank-2 [rows, cols]; token sequences are [tokens, channels].
///
/// Every op checks its output for NaN/Inf and throws a data error naming the op.
/// A tape built with requires_grad = false records values only and cannot run backward.
template <typename T>
class Tape {
 public:
  struct Var {
    static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();
    std::uint32_t id = kInvalid;
    bool valid() const { return id != kInvalid; }
  };

  explicit Tape(bool requires_grad = true, bool trace_branches = false)
      : requires_grad_(requires_grad), trace_branches_(trace_branches) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor<T> value);
  /// Leaf that aliases the store's tensor; the store must outlive the tape.
  Var parameter(const ParamStore<T>& store, const std::string& name);

  const Tensor<T>& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }

  Var matmul(Var a, Var b);
  /// x [n, in] * W[out, in]^T + b[out]
  Var linear(Var x, Var weight, Var bias);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double s);
  Var sum(Var x);
  Var relu(Var x);
  Var reshape(Var x, Shape shape);
  Var transpose(Var x);
  Var concat_cols(std::span<const Var> parts);
  /// Normalizes over the last axis.
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var softmax_rows(Var x);
  /// Multi-head scaled dot-product attention on already-projected q [n, d], k [m, d], v [m, d].
  Var attention(Var q, Var k, Var v, std::size_t heads);
  /// x [c_in, h, w], kernel [c_out, c_in, k_h, 1], bias [c_out]; width untouched.
  Var conv_height(Var x, Var kernel, Var bias, std::size_t stride);
  /// V[k] = sum_i a[i, k] * (x[i] - c[k]) for assign [n, K], x [n, D], centers [K, D].
  Var vlad_aggregate(Var assign, Var x, Var centers);
  Var l2_normalize_rows(Var x, double eps = 1e-12);
  /// k_p * (alpha + max_p d(q, p)) - sum_n d(q, n), clamped at zero; d = squared Euclidean.
  Var triplet_loss(Var query, std::span<const Var> positives, std::span<const Var> negatives,
                   double alpha);

  /// Accumulates d loss / d param into params' gradient slots. Repeated calls add up.
  void backward(Var loss, ParamStore<T>& params);

  /// Hash of every discrete branch taken (ReLU signs, triplet argmax/clamp) when tracing.
  std::uint64_t branch_signature() const { return signature_; }
  std::size_t node_count() const { return nodes_.size(); }
  bool requires_grad() const { return requires_grad_; }

 private:
  using BackwardFn = std::function<void(Tape&, std::uint32_t)>;

  struct Node {
    Tensor<T> own;
    const Tensor<T>* ext = nullptr;
    std::string param_name;
    bool needs_grad = false;
    std::vector<Tensor<T>> saved;
    BackwardFn backward;
  };

  Var push(Tensor<T> value, const char* op, std::initializer_list<Var> inputs);
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  Node& node(Var v) { return nodes_[v.id]; }
  const Tensor<T>& grad_of(std::uint32_t id) const { return grads_[id]; }
  Tensor<T>& accumulate(Var v);
  void trace(std::uint64_t bits);

  bool requires_grad_;
  bool trace_branches_;
  std::uint64_t signature_ = 1469598103934665603ull;
  std::deque<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace cvtnet::nn
