#include "neural_core/tape.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace cvtnet::nn {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;
template <typename T>
using CMapM = Eigen::Map<const Mat<T>>;
template <typename T>
using StridedM = Eigen::Map<Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedM = Eigen::Map<const Mat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
CMapM<T> as_matrix(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return CMapM<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MapM<T> as_matrix(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MapM<T>(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void expect_rank(const Shape& s, std::size_t rank, const char* op) {
  require(s.size() == rank, ErrorCode::Shape,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

template <typename T>
typename Tape<T>::Var Tape<T>::push(Tensor<T> value, const char* op, std::initializer_list<Var> inputs) {
  if (!value.all_finite()) fail(ErrorCode::Data, std::string("non-finite value produced by ") + op);
  Node n;
  n.own = std::move(value);
  for (Var v : inputs) n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
typename Tape<T>::Var Tape<T>::constant(Tensor<T> value) {
  return push(std::move(value), "constant", {});
}

template <typename T>
typename Tape<T>::Var Tape<T>::parameter(const ParamStore<T>& store, const std::string& name) {
  Node n;
  n.ext = &store.value(name);
  n.param_name = name;
  n.needs_grad = requires_grad_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  require(v.valid() && v.id < nodes_.size(), ErrorCode::InvalidArgument, "invalid tape variable");
  const Node& n = nodes_[v.id];
  return n.ext ? *n.ext : n.own;
}

template <typename T>
Tensor<T>& Tape<T>::accumulate(Var v) {
  Tensor<T>& g = grads_[v.id];
  if (g.empty()) g = Tensor<T>(value(v).shape());
  return g;
}

template <typename T>
void Tape<T>::trace(std::uint64_t bits) {
  signature_ = (signature_ ^ bits) * 1099511628211ull;
}

template <typename T>
typename Tape<T>::Var Tape<T>::matmul(Var a, Var b) {
  const auto& sa = shape(a);
  const auto& sb = shape(b);
  expect_rank(sa, 2, "matmul");
  expect_rank(sb, 2, "matmul");
  require(sa[1] == sb[0], ErrorCode::Shape, "matmul: inner dimensions differ " + shape_string(sa) + " " + shape_string(sb));
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor<T> out({m, n});
  as_matrix(out, m, n).noalias() = as_matrix(value(a), m, k) * as_matrix(value(b), k, n);
  Var y = push(std::move(out), "matmul", {a, b});
  if (needs_grad(y)) {
    node(y).backward = [a, b, m, k, n](Tape& t, std::uint32_t self) {
      const auto dy = as_matrix(t.grad_of(self), m, n);
      if (t.needs_grad(a)) as_matrix(t.accumulate(a), m, k).noalias() += dy * as_matrix(t.value(b), k, n).transpose();
      if (t.needs_grad(b)) as_matrix(t.accumulate(b), k, n).noalias() += as_matrix(t.value(a), m, k).transpose() * dy;
    };
  }
  return y;
}

template <typename T>
typename Tape<T>::Var Tape<T>::linear(Var x, Var weight, Var bias) {
  const auto& sx = shape(x);
  const auto& sw = shape(weight);
  expect_rank(sx, 2, "linear");
  expect_rank(sw, 2, "linear");
  const std::size_t n = sx[0], in = sx[1], out_dim = sw[0];
  require(sw[1] == in, ErrorCode::Shape, "linear: weight " + shape_string(sw) + " does not accept input " + shape_string(sx));
  require(value(bias).size() == out_dim, ErrorCode::Shape, "linear: bias length mismatch");
  Tensor<T> out({n, out_dim});
  auto y = as_matrix(out, n, out_dim);
  y.noalias() = as_matrix(value(x), n, in) * as_matrix(value(weight), out_dim, in).transpose();
  y.rowwise() += as_matrix(value(bias), 1, out_dim).row(0);
  Var v = push(std::move(out), "linear", {x, weight, bias});
  if (needs_grad(v)) {
    node(v).backward = [x, weight, bias, n, in, out_dim](Tape& t, std::uint32_t self) {
      const auto dy = as_matrix(t.grad_of(self), n, out_dim);
      if (t.needs_grad(x)) as_matrix(t.accumulate(x), n, in).noalias() += dy * as_matrix(t.value(weight), out_dim, in);
      if (t.needs_grad(weight)) as_matrix(t.accumulate(weight), out_dim, in).noalias() += dy.transpose() * as_matrix(t.value(x), n, in);
      if (t.needs_grad(bias)) as_matrix(t.accumulate(bias), 1, out_dim) += dy.colwise().sum();
    };
  }
  return v;
}

template <typename T>
typename Tape<T>::Var Tape<T>::add(Var a, Var b) {
  require(shape(a) == shape(b), ErrorCode::Shape, "add: shapes differ " + shape_string(shape(a)) + " " + shape_string(shape(b)));
  Tensor<T> out = value(a);
  const T* pb = value(b).data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  Var y = push(std::move(out), "add", {a, b});
  if (needs_grad(y)) {
    node(y).backward = [a, b](Tape& t, std::uint32_t self) {
      const Tensor<T>& dy = t.grad_of(self);
      for (Var in : {a, b}) {
        if (!t.needs_grad(in)) continue;
        Tensor<T>& g = t.accumulate(in);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
      }
    };
  }
  return y;
}

template <typename T>
typename Tape<T>::Var Tape<T>::mul(Var a, Var b) {
  require(shape(a) == shape(b), ErrorCode::Shape, "mul: shapes differ");
  Tensor<T> out = value(a);
  const T* pb = value(b).data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  Var y = push(std::move(out), "mul", {a, b});
  if (needs_grad(y)) {
    node(y).backward = [a, b](Tape& t, std::uint32_t self) {
      const Tensor<T>& dy = t.grad_of(self);
      const Tensor<T>& va = t.value(a);
      const Tensor<T>& vb = t.value(b);
      if (t.needs_grad(a)) {
        Tensor<T>& g = t.accumulate(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * vb[i];
      }
      if (t.needs_grad(b)) {
        Tensor<T>& g = t.accumulate(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * va[i];
      }
    };
  }
  return y;
}

template <typename T>
typename Tape<T>::Var Tape<T>::scale(Var x, double s) {
  Tensor<T> out = value(x);
  const T f = static_cast<T>(s);
  for (auto& v : out.values()) v *= f;
  Var y = push(std::move(out), "scale", {x});
  if (needs_grad(y)) {
    node(y).backward = [x, f](Tape& t, std::uint32_t self) {
      const Tensor<T>& dy = t.grad_of(self);
      Tensor<T>& g = t.accumulate(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += f * dy[i];
    };
  }
  return y;
}

template <typename T>
typename Tape<T>::Var Tape<T>::sum(Var x) {
  T total = 0;
  for (T v : value(x).values()) total += v;
  Var y = push(Tensor<T>({1}, total), "sum", {x});
  if (needs_grad(y)) {
    node(y).backward = [x](Tape& t, std::uint32_t self) {
      const T dy = t.grad_of(self)[0];
      Tensor<T>& g = t.accumulate(x);
      for (auto& v : g.values()) v += dy;
    };
  }
  return y;
}

template <typename T>
typename Tape<T>::Var Tape<T>::relu(Var x) {
  Tensor<T> out = value(x);
  if (trace_branches_) {
    std::uint64_t word = 0;
    std::size_t bit = 0;
    for (T v : out.values()) {
      word |= static_cast<std::uint64_t>(v > T(0)) << bit;
      if (++bit == 64) {
        trace(word);
        word = 0;
        bit = 0;
      }
    }
    trace(word ^ (static_cast<std::uint64_t>(out.size()) << 1));
  }
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  Var y = push(std::move(out), "relu", {x});
  if (needs_grad(y)) {
    node(y).backward = [x](Tape& t, std::uint32_t self) {
      const Tensor<T>& dy = t.grad_of(self);
      const Tensor<T>& vx = t.value(x);
      Tensor<T>& g = t.accumulate(x);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (vx[i] > T(0)) g[i] += dy[i];
      }
    };
  }
  return y;
}

template <typename T>
typename Tape<T>::Var Tape<T>::reshape(Var x, Shape new_shape) {
  Tensor<T> out = value(x);
  out.reshape(std::move(new_shape));
  Var y = push(std::move(out), "reshape", {x});
  if (needs_grad(y)) {
    node(y).backward = [x](Tape& t, std::uint32_t self) {
      const Tensor<T>& dy = t.grad_of(self);
      Tensor<T>& g = t.accumulate(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
    };
  }
  return y;
}

template <typename T>
typename Tape<T>::Var Tape<T>::transpose(Var x) {
  const auto& s = shape(x);
  expect_rank(s, 2, "transpose");
  const std::size_t m = s[0], n = s[1];
  Tensor<T> out({n, m});
  as_matrix(out, n, m) = as_matrix(value(x), m, n).transpose();
  Var y = push(std::move(out), "transpose", {x});
  if (needs_grad(y)) {
    node(y).backward = [x, m, n](Tape& t, std::uint32_t self) {
      as_matrix(t.accumulate(x), m, n) += as_matrix(t.grad_of(self), n, m).transpose();
    };
  }
  return y;
}

template <typename T>
typename Tape<T>::Var Tape<T>::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), ErrorCode::Shape, "concat_cols: no inputs");
  const std::size_t rows = shape(parts[0]).at(0);
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    expect_rank(shape(p), 2, "concat_cols");
    require(shape(p)[0] == rows, ErrorCode::Shape, "concat_cols: row counts differ");
    widths.push_back(shape(p)[1]);
    cols += shape(p)[1];
  }
  Tensor<T> out({rows, cols});
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    StridedM<T>(out.data() + offset, rows, widths[i], Eigen::OuterStride<>(cols)) =
        as_matrix(value(parts[i]), rows, widths[i]);
    offset += widths[i];
  }
  Node n;
  n.own = std::move(out);
  for (Var p : parts) n.needs_grad = n.needs_grad || needs_grad(p);
  nodes_.push_back(std::move(n));
  Var y{static_cast<std::uint32_t>(nodes_.size() - 1)};
  if (needs_grad(y)) {
    std::vector<Var> inputs(parts.begin(), parts.end());
    node(y).backward = [inputs, widths, rows, cols](Tape& t, std::uint32_t self) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (t.needs_grad(inputs[i])) {
          as_matrix(t.accumulate(inputs[i]), rows, widths[i]) +=
              CStridedM<T>(t.grad_of(self).data() + off, rows, widths[i], Eigen::OuterStride<>(cols));
        }
        off += widths[i];
      }
    };
  }
  return y;
}

template <typename T>
typename Tape<T>::Var Tape<T>::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const auto& s = shape(x);
  const std::size_t d = last_dim(s);
  const std::size_t n = value(x).size() / d;
  require(value(gamma).size() == d && value(beta).size() == d, ErrorCode::Shape,
          "layer_norm: affine parameters must match last axis " + std::to_string(d));
  const T* px = value(x).data();
  const T* g = value(gamma).data();
  const T* b = value(beta).data();
  Tensor<T> out(s);
  Tensor<T> xhat(s);
  Tensor<T> inv({n});
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = px + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mean) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = g[j] * h + b[j];
    }
  }
  Var y = push(std::move(out), "layer_norm", {x, gamma, beta});
  if (needs_grad(y)) {
    node(y).saved = {std::move(xhat), std::move(inv)};
    node(y).backward = [x, gamma, beta, n, d](Tape& t, std::uint32_t self) {
      const Tensor<T>& dy = t.grad_of(self);
      const Tensor<T>& xh = t.nodes_[self].saved[0];
      const Tensor<T>& is = t.nodes_[self].saved[1];
      const T* g = t.value(gamma).data();
      if (t.needs_grad(gamma) || t.needs_grad(beta)) {
        Tensor<T>& dg = t.accumulate(gamma);
        Tensor<T>& db = t.accumulate(beta);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < d; ++j) {
            dg[j] += dy[r * d + j] * xh[r * d + j];
            db[j] += dy[r * d + j];
          }
        }
      }
      if (t.needs_grad(x)) {
        Tensor<T>& dx = t.accumulate(x);
        for (std::size_t r = 0; r < n; ++r) {
          T mean_dxh = 0, mean_dxh_xh = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dxh = dy[r * d + j] * g[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[r * d + j];
          }
          mean_dxh /= static_cast<T>(d);
          mean_dxh_xh /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const T dxh = dy[r * d + j] * g[j];
            dx[r * d + j] += is[r] * (dxh - mean_dxh - xh[r * d + j] * mean_dxh_xh);
          }
        }
      }
    };
  }
  return y;
}

namespace {

template <typename T>
void softmax_inplace(T* row, std::size_t m) {
  T mx = row[0];
  for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
  T total = 0;
  for (std::size_t j = 0; j < m; ++j) {
    row[j] = std::exp(row[j] - mx);
    total += row[j];
  }
  const T inv = T(1) / total;
  for (std::size_t j = 0; j < m; ++j) row[j] *= inv;
}

// dx = y * (dy - <dy, y>) per row, accumulated into dx.
template <typename T>
void softmax_backward_row(const T* y, const T* dy, T* dx, std::size_t m) {
  T dot = 0;
  for (std::size_t j = 0; j < m; ++j) dot += dy[j] * y[j];
  for (std::size_t j = 0; j < m; ++j) dx[j] += y[j] * (dy[j] - dot);
}

}  // namespace

template <typename T>
typename Tape<T>::Var Tape<T>::softmax_rows(Var x) {
  const auto& s = shape(x);
  const std::size_t m = last_dim(s);
  const std::size_t n = value(x).size() / m;
  Tensor<T> out = value(x);
  for (std::size_t r = 0; r < n; ++r) softmax_inplace(out.data() + r * m, m);
  Var y = push(std::move(out), "softmax", {x});
  if (needs_grad(y)) {
    node(y).backward = [x, y, n, m](Tape& t, std::uint32_t self) {
      const Tensor<T>& dy = t.grad_of(self);
      const Tensor<T>& vy = t.value(y);
      Tensor<T>& dx = t.accumulate(x);
      for (std::size_t r = 0; r < n; ++r) softmax_backward_row(vy.data() + r * m, dy.data() + r * m, dx.data() + r * m, m);
    };
  }
  return y;
}

template <typename T>
typename Tape<T>::Var Tape<T>::attention(Var q, Var k, Var v, std::size_t heads) {
  const auto& sq = shape(q);
  const auto& sk = shape(k);
  const auto& sv = shape(v);
  expect_rank(sq, 2, "attention");
  expect_rank(sk, 2, "attention");
  expect_rank(sv, 2, "attention");
  const std::size_t n = sq[0], d = sq[1], m = sk[0];
  require(sk[1] == d && sv[1] == d && sv[0] == m, ErrorCode::Shape,
          "attention: q " + shape_string(sq) + ", k " + shape_string(sk) + ", v " + shape_string(sv));
  require(heads > 0 && d % heads == 0, ErrorCode::Shape, "attention: model dim not divisible by heads");
  const std::size_t dk = d / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dk));
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

  Tensor<T> out({n, d});
  Tensor<T> probs({heads, n, m});
  for (std::size_t h = 0; h < heads; ++h) {
    CStridedM<T> qh(value(q).data() + h * dk, n, dk, stride);
    CStridedM<T> kh(value(k).data() + h * dk, m, dk, stride);
    CStridedM<T> vh(value(v).data() + h * dk, m, dk, stride);
    MapM<T> p(probs.data() + h * n * m, n, m);
    p.noalias() = (qh * kh.transpose()) * scale_factor;
    for (std::size_t r = 0; r < n; ++r) softmax_inplace(p.data() + r * m, m);
    StridedM<T>(out.data() + h * dk, n, dk, stride).noalias() = p * vh;
  }
  Var y = push(std::move(out), "attention", {q, k, v});
  if (needs_grad(y)) {
    node(y).saved = {std::move(probs)};
    node(y).backward = [q, k, v, n, m, d, dk, heads, scale_factor](Tape& t, std::uint32_t self) {
      const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
      const Tensor<T>& P = t.nodes_[self].saved[0];
      const Tensor<T>& dy = t.grad_of(self);
      Tensor<T>* dq = t.needs_grad(q) ? &t.accumulate(q) : nullptr;
      Tensor<T>* dkm = t.needs_grad(k) ? &t.accumulate(k) : nullptr;
      Tensor<T>* dv = t.needs_grad(v) ? &t.accumulate(v) : nullptr;
      Mat<T> dp(n, m), ds(n, m);
      for (std::size_t h = 0; h < heads; ++h) {
        CMapM<T> p(P.data() + h * n * m, n, m);
        CStridedM<T> qh(t.value(q).data() + h * dk, n, dk, stride);
        CStridedM<T> kh(t.value(k).data() + h * dk, m, dk, stride);
        CStridedM<T> vh(t.value(v).data() + h * dk, m, dk, stride);
        CStridedM<T> dyh(dy.data() + h * dk, n, dk, stride);
        if (dv) StridedM<T>(dv->data() + h * dk, m, dk, stride).noalias() += p.transpose() * dyh;
        if (!dq && !dkm) continue;
        dp.noalias() = dyh * vh.transpose();
        ds.setZero();
        for (std::size_t r = 0; r < n; ++r) {
          softmax_backward_row(p.data() + r * m, dp.data() + r * m, ds.data() + r * m, m);
        }
        ds *= scale_factor;
        if (dq) StridedM<T>(dq->data() + h * dk, n, dk, stride).noalias() += ds * kh;
        if (dkm) StridedM<T>(dkm->data() + h * dk, m, dk, stride).noalias() += ds.transpose() * qh;
      }
    };
  }
  return y;
}

template <typename T>
typename Tape<T>::Var Tape<T>::conv_height(Var x, Var kernel, Var bias, std::size_t stride) {
  const auto& sx = shape(x);
  const auto& sk = shape(kernel);
  expect_rank(sx, 3, "conv_height");
  expect_rank(sk, 4, "conv_height");
  const std::size_t ci = sx[0], h = sx[1], w = sx[2];
  const std::size_t co = sk[0], kh = sk[2];
  require(sk[1] == ci, ErrorCode::Shape, "conv_height: kernel expects " + std::to_string(sk[1]) +
                                            " input channels, got " + std::to_string(ci));
  require(sk[3] == 1, ErrorCode::Shape, "conv_height: kernel width must be 1");
  require(stride >= 1, ErrorCode::Shape, "conv_height: stride must be >= 1");
  require(kh >= 1 && kh <= h, ErrorCode::Shape, "conv_height: kernel height " + std::to_string(kh) +
                                                   " exceeds input height " + std::to_string(h));
  require(value(bias).size() == co, ErrorCode::Shape, "conv_height: bias length mismatch");
  const std::size_t ho = (h - kh) / stride + 1;
  const std::size_t patch = ci * kh;

  // Column buffer [ci * kh, ho * w]: row (c, j), column (r, x) holds x[c, r * stride + j, x].
  Tensor<T> col({patch, ho * w});
  const T* px = value(x).data();
  for (std::size_t c = 0; c < ci; ++c) {
    for (std::size_t j = 0; j < kh; ++j) {
      T* dst = col.data() + (c * kh + j) * ho * w;
      for (std::size_t r = 0; r < ho; ++r) {
        const T* src = px + (c * h + r * stride + j) * w;
        std::copy(src, src + w, dst + r * w);
      }
    }
  }
  Tensor<T> out({co, ho, w});
  auto y = as_matrix(out, co, ho * w);
  y.noalias() = as_matrix(value(kernel), co, patch) * as_matrix(col, patch, ho * w);
  y.colwise() += as_matrix(value(bias), co, 1).col(0);
  Var v = push(std::move(out), "conv_height", {x, kernel, bias});
  if (needs_grad(v)) {
    node(v).saved = {std::move(col)};
    node(v).backward = [x, kernel, bias, ci, h, w, co, kh, ho, patch, stride](Tape& t, std::uint32_t self) {
      const Tensor<T>& colbuf = t.nodes_[self].saved[0];
      const auto dy = as_matrix(t.grad_of(self), co, ho * w);
      if (t.needs_grad(kernel)) {
        as_matrix(t.accumulate(kernel), co, patch).noalias() += dy * as_matrix(colbuf, patch, ho * w).transpose();
      }
      if (t.needs_grad(bias)) as_matrix(t.accumulate(bias), co, 1) += dy.rowwise().sum();
      if (t.needs_grad(x)) {
        Mat<T> dcol = as_matrix(t.value(kernel), co, patch).transpose() * dy;
        T* dx = t.accumulate(x).data();
        for (std::size_t c = 0; c < ci; ++c) {
          for (std::size_t j = 0; j < kh; ++j) {
            const T* src = dcol.data() + (c * kh + j) * ho * w;
            for (std::size_t r = 0; r < ho; ++r) {
              T* dst = dx + (c * h + r * stride + j) * w;
              for (std::size_t q = 0; q < w; ++q) dst[q] += src[r * w + q];
            }
          }
        }
      }
    };
  }
  return v;
}

template <typename T>
typename Tape<T>::Var Tape<T>::vlad_aggregate(Var assign, Var x, Var centers) {
  const auto& sa = shape(assign);
  const auto& sx = shape(x);
  const auto& sc = shape(centers);
  expect_rank(sa, 2, "vlad");
  expect_rank(sx, 2, "vlad");
  expect_rank(sc, 2, "vlad");
  const std::size_t n = sx[0], dim = sx[1], clusters = sa[1];
  require(sa[0] == n && sc[0] == clusters && sc[1] == dim, ErrorCode::Shape,
          "vlad: assign " + shape_string(sa) + ", x " + shape_string(sx) + ", centers " + shape_string(sc));
  const auto a = as_matrix(value(assign), n, clusters);
  const auto c = as_matrix(value(centers), clusters, dim);
  Tensor<T> out({clusters, dim});
  auto v = as_matrix(out, clusters, dim);
  v.noalias() = a.transpose() * as_matrix(value(x), n, dim);
  const RowVec<T> mass = a.colwise().sum();
  for (std::size_t kk = 0; kk < clusters; ++kk) v.row(kk) -= mass(kk) * c.row(kk);
  Var y = push(std::move(out), "vlad", {assign, x, centers});
  if (needs_grad(y)) {
    node(y).backward = [assign, x, centers, n, dim, clusters](Tape& t, std::uint32_t self) {
      const auto dv = as_matrix(t.grad_of(self), clusters, dim);
      const auto a = as_matrix(t.value(assign), n, clusters);
      const auto c = as_matrix(t.value(centers), clusters, dim);
      if (t.needs_grad(assign)) {
        auto da = as_matrix(t.accumulate(assign), n, clusters);
        da.noalias() += as_matrix(t.value(x), n, dim) * dv.transpose();
        const RowVec<T> s = (dv.array() * c.array()).rowwise().sum().transpose();
        da.rowwise() -= s;
      }
      if (t.needs_grad(x)) as_matrix(t.accumulate(x), n, dim).noalias() += a * dv;
      if (t.needs_grad(centers)) {
        const RowVec<T> mass = a.colwise().sum();
        auto dc = as_matrix(t.accumulate(centers), clusters, dim);
        for (std::size_t kk = 0; kk < clusters; ++kk) dc.row(kk) -= mass(kk) * dv.row(kk);
      }
    };
  }
  return y;
}

template <typename T>
typename Tape<T>::Var Tape<T>::l2_normalize_rows(Var x, double eps) {
  const auto& s = shape(x);
  const std::size_t d = last_dim(s);
  const std::size_t n = value(x).size() / d;
  Tensor<T> out = value(x);
  Tensor<T> norms({n});
  for (std::size_t r = 0; r < n; ++r) {
    T* row = out.data() + r * d;
    T ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += row[j] * row[j];
    const T nr = std::sqrt(ss + static_cast<T>(eps));
    norms[r] = nr;
    for (std::size_t j = 0; j < d; ++j) row[j] /= nr;
  }
  Var y = push(std::move(out), "l2_normalize", {x});
  if (needs_grad(y)) {
    node(y).saved = {std::move(norms)};
    node(y).backward = [x, y, n, d](Tape& t, std::uint32_t self) {
      const Tensor<T>& nr = t.nodes_[self].saved[0];
      const Tensor<T>& dy = t.grad_of(self);
      const Tensor<T>& vy = t.value(y);
      Tensor<T>& dx = t.accumulate(x);
      for (std::size_t r = 0; r < n; ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += vy[r * d + j] * dy[r * d + j];
        for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += (dy[r * d + j] - vy[r * d + j] * dot) / nr[r];
      }
    };
  }
  return y;
}

template <typename T>
typename Tape<T>::Var Tape<T>::triplet_loss(Var query, std::span<const Var> positives,
                                            std::span<const Var> negatives, double alpha) {
  require(!positives.empty(), ErrorCode::InvalidArgument, "triplet loss: empty positive set");
  require(!negatives.empty(), ErrorCode::InvalidArgument, "triplet loss: empty negative set");
  const Tensor<T>& q = value(query);
  auto sqdist = [&](Var other) {
    const Tensor<T>& o = value(other);
    require(o.size() == q.size(), ErrorCode::Shape, "triplet loss: descriptor lengths differ");
    T acc = 0;
    for (std::size_t i = 0; i < q.size(); ++i) acc += (q[i] - o[i]) * (q[i] - o[i]);
    return acc;
  };
  std::size_t hardest = 0;
  T max_pos = sqdist(positives[0]);
  for (std::size_t i = 1; i < positives.size(); ++i) {
    const T dp = sqdist(positives[i]);
    if (dp > max_pos) {
      max_pos = dp;
      hardest = i;
    }
  }
  T neg_sum = 0;
  for (Var nv : negatives) neg_sum += sqdist(nv);
  const T kp = static_cast<T>(positives.size());
  const T raw = kp * (static_cast<T>(alpha) + max_pos) - neg_sum;
  const bool active = raw > T(0);
  if (trace_branches_) trace((static_cast<std::uint64_t>(hardest) << 1) | static_cast<std::uint64_t>(active));

  Node n;
  n.own = Tensor<T>({1}, active ? raw : T(0));
  n.needs_grad = needs_grad(query);
  for (Var p : positives) n.needs_grad = n.needs_grad || needs_grad(p);
  for (Var p : negatives) n.needs_grad = n.needs_grad || needs_grad(p);
  if (!n.own.all_finite()) fail(ErrorCode::Data, "non-finite value produced by triplet_loss");
  nodes_.push_back(std::move(n));
  Var y{static_cast<std::uint32_t>(nodes_.size() - 1)};
  if (needs_grad(y) && active) {
    const Var hard = positives[hardest];
    std::vector<Var> negs(negatives.begin(), negatives.end());
    node(y).backward = [query, hard, negs, kp](Tape& t, std::uint32_t self) {
      const T g = t.grad_of(self)[0];
      const Tensor<T>& vq = t.value(query);
      // Gradient pieces; accumulate() may not alias because each Var has one slot.
      auto push_pair = [&](Var other, T coef) {
        const Tensor<T>& vo = t.value(other);
        if (t.needs_grad(query)) {
          Tensor<T>& dq = t.accumulate(query);
          for (std::size_t i = 0; i < vq.size(); ++i) dq[i] += coef * T(2) * (vq[i] - vo[i]) * g;
        }
        if (t.needs_grad(other)) {
          Tensor<T>& dother = t.accumulate(other);
          for (std::size_t i = 0; i < vq.size(); ++i) dother[i] -= coef * T(2) * (vq[i] - vo[i]) * g;
        }
      };
      push_pair(hard, kp);
      for (Var nv : negs) push_pair(nv, T(-1));
    };
  }
  return y;
}

template <typename T>
void Tape<T>::backward(Var loss, ParamStore<T>& params) {
  require(requires_grad_, ErrorCode::InvalidArgument, "backward on a tape recorded without gradients");
  require(value(loss).size() == 1, ErrorCode::Shape, "backward: loss must be a scalar, got " + shape_string(shape(loss)));
  require(needs_grad(loss), ErrorCode::InvalidArgument, "backward: loss is detached from every parameter");
  grads_.assign(nodes_.size(), Tensor<T>());
  grads_[loss.id] = Tensor<T>(value(loss).shape(), T(1));
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (grads_[i].empty() || !n.needs_grad) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (std::uint32_t i = 0; i <= loss.id; ++i) {
    const Node& n = nodes_[i];
    if (n.param_name.empty() || grads_[i].empty()) continue;
    Tensor<T>& g = params.mutable_grad(n.param_name);
    require(g.shape() == grads_[i].shape(), ErrorCode::Shape, "gradient shape mismatch for " + n.param_name);
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += grads_[i][j];
  }
  grads_.clear();
}

template class Tape<float>;
template class Tape<double>;

}  // namespace cvtnet::nn
