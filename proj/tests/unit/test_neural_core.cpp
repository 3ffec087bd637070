#include <doctest.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <random>

#include "common/binary_io.hpp"
#include "neural_core/layers.hpp"
#include "neural_core/param_store.hpp"
#include "neural_core/tape.hpp"
#include "support/helpers.hpp"

using namespace cvtnet;
using namespace cvtnet::nn;

namespace {

using TapeD = Tape<double>;
using VarD = TapeD::Var;

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> g(0.0, scale);
  for (double& v : t.values()) v = g(rng);
  return t;
}

// Worst relative error between backward() and central differences over every
// parameter coordinate; `build` must return a scalar loss.
double gradient_error(ParamStore<double>& params, const std::function<VarD(TapeD&)>& build, double h = 1e-5) {
  params.zero_grad();
  {
    TapeD tape;
    tape.backward(build(tape), params);
  }
  double worst = 0.0;
  for (auto& [name, e] : params) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double x = e.value[i];
      e.value[i] = x + h;
      double lp, lm;
      {
        TapeD t(false);
        lp = t.value(build(t))[0];
      }
      e.value[i] = x - h;
      {
        TapeD t(false);
        lm = t.value(build(t))[0];
      }
      e.value[i] = x;
      const double num = (lp - lm) / (2 * h);
      const double a = e.grad[i];
      worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6}));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("sum and half square gradients") {
  ParamStore<double> ps;
  ps.add("p", Tensor<double>({2, 3}, {1, -2, 3, 0.5, 4, -1}));
  {
    TapeD tape;
    tape.backward(tape.sum(tape.parameter(ps, "p")), ps);
    for (double g : ps.grad("p").values()) CHECK(g == 1.0);
  }
  ps.zero_grad();
  {
    TapeD tape;
    const auto p = tape.parameter(ps, "p");
    tape.backward(tape.scale(tape.sum(tape.mul(p, p)), 0.5), ps);
    for (std::size_t i = 0; i < 6; ++i) CHECK(ps.grad("p")[i] == doctest::Approx(ps.value("p")[i]));
  }
}

TEST_CASE("sgd_step arithmetic") {
  ParamStore<double> ps;
  ps.add("p", Tensor<double>({1}, {1.0}));
  ps.mutable_grad("p")[0] = 0.5;
  sgd_step(ps, 0.1);
  CHECK(ps.value("p")[0] == doctest::Approx(0.95));
  CHECK(ps.grad("p")[0] == 0.0);

  ps.mutable_grad("p")[0] = 123.0;
  sgd_step(ps, 0.0);
  CHECK(ps.value("p")[0] == doctest::Approx(0.95));
}

TEST_CASE("quadratic bowl decreases monotonically under small steps") {
  std::mt19937_64 rng(4);
  ParamStore<double> ps;
  ps.add("x", random_tensor({1, 8}, rng, 3.0));
  const Tensor<double> target = random_tensor({1, 8}, rng);
  double prev = INFINITY;
  for (int step = 0; step < 100; ++step) {
    TapeD tape;
    const auto d = tape.add(tape.parameter(ps, "x"), tape.scale(tape.constant(target), -1.0));
    const auto loss = tape.sum(tape.mul(d, d));
    const double l = tape.value(loss)[0];
    CHECK(l < prev);
    prev = l;
    tape.backward(loss, ps);
    sgd_step(ps, 0.05);
  }
  CHECK(prev < 1e-6);
}

TEST_CASE("layer_norm of a constant row returns the bias") {
  ParamStore<double> ps;
  ps.add("g", Tensor<double>({4}, {2, 3, 4, 5}));
  ps.add("b", Tensor<double>({4}, {0.1, -0.2, 0.3, 7}));
  TapeD tape(false);
  const auto x = tape.constant(Tensor<double>({2, 4}, 3.5));
  const auto y = tape.layer_norm(x, tape.parameter(ps, "g"), tape.parameter(ps, "b"));
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(tape.value(y).at(r, c) == doctest::Approx(ps.value("b")[c]));
}

TEST_CASE("softmax rows") {
  TapeD tape(false);
  std::mt19937_64 rng(2);
  const auto u = tape.softmax_rows(tape.constant(Tensor<double>({1, 5}, 0.7)));
  for (double v : tape.value(u).values()) CHECK(v == doctest::Approx(0.2));
  const auto s = tape.softmax_rows(tape.constant(random_tensor({7, 13}, rng, 5.0)));
  for (std::size_t r = 0; r < 7; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 13; ++c) sum += tape.value(s).at(r, c);
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("conv_height basics") {
  TapeD tape(false);
  std::mt19937_64 rng(3);
  const auto x = tape.constant(random_tensor({1, 4, 8}, rng));
  const auto zero = tape.conv_height(x, tape.constant(Tensor<double>({1, 1, 4, 1})), tape.constant(Tensor<double>({1})), 1);
  CHECK(tape.shape(zero) == Shape{1, 1, 8});
  for (double v : tape.value(zero).values()) CHECK(v == 0.0);

  const auto id = tape.conv_height(x, tape.constant(Tensor<double>({1, 1, 1, 1}, 1.0)), tape.constant(Tensor<double>({1})), 1);
  CHECK(tape.value(id) == tape.value(x));
}

TEST_CASE("conv_height commutes with column shifts") {
  std::mt19937_64 rng(5);
  const auto x = random_tensor({3, 9, 20}, rng);
  const auto kernel = random_tensor({4, 3, 3, 1}, rng);
  const auto bias = random_tensor({4}, rng);
  auto shift = [](const Tensor<double>& t, std::size_t k) {
    Tensor<double> s(t.shape());
    const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col) s[(a * h + r) * w + (col + k) % w] = t[(a * h + r) * w + col];
    return s;
  };
  TapeD tape(false);
  const auto a = tape.value(tape.conv_height(tape.constant(shift(x, 7)), tape.constant(kernel), tape.constant(bias), 2));
  const auto b = shift(tape.value(tape.conv_height(tape.constant(x), tape.constant(kernel), tape.constant(bias), 2)), 7);
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("attention over a single key returns its value projection") {
  std::mt19937_64 rng(6);
  TapeD tape(false);
  const auto q = tape.constant(random_tensor({5, 4}, rng));
  const auto k = tape.constant(random_tensor({1, 4}, rng));
  const auto v = tape.constant(random_tensor({1, 4}, rng));
  const auto out = tape.value(tape.attention(q, k, v, 2));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(out.at(r, c) == doctest::Approx(tape.value(v).at(0, c)));
}

TEST_CASE("multi-head attention is permutation equivariant") {
  SpecList specs;
  attention_specs(specs, "mha", 8);
  auto ps = materialize<double>(specs, 9);
  std::mt19937_64 rng(10);
  const auto x = random_tensor({11, 8}, rng);
  std::vector<std::size_t> perm(11);
  for (std::size_t i = 0; i < 11; ++i) perm[i] = (i * 4 + 3) % 11;
  Tensor<double> xp(x.shape());
  for (std::size_t i = 0; i < 11; ++i)
    for (std::size_t c = 0; c < 8; ++c) xp.at(i, c) = x.at(perm[i], c);
  TapeD tape(false);
  const auto a = tape.constant(x), b = tape.constant(xp);
  const auto ya = tape.value(multi_head_attention(tape, ps, "mha", a, a, a, 2));
  const auto yb = tape.value(multi_head_attention(tape, ps, "mha", b, b, b, 2));
  for (std::size_t i = 0; i < 11; ++i)
    for (std::size_t c = 0; c < 8; ++c) CHECK(yb.at(i, c) == doctest::Approx(ya.at(perm[i], c)).epsilon(1e-12));
}

TEST_CASE("finite-difference checks per op") {
  std::mt19937_64 rng(11);
  SUBCASE("ffn") {
    SpecList specs;
    ffn_specs(specs, "ffn", 6, 10);
    auto ps = materialize<double>(specs, 1);
    // Zero-initialized biases would put many ReLU inputs on the kink at random inputs,
    // so draw them away from zero.
    for (auto& [name, e] : ps) e.value = random_tensor(e.value.shape(), rng, 0.5);
    const auto x = random_tensor({7, 6}, rng);
    const auto w = random_tensor({7, 6}, rng);
    const double err = gradient_error(ps, [&](TapeD& t) {
      return t.sum(t.mul(ffn(t, ps, "ffn", t.constant(x)), t.constant(w)));
    });
    CHECK(err < 1e-6);
  }
  SUBCASE("layer norm, softmax, attention, l2 normalize") {
    ParamStore<double> ps;
    ps.add("x", random_tensor({5, 6}, rng));
    ps.add("g", random_tensor({6}, rng));
    ps.add("b", random_tensor({6}, rng));
    ps.add("k", random_tensor({4, 6}, rng));
    const auto w = random_tensor({5, 6}, rng);
    const double err = gradient_error(ps, [&](TapeD& t) {
      const auto x = t.layer_norm(t.parameter(ps, "x"), t.parameter(ps, "g"), t.parameter(ps, "b"));
      const auto k = t.parameter(ps, "k");
      const auto a = t.attention(x, k, k, 2);
      const auto s = t.softmax_rows(t.add(a, x));
      return t.sum(t.mul(t.l2_normalize_rows(s), t.constant(w)));
    });
    CHECK(err < 1e-6);
  }
  SUBCASE("conv, vlad, concat, transpose, reshape") {
    ParamStore<double> ps;
    ps.add("x", random_tensor({2, 5, 6}, rng));
    ps.add("kern", random_tensor({3, 2, 3, 1}, rng));
    ps.add("bias", random_tensor({3}, rng));
    ps.add("centers", random_tensor({4, 3}, rng));
    ps.add("assign", random_tensor({6, 4}, rng));
    const auto w = random_tensor({1, 48}, rng);
    const double err = gradient_error(ps, [&](TapeD& t) {
      const auto y = t.conv_height(t.parameter(ps, "x"), t.parameter(ps, "kern"), t.parameter(ps, "bias"), 2);
      const auto tokens = t.transpose(t.reshape(y, {3, 2 * 6}));  // [12, 3]
      const auto feat = t.transpose(t.reshape(t.conv_height(t.parameter(ps, "x"), t.parameter(ps, "kern"),
                                                            t.parameter(ps, "bias"), 5),
                                              {3, 6}));  // [6, 3]
      const auto a = t.softmax_rows(t.parameter(ps, "assign"));
      const auto v = t.vlad_aggregate(a, feat, t.parameter(ps, "centers"));  // [4, 3]
      const VarD parts[] = {t.reshape(v, {1, 12}), t.reshape(t.l2_normalize_rows(tokens), {1, 36})};
      return t.sum(t.mul(t.concat_cols(parts), t.constant(w)));
    });
    CHECK(err < 1e-6);
  }
  SUBCASE("matmul and linear") {
    ParamStore<double> ps;
    ps.add("a", random_tensor({3, 4}, rng));
    ps.add("b", random_tensor({4, 5}, rng));
    ps.add("w", random_tensor({2, 5}, rng));
    ps.add("bias", random_tensor({2}, rng));
    const double err = gradient_error(ps, [&](TapeD& t) {
      const auto m = t.matmul(t.parameter(ps, "a"), t.parameter(ps, "b"));
      const auto l = t.linear(m, t.parameter(ps, "w"), t.parameter(ps, "bias"));
      return t.sum(t.mul(l, l));
    });
    CHECK(err < 1e-6);
  }
}

TEST_CASE("triplet loss node") {
  TapeD tape(false);
  auto row = [&](std::initializer_list<double> v) { return tape.constant(Tensor<double>({1, v.size()}, std::vector<double>(v))); };
  const auto q = row({1, 0});
  const VarD pos[] = {row({1, 0}), row({0, 1})};
  const VarD neg[] = {row({-1, 0})};
  CHECK(tape.value(tape.triplet_loss(q, pos, neg, 0.5))[0] == doctest::Approx(1.0));
  const VarD far[] = {row({100, 0})};
  CHECK(tape.value(tape.triplet_loss(q, pos, far, 0.5))[0] == 0.0);
}

TEST_CASE("ops report non-finite values") {
  TapeD tape(false);
  const auto x = tape.constant(Tensor<double>({1, 2}, {1e308, 1e308}));
  CHECK_CVT_ERROR(tape.mul(x, x), ErrorCode::Data);
}

TEST_CASE("shape mismatch is a shape error") {
  TapeD tape(false);
  const auto a = tape.constant(Tensor<double>({2, 3}));
  const auto b = tape.constant(Tensor<double>({2, 4}));
  CHECK_CVT_ERROR(tape.add(a, b), ErrorCode::Shape);
  CHECK_CVT_ERROR(tape.matmul(a, a), ErrorCode::Shape);
}

TEST_CASE("materialize is seeded and follows spec order") {
  SpecList specs;
  linear_specs(specs, "fc", 4, 3);
  const auto a = materialize<float>(specs, 5);
  const auto b = materialize<float>(specs, 5);
  const auto c = materialize<float>(specs, 6);
  CHECK(hash_params(a) == hash_params(b));
  CHECK(hash_params(a) != hash_params(c));
  for (float v : a.value("fc.bias").values()) CHECK(v == 0.0f);
  for (float v : a.value("fc.weight").values()) CHECK(std::abs(v) <= 0.5f);
  CHECK(spec_parameter_count(specs) == 15);
  check_params(a, specs);
  SpecList other;
  linear_specs(other, "fc", 4, 2);
  CHECK_CVT_ERROR(check_params(a, other), ErrorCode::Shape);
}

TEST_CASE("checkpoint round trip and corruption") {
  testing::TempDir dir("ckpt");
  SpecList specs;
  ffn_specs(specs, "ffn", 5, 7);
  const auto ps = materialize<float>(specs, 3);
  save_checkpoint(ps, dir.file("p.cvtp"));
  const auto back = load_checkpoint(dir.file("p.cvtp"));
  CHECK(hash_params(back) == hash_params(ps));
  for (const auto& [name, e] : ps) CHECK(back.value(name) == e.value);

  const auto bytes = io::read_file(dir.file("p.cvtp"));
  auto write = [&](const std::string& name, std::vector<char> b) {
    std::ofstream(dir.file(name), std::ios::binary).write(b.data(), static_cast<long>(b.size()));
    return dir.file(name);
  };
  auto bad_magic = bytes;
  bad_magic[1] = 'Z';
  CHECK_CVT_ERROR(load_checkpoint(write("m.cvtp", bad_magic)), ErrorCode::Format);
  auto bad_version = bytes;
  bad_version[4] += 1;
  CHECK_CVT_ERROR(load_checkpoint(write("v.cvtp", bad_version)), ErrorCode::Format);
  CHECK_CVT_ERROR(load_checkpoint(write("t.cvtp", std::vector<char>(bytes.begin(), bytes.end() - 3))), ErrorCode::Format);
}
