#include <doctest.h>

#include <cmath>
#include <random>

#include "ad/nn.hpp"
#include "ad/ops.hpp"
#include "common/error.hpp"
#include "support/gradcheck.hpp"

using namespace lld;
using namespace lld::ad;

namespace {

Mat randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& g, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(g);
  return m;
}

// Projects an op output onto a fixed random direction so every output entry matters.
Tensor project(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  return sum(mul(y, constant(randn(y.rows(), y.cols(), g))));
}

}  // namespace

TEST_CASE("affine map with identity weight is the identity") {
  ParameterStore s;
  Rng rng(1);
  Linear l(s, "l", 4, 4, rng);
  l.W.mutable_value() = Mat::Identity(4, 4);
  std::mt19937_64 g(1);
  const Mat x = randn(3, 4, g);
  CHECK(l(constant(x)).value() == x);
}

TEST_CASE("attention over a single key returns that value") {
  std::mt19937_64 g(2);
  const Mat v = randn(1, 6, g);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor out = attention(constant(randn(5, 6, g)), constant(randn(1, 6, g)), constant(v), 1, 2);
    for (int r = 0; r < 5; ++r) CHECK((out.value().row(r) - v).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("layer norm of a constant row is the bias") {
  const Mat beta = (Mat(1, 4) << 0.1, -0.2, 0.3, 0.4).finished();
  const Tensor y = layer_norm(constant(Mat::Constant(2, 4, 3.7)), constant(Mat::Ones(1, 4)), constant(beta));
  for (int r = 0; r < 2; ++r) CHECK((y.value().row(r) - beta).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradient of half the squared norm of Wx") {
  ParameterStore s;
  std::mt19937_64 g(3);
  Tensor W = s.create("W", randn(3, 4, g));
  const Mat x = randn(4, 1, g);
  backward(scale(sum(square(matmul(W, constant(x)))), 0.5));
  const Mat expected = (W.value() * x) * x.transpose();
  CHECK((W.grad() - expected).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("softplus derivative is the logistic function") {
  ParameterStore s;
  Tensor x = s.create("x", (Mat(1, 7) << -30, -3, -0.5, 0, 0.5, 3, 30).finished());
  backward(sum(softplus(x)));
  for (int i = 0; i < 7; ++i) CHECK(x.grad()(0, i) == doctest::Approx(1.0 / (1.0 + std::exp(-x.value()(0, i)))));
}

TEST_CASE("every primitive passes a finite-difference check") {
  std::mt19937_64 g(4);
  struct Case {
    const char* name;
    std::function<Tensor(const Tensor&, const Tensor&)> f;
    Eigen::Index ar, ac, br, bc;
    bool positive = false;
  };
  const std::vector<int> idx = {2, 0, 0, 3, 1};
  const std::vector<double> w = {1.0, 0.0, 2.0, 0.5, 1.0, 1.0};
  std::vector<bool> km = {true, false, true, true, false, true, true, true};
  const std::vector<double> times = {0.0, 0.3, 1.1, 2.0};
  const std::vector<Case> cases = {
      {"add", [](auto& a, auto& b) { return add(a, b); }, 3, 4, 1, 4},
      {"add_col", [](auto& a, auto& b) { return add(a, b); }, 3, 4, 3, 1},
      {"sub", [](auto& a, auto& b) { return sub(a, b); }, 3, 4, 3, 4},
      {"mul", [](auto& a, auto& b) { return mul(a, b); }, 3, 4, 1, 4},
      {"scale", [](auto& a, auto&) { return scale(a, -1.7); }, 3, 4, 1, 1},
      {"add_scalar", [](auto& a, auto&) { return add_scalar(a, 0.3); }, 3, 4, 1, 1},
      {"matmul", [](auto& a, auto& b) { return matmul(a, b); }, 3, 4, 4, 5},
      {"transpose", [](auto& a, auto&) { return transpose(a); }, 3, 4, 1, 1},
      {"sum", [](auto& a, auto&) { return sum(a); }, 3, 4, 1, 1},
      {"mean", [](auto& a, auto&) { return mean(a); }, 3, 4, 1, 1},
      {"sum_rows", [](auto& a, auto&) { return sum_rows(a); }, 3, 4, 1, 1},
      {"square", [](auto& a, auto&) { return square(a); }, 3, 4, 1, 1},
      {"softplus", [](auto& a, auto&) { return softplus(a); }, 3, 4, 1, 1},
      {"sigmoid", [](auto& a, auto&) { return sigmoid(a); }, 3, 4, 1, 1},
      {"tanh", [](auto& a, auto&) { return ad::tanh(a); }, 3, 4, 1, 1},
      {"gelu", [](auto& a, auto&) { return gelu(a); }, 3, 4, 1, 1},
      {"exp", [](auto& a, auto&) { return ad::exp(a); }, 3, 4, 1, 1},
      {"log", [](auto& a, auto&) { return ad::log(a); }, 3, 4, 1, 1, true},
      {"sin", [](auto& a, auto&) { return ad::sin(a); }, 3, 4, 1, 1},
      {"cos", [](auto& a, auto&) { return ad::cos(a); }, 3, 4, 1, 1},
      {"slice_rows", [](auto& a, auto&) { return slice_rows(a, 1, 2); }, 4, 3, 1, 1},
      {"slice_cols", [](auto& a, auto&) { return slice_cols(a, 1, 2); }, 4, 3, 1, 1},
      {"concat_cols", [](auto& a, auto& b) { return concat_cols({a, b}); }, 3, 2, 3, 4},
      {"concat_rows", [](auto& a, auto& b) { return concat_rows({a, b}); }, 2, 3, 4, 3},
      {"gather_rows", [&](auto& a, auto&) { return gather_rows(a, idx); }, 4, 3, 1, 1},
      {"reshape", [](auto& a, auto&) { return reshape(a, 2, 6); }, 3, 4, 1, 1},
      {"group_mean", [&](auto& a, auto&) { return group_mean(a, 3, w); }, 6, 4, 1, 1},
      {"layer_norm", [](auto& a, auto& b) { return layer_norm(a, slice_rows(b, 0, 1), slice_rows(b, 1, 1)); }, 3, 5,
       2, 5},
      {"attention", [&](auto& a, auto& b) { return attention(a, b, b, 2, 2, km); }, 6, 4, 8, 4},
      {"shift_stack3", [](auto& a, auto&) { return shift_stack3(a, 3); }, 6, 2, 1, 1},
      {"damped_basis",
       [&](auto& a, auto& b) { return damped_basis(add_scalar(square(a), 0.1), add_scalar(square(b), 0.2), times); },
       1, 3, 1, 3},
      {"masked_mse",
       [](auto& a, auto&) {
         return masked_mse(a, (Mat(2, 2) << 1, 2, 3, 4).finished(), (Mat(2, 2) << 1, 0, 1, 1).finished());
       },
       2, 2, 1, 1},
  };
  for (const auto& c : cases) {
    ParameterStore s;
    Mat a0 = randn(c.ar, c.ac, g);
    if (c.positive) a0 = a0.array().abs() + 0.5;
    Tensor a = s.create("a", a0);
    Tensor b = s.create("b", randn(c.br, c.bc, g));
    const auto r = gradcheck::check(s, [&] { return project(c.f(a, b), 77); }, 64);
    INFO(c.name, " worst ", r.worst);
    CHECK(r.max_rel < 1e-6);
  }
}

TEST_CASE("layers pass a finite-difference check") {
  ParameterStore s;
  Rng rng(5);
  TransformerLayer layer(s, "t", 8, 2, 16, 0.0, rng);
  // Residual outputs start at zero; randomize so every path is exercised.
  std::mt19937_64 g(5);
  for (auto& e : s.entries()) e.param.mutable_value() = randn(e.param.rows(), e.param.cols(), g, 0.3);
  const Mat x = randn(6, 8, g);
  const auto r = gradcheck::check(s, [&] { return project(layer(constant(x), 2, {}, nullptr), 3); }, 16);
  INFO("worst ", r.worst);
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("masked pooling ignores masked entries") {
  std::mt19937_64 g(6);
  Mat a = randn(6, 3, g);
  const std::vector<double> w = {1, 0, 1, 0, 1, 1};
  const Mat y0 = group_mean(constant(a), 3, w).value();
  a.row(1).setConstant(1e6);
  a.row(3).setConstant(-5.0);
  CHECK(group_mean(constant(a), 3, w).value() == y0);

  const Mat k = randn(4, 4, g);
  Mat v = randn(4, 4, g);
  const std::vector<bool> km = {true, false, true, false};
  const Mat q = randn(2, 4, g);
  const Mat o0 = attention(constant(q), constant(k), constant(v), 1, 2, km).value();
  v.row(1).setConstant(9.0);
  CHECK(attention(constant(q), constant(k), constant(v), 1, 2, km).value() == o0);
}

TEST_CASE("forward and backward are bitwise deterministic") {
  auto run = [] {
    ParameterStore s;
    Rng rng(11);
    TransformerLayer layer(s, "t", 8, 2, 16, 0.1, rng);
    std::mt19937_64 g(5);
    const Mat x = randn(6, 8, g);
    Rng drop(3);
    const Tensor loss = project(layer(constant(x), 2, {}, &drop), 3);
    backward(loss);
    std::vector<Mat> grads;
    for (auto& e : s.entries()) grads.push_back(e.param.has_grad() ? e.param.grad() : Mat());
    return std::make_pair(loss.item(), grads);
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  for (std::size_t i = 0; i < a.second.size(); ++i) CHECK(a.second[i] == b.second[i]);
}

TEST_CASE("shape mismatches are rejected") {
  CHECK_THROWS_AS(matmul(constant(Mat::Zero(2, 3)), constant(Mat::Zero(2, 3))), Error);
  CHECK_THROWS_AS(add(constant(Mat::Zero(2, 3)), constant(Mat::Zero(3, 2))), Error);
  CHECK_THROWS_AS(concat_cols({constant(Mat::Zero(2, 3)), constant(Mat::Zero(3, 3))}), Error);
}

TEST_CASE("AdamW with nothing to do leaves parameters alone") {
  ParameterStore s;
  Tensor p = s.create("p", Mat::Constant(2, 2, 0.7));
  OptimizerConfig c;
  c.weight_decay = 0.0;
  backward(scale(sum(p), 0.0));
  adamw_step(s, c, 0);
  CHECK(p.value() == Mat::Constant(2, 2, 0.7));
}

TEST_CASE("weight decay alone shrinks multiplicatively") {
  ParameterStore s;
  Tensor p = s.create("p", Mat::Constant(1, 3, 2.0));
  OptimizerConfig c;
  c.schedule = Schedule::constant;
  c.lr = 0.1;
  c.min_lr = 0.0;
  c.weight_decay = 0.5;
  backward(scale(sum(p), 0.0));
  adamw_step(s, c, 0);
  CHECK(p.value()(0, 0) == doctest::Approx(2.0 * (1 - 0.1 * 0.5)).epsilon(1e-15));
}

TEST_CASE("ten AdamW steps on a scalar match a hand computation") {
  ParameterStore s;
  Tensor p = s.create("p", Mat::Constant(1, 1, 1.0));
  OptimizerConfig c;
  c.lr = 0.1;
  c.min_lr = 0.001;
  c.weight_decay = 0.01;
  c.clip = 10.0;
  c.warmup_fraction = 0.3;
  c.max_steps = 10;
  // Reference: loss = (p - 3)^2, warmup over round(0.3 * 10) = 3 steps.
  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 0; t < 10; ++t) {
    s.zero_grad();
    backward(square(add_scalar(p, -3.0)));
    adamw_step(s, c, t);
    const double gr = 2.0 * (x - 3.0);
    const double lr = std::max(0.1 * std::min(1.0, (t + 1) / 3.0), 0.001);
    x *= 1.0 - lr * 0.01;
    m = 0.9 * m + 0.1 * gr;
    v = 0.999 * v + 0.001 * gr * gr;
    const double mh = m / (1 - std::pow(0.9, t + 1)), vh = v / (1 - std::pow(0.999, t + 1));
    x -= lr * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p.value()(0, 0) == doctest::Approx(x).epsilon(1e-13));
  }
}

TEST_CASE("gradient clipping and non-finite rejection") {
  ParameterStore s;
  Tensor p = s.create("p", Mat::Constant(1, 2, 1.0));
  backward(scale(sum(p), 100.0));
  CHECK(s.grad_norm() == doctest::Approx(100.0 * std::sqrt(2.0)));
  s.clip_grad_norm(1.0);
  CHECK(s.grad_norm() == doctest::Approx(1.0));
  s.zero_grad();
  backward(scale(sum(p), NAN));
  OptimizerConfig c;
  const auto rep = adamw_step(s, c, 0);
  CHECK_FALSE(rep.applied);
  CHECK(rep.diagnostics.find("p") != std::string::npos);
  CHECK(p.value() == Mat::Constant(1, 2, 1.0));
}

TEST_CASE("learning-rate schedule warms up then holds") {
  OptimizerConfig c;
  c.lr = 1.5e-4;
  c.min_lr = 3e-6;
  c.max_steps = 1000;
  CHECK(learning_rate(c, 0) == doctest::Approx(std::max(1.5e-4 / 95.0, 3e-6)));
  CHECK(learning_rate(c, 94) == doctest::Approx(1.5e-4));
  CHECK(learning_rate(c, 900) == doctest::Approx(1.5e-4));
}

TEST_CASE("EMA shadow updates") {
  ParameterStore s;
  Tensor p = s.create("p", Mat::Constant(1, 1, 0.0));
  p.mutable_value()(0, 0) = 1.0;
  ema_update(s, 0.999);
  CHECK(s.entries()[0].shadow(0, 0) == doctest::Approx(0.001));
  for (int n = 1; n < 500; ++n) ema_update(s, 0.999);
  CHECK(s.entries()[0].shadow(0, 0) == doctest::Approx(1.0 - std::pow(0.999, 500)).epsilon(1e-12));
  ema_update(s, 0.0);
  CHECK(s.entries()[0].shadow(0, 0) == 1.0);
  CHECK_THROWS_AS(ema_update(s, 1.0), Error);
}
