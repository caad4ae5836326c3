#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fedwarm/error.hpp"
#include "fedwarm/models.hpp"

using namespace fedwarm;

namespace {

Batch random_batch(std::size_t n, std::size_t dim, std::size_t classes, RngStream& rng) {
  Batch b;
  b.input_dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(dim);
    for (double& v : x) v = rng.normal();
    b.push_back(x, static_cast<std::uint32_t>(rng.index(classes)));
  }
  return b;
}

ParamVector random_w(std::size_t m, double scale, RngStream& rng) {
  ParamVector w(m);
  for (double& v : w) v = scale * rng.normal();
  return w;
}

// Straightforward softmax cross-entropy with the row-per-class layout.
double softmax_oracle(const ModelSpec& spec, const ParamVector& w, const Batch& b) {
  const std::size_t d = spec.input_dim;
  double total = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    std::vector<double> z(spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      double s = w[c * (d + 1) + d];
      for (std::size_t j = 0; j < d; ++j) s += w[c * (d + 1) + j] * b.row(i)[j];
      z[c] = s;
    }
    double denom = 0.0;
    for (double v : z) denom += std::exp(v);
    total += std::log(denom) - z[b.labels[i]];
  }
  return total / static_cast<double>(b.size());
}

Batch permuted(const Batch& b, const std::vector<std::size_t>& order) {
  Batch out;
  out.input_dim = b.input_dim;
  for (auto i : order) out.push_back(b.row(i), b.labels[i]);
  return out;
}

}  // namespace

TEST_SUITE("models") {

TEST_CASE("parameter counts") {
  CHECK(param_count({ModelKind::softmax_linear, 2, 3, 0}) == 9);
  CHECK(param_count({ModelKind::mlp1, 4, 3, 5}) == 43);
  CHECK(param_count({ModelKind::quadratic, 7, 2, 0}) == 7);
  auto rng = derive_stream(1, {0, 0, 0});
  CHECK(init_params({ModelKind::softmax_linear, 2, 3, 0}, rng).size() == 9);
  CHECK(init_params({ModelKind::mlp1, 4, 3, 5}, rng).size() == 43);
}

TEST_CASE("init_params is deterministic and bounded") {
  const ModelSpec spec{ModelKind::mlp1, 4, 3, 5};
  auto r1 = derive_stream(2, {0, 0, 0});
  auto r2 = derive_stream(2, {0, 0, 0});
  const auto a = init_params(spec, r1);
  CHECK(a == init_params(spec, r2));
  for (double v : a) {
    CHECK(v >= -0.05);
    CHECK(v <= 0.05);
  }
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(ModelSpec({ModelKind::softmax_linear, 0, 3, 0}).validate(), ConfigError);
  CHECK_THROWS_AS(ModelSpec({ModelKind::softmax_linear, 2, 1, 0}).validate(), ConfigError);
  CHECK_THROWS_AS(ModelSpec({ModelKind::mlp1, 2, 3, 0}).validate(), ConfigError);
  CHECK_THROWS_AS(parse_model_kind("resnet"), ConfigError);
  CHECK(parse_model_kind("mlp1") == ModelKind::mlp1);
}

TEST_CASE("zero weights give ln C") {
  auto rng = derive_stream(3, {0, 0, 0});
  for (std::size_t classes : {2u, 3u, 7u}) {
    const ModelSpec spec{ModelKind::softmax_linear, 4, classes, 0};
    const auto b = random_batch(11, 4, classes, rng);
    CHECK(std::abs(loss(spec, ParamVector(param_count(spec)), b) - std::log(static_cast<double>(classes))) <
          1e-12);
  }
}

TEST_CASE("saturated logits give tiny loss") {
  const ModelSpec spec{ModelKind::softmax_linear, 1, 2, 0};
  Batch b;
  b.input_dim = 1;
  b.push_back(std::vector<double>{1.0}, 1);
  ParamVector w{-20.0, 0.0, 20.0, 0.0};
  CHECK(loss(spec, w, b) < 1e-3);
}

TEST_CASE("loss matches an independent softmax evaluation") {
  auto rng = derive_stream(4, {0, 0, 0});
  const ModelSpec spec{ModelKind::softmax_linear, 3, 4, 0};
  for (int rep = 0; rep < 5; ++rep) {
    const auto b = random_batch(9, 3, 4, rng);
    const auto w = random_w(param_count(spec), 1.0, rng);
    CHECK(std::abs(loss(spec, w, b) - softmax_oracle(spec, w, b)) < 1e-12);
  }
}

TEST_CASE("union loss is the size-weighted mean of parts") {
  auto rng = derive_stream(5, {0, 0, 0});
  const ModelSpec spec{ModelKind::mlp1, 3, 3, 4};
  const auto b1 = random_batch(4, 3, 3, rng);
  const auto b2 = random_batch(7, 3, 3, rng);
  Batch u = b1;
  for (std::size_t i = 0; i < b2.size(); ++i) u.push_back(b2.row(i), b2.labels[i]);
  const auto w = random_w(param_count(spec), 0.5, rng);
  const double expect = (4.0 * loss(spec, w, b1) + 7.0 * loss(spec, w, b2)) / 11.0;
  CHECK(std::abs(loss(spec, w, u) - expect) < 1e-12);
}

TEST_CASE("analytic gradients match finite differences") {
  auto rng = derive_stream(6, {0, 0, 0});
  const ModelSpec lin{ModelKind::softmax_linear, 4, 3, 0};
  const ModelSpec mlp{ModelKind::mlp1, 4, 3, 5};
  for (int rep = 0; rep < 10; ++rep) {
    const auto b = random_batch(8, 4, 3, rng);
    const auto wl = random_w(param_count(lin), 0.5, rng);
    const auto gl = grad(lin, wl, b);
    const auto fl = finite_diff_grad([&](const ParamVector& v) { return loss(lin, v, b); }, wl);
    CHECK(max_relative_error(gl, fl) < 1e-6);
    const auto wm = random_w(param_count(mlp), 0.5, rng);
    const auto gm = grad(mlp, wm, b);
    const auto fm = finite_diff_grad([&](const ParamVector& v) { return loss(mlp, v, b); }, wm);
    CHECK(max_relative_error(gm, fm) < 1e-4);
  }
}

TEST_CASE("quadratic surrogate gradient is scale * (w - x)") {
  const ModelSpec spec{ModelKind::quadratic, 2, 2, 0, 3.0};
  Batch b;
  b.input_dim = 2;
  b.push_back(std::vector<double>{1.0, -1.0}, 0);
  b.push_back(std::vector<double>{3.0, 1.0}, 1);
  const ParamVector w{0.0, 0.0};
  const auto g = grad(spec, w, b);
  CHECK(g[0] == doctest::Approx(-6.0));
  CHECK(g[1] == doctest::Approx(0.0));
  CHECK(loss(spec, w, b) == doctest::Approx(0.5 * 3.0 * (2.0 + 10.0) / 2.0));
}

TEST_CASE("sample gradients average to the batch gradient") {
  auto rng = derive_stream(7, {0, 0, 0});
  const ModelSpec spec{ModelKind::mlp1, 3, 3, 4};
  const auto b = random_batch(6, 3, 3, rng);
  const auto w = random_w(param_count(spec), 0.5, rng);
  ParamVector acc(param_count(spec));
  for (std::size_t i = 0; i < b.size(); ++i) axpy(1.0 / 6.0, sample_grad(spec, w, b.row(i), b.labels[i]), acc);
  CHECK(max_relative_error(acc, grad(spec, w, b)) < 1e-12);
}

TEST_CASE("gradient vanishes at the minimizer of a two-point problem") {
  // Same feature, opposite labels: the minimizer equalizes both logits.
  const ModelSpec spec{ModelKind::softmax_linear, 1, 2, 0};
  Batch b;
  b.input_dim = 1;
  b.push_back(std::vector<double>{1.0}, 0);
  b.push_back(std::vector<double>{1.0}, 1);
  ParamVector w{0.7, -0.3, -0.2, 0.5};
  for (int it = 0; it < 2000 && norm(grad(spec, w, b)) >= 1e-9; ++it) axpy(-1.0, grad(spec, w, b), w);
  CHECK(norm(grad(spec, w, b)) < 1e-6);
  CHECK(loss(spec, w, b) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("accuracy tie-break, separable fit, permutation invariance") {
  const ModelSpec spec{ModelKind::softmax_linear, 2, 2, 0};
  Batch b;
  b.input_dim = 2;
  for (int i = 0; i < 10; ++i) {
    b.push_back(std::vector<double>{1.0 + 0.1 * i, 0.5}, 0);
    b.push_back(std::vector<double>{-1.0 - 0.1 * i, -0.5}, 1);
  }
  CHECK(accuracy(spec, ParamVector(param_count(spec)), b) == 0.5);

  ParamVector w(param_count(spec));
  for (int it = 0; it < 200; ++it) axpy(-0.5, grad(spec, w, b), w);
  CHECK(accuracy(spec, w, b) == 1.0);

  std::vector<std::size_t> order(b.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = derive_stream(8, {0, 0, 0});
  rng.shuffle(std::span<std::size_t>(order));
  const ParamVector w2{0.3, -0.2, 0.1, -0.4, 0.2, 0.05};
  const auto p = permuted(b, order);
  CHECK(accuracy(spec, w2, p) == accuracy(spec, w2, b));
  CHECK(std::abs(loss(spec, w2, p) - loss(spec, w2, b)) < 1e-12);
  CHECK(max_relative_error(grad(spec, w2, p), grad(spec, w2, b)) < 1e-12);

  CHECK_THROWS_AS(accuracy(spec, w, Batch{2, {}, {}}), DataError);
}

TEST_CASE("softmax loss is convex along segments") {
  auto rng = derive_stream(9, {0, 0, 0});
  const ModelSpec spec{ModelKind::softmax_linear, 3, 4, 0};
  for (int rep = 0; rep < 10; ++rep) {
    const auto b = random_batch(12, 3, 4, rng);
    const auto w1 = random_w(param_count(spec), 2.0, rng);
    const auto w2 = random_w(param_count(spec), 2.0, rng);
    for (double lam : {0.25, 0.5, 0.75}) {
      const auto mix = lam * w1 + (1.0 - lam) * w2;
      CHECK(loss(spec, mix, b) <= lam * loss(spec, w1, b) + (1.0 - lam) * loss(spec, w2, b) + 1e-10);
    }
  }
}

TEST_CASE("distillation gradient matches finite differences and vanishes at the anchor") {
  auto rng = derive_stream(10, {0, 0, 0});
  const ModelSpec spec{ModelKind::mlp1, 3, 3, 4};
  const auto b = random_batch(6, 3, 3, rng);
  const auto w = random_w(param_count(spec), 0.5, rng);
  const auto anchor = random_w(param_count(spec), 0.5, rng);
  const auto lg = distill_loss_and_grad(spec, w, anchor, b);
  const auto fd = finite_diff_grad(
      [&](const ParamVector& v) { return distill_loss_and_grad(spec, v, anchor, b).loss; }, w);
  CHECK(max_relative_error(lg.grad, fd) < 1e-6);
  CHECK(lg.loss >= 0.0);
  const auto self = distill_loss_and_grad(spec, anchor, anchor, b);
  CHECK(std::abs(self.loss) < 1e-12);
  CHECK(norm(self.grad) < 1e-12);
}

TEST_CASE("dimension and label errors") {
  const ModelSpec spec{ModelKind::softmax_linear, 2, 2, 0};
  Batch b;
  b.input_dim = 2;
  b.push_back(std::vector<double>{1.0, 2.0}, 5);
  CHECK_THROWS_AS(loss(spec, ParamVector(6), b), DataError);
  CHECK_THROWS_AS(loss(spec, ParamVector(5), b), DimensionError);
  CHECK_THROWS_AS(b.push_back(std::vector<double>{1.0}, 0), DimensionError);
}

}
