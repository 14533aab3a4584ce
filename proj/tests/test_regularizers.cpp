#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "specreg/architectures.hpp"
#include "specreg/regularizers.hpp"
#include "specreg/spectral_oracle.hpp"
#include "testutil.hpp"

using namespace specreg;

namespace {

Network<double> diag_linear_net(std::vector<double> diag) {
  Network<double> net;
  Linear<double> lin(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) lin.weight(i, i) = diag[i];
  net.add(std::move(lin));
  net.bind(Shape{diag.size()});
  return net;
}

Network<double> random_relu_net(SeededRng& rng, const std::vector<std::size_t>& dims) {
  Network<double> net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    net.add(Linear<double>(dims[i], dims[i + 1]));
    if (i + 2 < dims.size()) net.add(Relu<double>());
  }
  net.bind(Shape{dims.front()});
  net.init_params(rng);
  return net;
}

double oracle_sigma(Network<double>& net, const CaptureRecord<double>& rec) {
  return max_singular_value_dense(net.assemble_jacobian(rec), 1e-11).sigma;
}

}  // namespace

TEST_CASE("spectral penalty on a diagonal linear map") {
  auto net = diag_linear_net({3, 1});
  Tensor<double> x(Shape{1, 2}, {1, 1});
  auto fwd = net.forward_capture(x, BnMode::pseudo_inference);
  SeededRng rng(5);
  auto res = spectral_penalty_batch(net, fwd.captures, 20, rng);
  CHECK(res.penalty == doctest::Approx(3.0).epsilon(1e-6));
  // top singular pair outer product e1 x e1, independent of vector signs
  CHECK(res.param_grads[0](0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(res.param_grads[0](0, 1)) < 1e-6);
  CHECK(std::abs(res.param_grads[0](1, 0)) < 1e-6);
  CHECK(std::abs(res.param_grads[0](1, 1)) < 1e-6);
  CHECK(res.param_grads[1].squared_norm() == 0.0);  // bias untouched
}

TEST_CASE("spectral penalty of a dead region is zero with zero gradients") {
  Network<double> net;
  Linear<double> lin(2, 2);
  lin.weight(0, 0) = 1;
  lin.weight(1, 1) = 1;
  net.add(std::move(lin));
  net.add(Relu<double>());
  net.add(Linear<double>(2, 2));
  net.bind(Shape{2});
  SeededRng prng(2);
  net.layer(2).init_params(prng);

  Tensor<double> x(Shape{1, 2}, {-1, -1});  // every mask zero
  auto fwd = net.forward_capture(x, BnMode::pseudo_inference);
  SeededRng rng(9);
  auto res = spectral_penalty_batch(net, fwd.captures, 5, rng);
  CHECK(res.penalty == 0.0);
  for (const auto& g : res.param_grads) CHECK(g.squared_norm() == 0.0);
}

TEST_CASE("spectral penalty converges to the dense oracle") {
  SeededRng rng(33);
  auto net = random_relu_net(rng, {6, 10, 8, 4});
  Tensor<double> x(Shape{1, 6});
  fill_gaussian(x, rng);
  auto fwd = net.forward_capture(x, BnMode::pseudo_inference);
  auto rec = split_records(fwd.captures)[0];
  const double sigma_star = oracle_sigma(net, rec);

  SeededRng prng(77);
  auto res = spectral_penalty_batch(net, fwd.captures, 50, prng);
  CHECK(std::abs(res.penalty - sigma_star) <= 1e-6 * sigma_star);
}

TEST_CASE("spectral gradients match finite differences of the oracle sigma") {
  SeededRng rng(133);
  auto net = random_relu_net(rng, {5, 8, 3});
  Tensor<double> x(Shape{1, 5});
  fill_gaussian(x, rng);
  auto fwd = net.forward_capture(x, BnMode::pseudo_inference);
  auto rec = split_records(fwd.captures)[0];

  SeededRng prng(55);
  auto res = spectral_penalty_batch(net, fwd.captures, 60, prng);

  auto eval = [&]() { return oracle_sigma(net, rec); };
  auto fd = testutil::fd_param_grads<double>(net, eval, 1e-5);
  CHECK(testutil::max_rel_error(res.param_grads, fd) < 1e-4);

  SUBCASE("squared exponent scales gradients by 2 sigma") {
    SeededRng prng2(55);
    auto res2 = spectral_penalty_batch(net, fwd.captures, 60, prng2, 2);
    auto eval2 = [&]() {
      const double s = oracle_sigma(net, rec);
      return s * s;
    };
    auto fd2 = testutil::fd_param_grads<double>(net, eval2, 1e-5);
    CHECK(testutil::max_rel_error(res2.param_grads, fd2) < 1e-4);
  }
}

TEST_CASE("spectral estimate is a lower bound on the oracle") {
  SeededRng rng(213);
  for (int trial = 0; trial < 15; ++trial) {
    auto net = random_relu_net(rng, {4, 7, 3});
    Tensor<double> x(Shape{1, 4});
    fill_gaussian(x, rng);
    auto fwd = net.forward_capture(x, BnMode::pseudo_inference);
    const double sigma_star = oracle_sigma(net, split_records(fwd.captures)[0]);
    for (std::size_t n : {std::size_t(1), std::size_t(3), std::size_t(10)}) {
      SeededRng prng(300 + trial);
      auto res = spectral_penalty_batch(net, fwd.captures, n, prng);
      CHECK(res.penalty <= sigma_star + 1e-9);
    }
  }
}

TEST_CASE("spectral estimate is nondecreasing in N for a fixed start") {
  SeededRng rng(311);
  auto net = random_relu_net(rng, {6, 9, 5});
  Tensor<double> x(Shape{1, 6});
  fill_gaussian(x, rng);
  auto fwd = net.forward_capture(x, BnMode::pseudo_inference);
  double prev = -1;
  for (std::size_t n = 1; n <= 8; ++n) {
    SeededRng prng(414);  // same initial vector every time
    auto res = spectral_penalty_batch(net, fwd.captures, n, prng);
    CHECK(res.penalty >= prev - 1e-12);
    prev = res.penalty;
  }
}

TEST_CASE("scale equivariance of the one-layer estimate") {
  SeededRng rng(501);
  auto net = random_relu_net(rng, {5, 4});
  Tensor<double> x(Shape{1, 5});
  fill_gaussian(x, rng);
  auto fwd = net.forward_capture(x, BnMode::pseudo_inference);
  SeededRng prng(3);
  auto base = spectral_penalty_batch(net, fwd.captures, 10, prng);

  auto& w = *net.layer(0).param_refs()[0].value;
  w *= 2.5;
  auto fwd2 = net.forward_capture(x, BnMode::pseudo_inference);
  SeededRng prng2(3);
  auto scaled = spectral_penalty_batch(net, fwd2.captures, 10, prng2);
  CHECK(scaled.penalty == doctest::Approx(2.5 * base.penalty).epsilon(1e-12));
}

TEST_CASE("spectral bound penalty: diagonal fixed points") {
  auto net = diag_linear_net({3, 1});
  SeededRng rng(8);
  auto state = PowerIterState<double>::make(net, rng);
  PenaltyResult<double> res;
  for (int i = 0; i < 60; ++i) res = spectral_bound_penalty(net, state);
  CHECK(res.penalty == doctest::Approx(9.0).epsilon(1e-10));

  Network<double> two;
  Linear<double> l1(2, 2), l2(2, 2);
  l1.weight(0, 0) = 2;
  l1.weight(1, 1) = 2;
  l2.weight(0, 0) = 3;
  l2.weight(1, 1) = 3;
  two.add(std::move(l1));
  two.add(std::move(l2));
  two.bind(Shape{2});
  auto st2 = PowerIterState<double>::make(two, rng);
  PenaltyResult<double> r2;
  for (int i = 0; i < 60; ++i) r2 = spectral_bound_penalty(two, st2);
  CHECK(r2.penalty == doctest::Approx(4.0 + 9.0).epsilon(1e-10));  // per-layer sum, not product
}

TEST_CASE("spectral bound sigma matches the materialized conv operator") {
  SeededRng rng(600);
  Network<double> net;
  net.add(Conv2d<double>(3, 2, 3, 1, 1));
  net.add(Flatten<double>());
  net.add(Linear<double>(3 * 6 * 6, 4));
  net.bind(Shape{2, 6, 6});
  net.init_params(rng);

  auto state = PowerIterState<double>::make(net, rng);
  PenaltyResult<double> res;
  for (int i = 0; i < 200; ++i) res = spectral_bound_penalty(net, state);

  LayerCapture<double> no_cap;
  auto conv_matrix = testutil::materialize_operator(net.layer(0), no_cap);
  const double sigma_conv = max_singular_value_dense(conv_matrix, 1e-11).sigma;
  CHECK(state.sigma[0] == doctest::Approx(sigma_conv).epsilon(1e-4));
}

TEST_CASE("spectral bound gradients are exact for frozen vectors") {
  SeededRng rng(611);
  auto net = random_relu_net(rng, {4, 6, 3});
  auto state = PowerIterState<double>::make(net, rng);
  for (int i = 0; i < 100; ++i) spectral_bound_penalty(net, state);

  auto frozen = state;  // v vectors fixed for the finite-difference probe
  auto res = spectral_bound_penalty(net, frozen);

  auto eval = [&]() {
    LayerCapture<double> no_cap;
    double total = 0;
    for (std::size_t k = 0; k < state.layer_indices.size(); ++k) {
      auto fv = net.layer(state.layer_indices[k]).fmode(state.v[k], no_cap);
      total += fv.squared_norm();
    }
    return total;
  };
  auto fd = testutil::fd_param_grads<double>(net, eval, 1e-6);
  CHECK(testutil::max_rel_error(res.param_grads, fd) < 1e-6);
}

TEST_CASE("sandwich: oracle sigma within [rayleigh, layer product]") {
  SeededRng rng(711);
  auto net = random_relu_net(rng, {5, 8, 6, 3});
  Tensor<double> x(Shape{1, 5});
  fill_gaussian(x, rng);
  auto fwd = net.forward_capture(x, BnMode::pseudo_inference);
  const double sigma_star = oracle_sigma(net, split_records(fwd.captures)[0]);

  SeededRng prng(4);
  auto res = spectral_penalty_batch(net, fwd.captures, 40, prng);

  double product = 1;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    if (!net.layer(l).has_params()) continue;
    SeededRng lr(10 + l);
    product *= layer_operator_norm(net.layer(l), 1e-10, 5000, lr);
  }
  CHECK(res.penalty <= sigma_star + 1e-9);
  CHECK(sigma_star <= product + 1e-6);
}

TEST_CASE("frobenius penalty on the identity network") {
  auto net = diag_linear_net({1, 1, 1});
  Tensor<double> x(Shape{1, 3}, {0.3, -0.2, 0.9});
  auto fwd = net.forward_capture(x, BnMode::pseudo_inference);
  SeededRng rng(12);
  auto res = frobenius_penalty_batch(net, fwd.captures, 1, rng);
  CHECK(res.penalty == doctest::Approx(3.0).epsilon(1e-12));  // ||I||_F^2
}

TEST_CASE("frobenius estimator converges to the squared Frobenius norm") {
  SeededRng rng(800);
  auto net = random_relu_net(rng, {4, 3});
  Tensor<double> x(Shape{1, 4});
  fill_gaussian(x, rng);
  auto fwd = net.forward_capture(x, BnMode::pseudo_inference);
  const auto& w = *net.layer(0).param_refs()[0].value;
  const double frob2 = w.squared_norm();

  SeededRng prng(801);
  auto res = frobenius_penalty_batch(net, fwd.captures, 10000, prng);
  CHECK(std::abs(res.penalty - frob2) <= 0.02 * frob2);
}

TEST_CASE("frobenius gradients are exact for fixed projections") {
  SeededRng rng(822);
  auto net = random_relu_net(rng, {5, 7, 3});
  Tensor<double> x(Shape{1, 5});
  fill_gaussian(x, rng);
  auto fwd = net.forward_capture(x, BnMode::pseudo_inference);
  auto rec = split_records(fwd.captures)[0];

  SeededRng prng(823);
  auto res = frobenius_penalty_batch(net, fwd.captures, 3, prng);

  auto eval = [&]() {
    SeededRng same(823);
    Network<double>& n = net;
    auto probe = frobenius_penalty_batch(n, fwd.captures, 3, same);
    return probe.penalty;
  };
  auto fd = testutil::fd_param_grads<double>(net, eval, 1e-5);
  CHECK(testutil::max_rel_error(res.param_grads, fd) < 1e-6);
  (void)rec;
}

TEST_CASE("weight decay penalty and gradient") {
  Network<double> net;
  Linear<double> lin(2, 2);
  lin.weight = Tensor<double>(Shape{2, 2}, {1, 2, 3, 4});
  lin.bias = Tensor<double>(Shape{2}, {9, 9});  // must not contribute
  net.add(std::move(lin));
  net.bind(Shape{2});
  auto res = weight_decay_penalty(net);
  CHECK(res.penalty == doctest::Approx(30.0));
  CHECK(res.param_grads[0].vec() == std::vector<double>{2, 4, 6, 8});
  CHECK(res.param_grads[1].squared_norm() == 0.0);

  Network<double> zero;
  zero.add(Linear<double>(2, 2));
  zero.bind(Shape{2});
  CHECK(weight_decay_penalty(zero).penalty == 0.0);
}

TEST_CASE("weight decay equals the jacobian Frobenius norm for one layer") {
  SeededRng rng(900);
  auto net = random_relu_net(rng, {4, 3});
  Tensor<double> x(Shape{1, 4});
  fill_gaussian(x, rng);
  auto fwd = net.forward_capture(x, BnMode::pseudo_inference);
  auto jac = net.assemble_jacobian(split_records(fwd.captures)[0]);
  CHECK(weight_decay_penalty(net).penalty == doctest::Approx(jac.squared_norm()).epsilon(1e-12));
}

TEST_CASE("config validation") {
  RegularizerConfig cfg;
  CHECK(cfg.n_proj == 1);  // paper default
  CHECK(cfg.power_iters == 1);
  cfg.lambda = -1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.lambda = 0.1;
  cfg.power_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.power_iters = 1;
  cfg.penalty_exponent = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.penalty_exponent = 2;
  CHECK_NOTHROW(cfg.validate());
  CHECK(reg_kind_from_name("spectral-bound") == RegKind::spectral_bound);
  CHECK_THROWS_AS(reg_kind_from_name("bogus"), std::invalid_argument);
}
