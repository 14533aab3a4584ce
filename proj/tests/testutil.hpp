#ifndef SPECREG_TESTUTIL_HPP
#define SPECREG_TESTUTIL_HPP

#include <functional>
#include <vector>

#include "specreg/network.hpp"
#include "specreg/rng.hpp"
#include "specreg/tensor.hpp"

namespace specreg::testutil {

// Central finite differences of a scalar function over every network
// parameter. The evaluation function must not cache anything across calls;
// parameters are restored exactly.
template <typename T>
std::vector<Tensor<T>> fd_param_grads(Network<T>& net, const std::function<T()>& eval,
                                      T step = T(1e-5)) {
  auto refs = net.param_refs();
  std::vector<Tensor<T>> grads;
  grads.reserve(refs.size());
  for (auto& ref : refs) {
    Tensor<T> g(ref.value->shape());
    for (std::size_t i = 0; i < ref.value->numel(); ++i) {
      const T orig = (*ref.value)[i];
      (*ref.value)[i] = orig + step;
      const T up = eval();
      (*ref.value)[i] = orig - step;
      const T down = eval();
      (*ref.value)[i] = orig;
      g[i] = (up - down) / (2 * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

// max_i |a_i - b_i| / max(1, |a_i|, |b_i|) over two aligned gradient lists.
template <typename T>
T max_rel_error(const std::vector<Tensor<T>>& a, const std::vector<Tensor<T>>& b) {
  T worst = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].numel(); ++i) {
      const T av = a[k][i], bv = b[k][i];
      const T denom = std::max(T(1), std::max(std::abs(av), std::abs(bv)));
      worst = std::max(worst, std::abs(av - bv) / denom);
    }
  }
  return worst;
}

// Materializes a layer's bias-free linear operator on its bound input shape
// by pushing basis vectors through fmode. Independent of assemble_jacobian.
template <typename T>
Tensor<T> materialize_operator(const Layer<T>& layer, const LayerCapture<T>& cap) {
  const std::size_t n_in = shape_numel(layer.input_shape());
  const std::size_t n_out = shape_numel(layer.output_shape());
  Tensor<T> m(Shape{n_out, n_in});
  for (std::size_t j = 0; j < n_in; ++j) {
    Tensor<T> e(with_batch(1, layer.input_shape()));
    e[j] = T(1);
    Tensor<T> col = layer.fmode(e, cap);
    for (std::size_t i = 0; i < n_out; ++i) m(i, j) = col[i];
  }
  return m;
}

}  // namespace specreg::testutil

#endif  // SPECREG_TESTUTIL_HPP
