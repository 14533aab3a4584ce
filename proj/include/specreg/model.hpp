#ifndef SPECREG_MODEL_HPP
#define SPECREG_MODEL_HPP

#include <string>

#include "specreg/data.hpp"
#include "specreg/network.hpp"

namespace specreg {

// A network plus the preprocessing statistics it was trained with, so that
// evaluation and attack runs are self-contained. `tag` carries the training
// regularizer name into result tables.
template <typename T>
struct Model {
  Network<T> net;
  NormStats<T> stats;  // empty = identity preprocessing
  std::string tag = "none";

  // raw [0,1] batch -> network input space
  Tensor<T> preprocess(const Tensor<T>& raw) const {
    if (stats.empty()) return raw;
    Tensor<T> out = raw;
    const Shape s = out.shape();
    if (s.size() != 4 || s[1] != stats.mean.numel())
      throw ShapeError("preprocess: batch shape " + shape_str(s) +
                       " does not match channel stats");
    const std::size_t plane = s[2] * s[3];
    for (std::size_t b = 0; b < s[0]; ++b)
      for (std::size_t c = 0; c < s[1]; ++c) {
        T* p = out.data() + (b * s[1] + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - stats.mean[c]) / stats.stdev[c];
      }
    return out;
  }

  // d(loss)/d(network input) -> d(loss)/d(raw pixels): one 1/std factor per
  // channel from the chain rule through preprocessing.
  Tensor<T> grad_to_raw(const Tensor<T>& input_grad) const {
    if (stats.empty()) return input_grad;
    Tensor<T> out = input_grad;
    const Shape s = out.shape();
    const std::size_t plane = s[2] * s[3];
    for (std::size_t b = 0; b < s[0]; ++b)
      for (std::size_t c = 0; c < s[1]; ++c) {
        T* p = out.data() + (b * s[1] + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) p[k] /= stats.stdev[c];
      }
    return out;
  }
};

}  // namespace specreg

#endif  // SPECREG_MODEL_HPP
