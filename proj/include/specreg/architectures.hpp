#ifndef SPECREG_ARCHITECTURES_HPP
#define SPECREG_ARCHITECTURES_HPP

#include <cstddef>
#include <vector>

#include "specreg/network.hpp"

namespace specreg {

// LeNet variant for 1x28x28 inputs: conv-maxpool tuples (5, 1->6, 1, 2, 2)
// and (5, 6->16, 1, 0, 2) with ReLU after each convolution, then linear
// layers 400 -> 120 -> 84 -> 10 with ReLU between.
template <typename T>
Network<T> lenet() {
  Network<T> net;
  net.add(Conv2d<T>(5, 1, 6, 1, 2));
  net.add(Relu<T>());
  net.add(MaxPool2d<T>(2));
  net.add(Conv2d<T>(5, 6, 16, 1, 0));
  net.add(Relu<T>());
  net.add(MaxPool2d<T>(2));
  net.add(Flatten<T>());
  net.add(Linear<T>(400, 120));
  net.add(Relu<T>());
  net.add(Linear<T>(120, 84));
  net.add(Relu<T>());
  net.add(Linear<T>(84, 10));
  net.bind(Shape{1, 28, 28});
  return net;
}

// Flatten + fully connected ReLU stack.
template <typename T>
Network<T> mlp(const Shape& input_shape, const std::vector<std::size_t>& hidden,
               std::size_t n_classes) {
  Network<T> net;
  net.add(Flatten<T>());
  std::size_t prev = shape_numel(input_shape);
  for (std::size_t h : hidden) {
    net.add(Linear<T>(prev, h));
    net.add(Relu<T>());
    prev = h;
  }
  net.add(Linear<T>(prev, n_classes));
  net.bind(input_shape);
  return net;
}

}  // namespace specreg

#endif  // SPECREG_ARCHITECTURES_HPP
