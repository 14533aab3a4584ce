#ifndef SPECREG_NETWORK_HPP
#define SPECREG_NETWORK_HPP

#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "specreg/layers.hpp"
#include "specreg/tensor.hpp"

namespace specreg {

// Identity skip over the layer block [first, last]: the input of `first` is
// added to the output of `last`. Endpoints must be shape-equal.
struct ResidualSpan {
  std::size_t first;
  std::size_t last;
};

// Region state for a batch: one LayerCapture per layer (empty for layers that
// need none). A batch-1 CaptureSet is the per-sample record that fixes the
// local linear map W_R of one input.
template <typename T>
struct CaptureSet {
  std::size_t batch = 0;
  std::vector<LayerCapture<T>> layers;
};

template <typename T>
using CaptureRecord = CaptureSet<T>;

template <typename T>
struct ForwardResult {
  Tensor<T> logits;
  CaptureSet<T> captures;
  std::vector<Tensor<T>> layer_inputs;  // input seen by each layer, for backprop
  std::vector<Tensor<T>> span_inputs;   // value entering each residual span
};

template <typename T>
struct BackpropResult {
  std::vector<Tensor<T>> param_grads;  // aligned with Network::param_refs()
  Tensor<T> input_grad;
};

// Sequential network with optional identity residual spans. Parameters are
// owned by the layers; mode passes (jvp/vjp) are const and per-sample pure
// given a capture set, while forward_capture may update batch-norm running
// statistics.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(const Network& o) { *this = o; }
  Network& operator=(const Network& o) {
    layers_.clear();
    layers_.reserve(o.layers_.size());
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
    spans_ = o.spans_;
    input_shape_ = o.input_shape_;
    bound_ = o.bound_;
    if (bound_) rebind();
    return *this;
  }
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  template <typename L>
  Network& add(L layer) {
    layers_.push_back(std::make_unique<L>(std::move(layer)));
    bound_ = false;
    return *this;
  }
  Network& add(std::unique_ptr<Layer<T>> layer) {
    layers_.push_back(std::move(layer));
    bound_ = false;
    return *this;
  }

  Network& add_residual_span(std::size_t first, std::size_t last) {
    spans_.push_back({first, last});
    bound_ = false;
    return *this;
  }

  // Propagates per-sample shapes through the stack and validates spans.
  void bind(Shape input_shape) {
    input_shape_ = std::move(input_shape);
    rebind();
  }

  std::size_t layer_count() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }
  const std::vector<ResidualSpan>& residual_spans() const { return spans_; }

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return layers_.back()->output_shape(); }
  std::size_t input_numel() const { return shape_numel(input_shape_); }
  std::size_t output_numel() const { return shape_numel(output_shape()); }

  void init_params(SeededRng& rng) {
    for (auto& l : layers_) l->init_params(rng);
  }

  std::vector<ParamRef<T>> param_refs() {
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (auto& p : layers_[i]->param_refs()) {
        p.name = std::to_string(i) + "." + std::string(layers_[i]->kind()) + "." + p.name;
        out.push_back(p);
      }
    return out;
  }

  // Index into param_refs() where layer l's tensors begin.
  std::size_t param_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < l; ++i)
      off += const_cast<Layer<T>&>(*layers_[i]).param_refs().size();
    return off;
  }
  std::size_t param_tensor_count() const { return param_offset(layers_.size()); }

  ForwardResult<T> forward_capture(const Tensor<T>& batch, BnMode mode) {
    require_bound();
    if (batch.ndim() == 0 || batch.extent(0) == 0)
      throw std::invalid_argument("forward_capture: empty batch");
    Tensor<T> x = conform(batch, input_shape_, "forward_capture input");
    ForwardResult<T> res;
    res.captures.batch = x.extent(0);
    res.captures.layers.resize(layers_.size());
    res.layer_inputs.resize(layers_.size());
    res.span_inputs.resize(spans_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (auto s = span_starting_at(l)) res.span_inputs[*s] = x;
      // only parameterized layers need their input kept for weight gradients
      if (layers_[l]->has_params()) res.layer_inputs[l] = x;
      x = layers_[l]->forward(x, res.captures.layers[l], mode);
      if (auto s = span_ending_at(l)) x += res.span_inputs[*s];
    }
    require_finite(x, "forward_capture logits");
    res.logits = std::move(x);
    return res;
  }

  // Inference-mode forward without capture bookkeeping (batch-norm uses
  // running statistics; nothing in the network mutates).
  Tensor<T> forward_inference(const Tensor<T>& batch) const {
    auto& self = const_cast<Network&>(*this);
    self.require_bound();
    Tensor<T> x = conform(batch, input_shape_, "forward_inference input");
    std::vector<Tensor<T>> spans(spans_.size());
    LayerCapture<T> scratch;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (auto s = span_starting_at(l)) spans[*s] = x;
      scratch = LayerCapture<T>{};
      x = self.layers_[l]->forward(x, scratch, BnMode::inference);
      if (auto s = span_ending_at(l)) x += spans[*s];
    }
    return x;
  }

  // W_R v by chaining forward modes; v is (B, n_in) or (B, *input_shape).
  // When store_inputs is given, the value entering every parameterized layer
  // is recorded (the a^{l-1} side of the parameter-gradient pairing).
  Tensor<T> jvp(const CaptureSet<T>& caps, const Tensor<T>& v,
                std::vector<Tensor<T>>* store_inputs = nullptr) const {
    check_caps(caps);
    Tensor<T> x = conform(v, input_shape_, "jvp input");
    if (store_inputs) {
      store_inputs->clear();
      store_inputs->resize(layers_.size());
    }
    std::vector<Tensor<T>> spans(spans_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (auto s = span_starting_at(l)) spans[*s] = x;
      if (store_inputs && layers_[l]->has_params()) (*store_inputs)[l] = x;
      x = layers_[l]->fmode(x, caps.layers[l]);
      if (auto s = span_ending_at(l)) x += spans[*s];
    }
    return x;
  }

  // W_R^T u by chaining backward modes in reverse order; u is (B, n_out) or
  // (B, *output_shape). When store_sensitivities is given, the value arriving
  // at every parameterized layer's output is recorded (the b^l side of the
  // pairing).
  Tensor<T> vjp(const CaptureSet<T>& caps, const Tensor<T>& u,
                std::vector<Tensor<T>>* store_sensitivities = nullptr) const {
    check_caps(caps);
    Tensor<T> g = conform(u, output_shape(), "vjp input");
    if (store_sensitivities) {
      store_sensitivities->clear();
      store_sensitivities->resize(layers_.size());
    }
    std::vector<Tensor<T>> span_grads(spans_.size());
    for (std::size_t li = layers_.size(); li-- > 0;) {
      if (auto s = span_ending_at(li)) span_grads[*s] = g;
      if (store_sensitivities && layers_[li]->has_params()) (*store_sensitivities)[li] = g;
      g = layers_[li]->bmode(g, caps.layers[li]);
      if (auto s = span_starting_at(li)) g += span_grads[*s];
    }
    return g;
  }

  // The region matrix W_R, assembled row by row as vjp(e_i). Oracle path:
  // n_out passes, each of batch 1.
  Tensor<T> assemble_jacobian(const CaptureRecord<T>& rec) const {
    if (rec.batch != 1)
      throw std::logic_error("assemble_jacobian: expected a batch-1 record");
    const std::size_t n_out = output_numel(), n_in = input_numel();
    Tensor<T> jac(Shape{n_out, n_in});
    for (std::size_t i = 0; i < n_out; ++i) {
      Tensor<T> e(with_batch(1, output_shape()));
      e[i] = T(1);
      Tensor<T> row = vjp(rec, e);
      std::copy(row.data(), row.data() + n_in, jac.data() + i * n_in);
    }
    return jac;
  }

  // Gradients of a scalar loss given d(loss)/d(logits). Parameter gradients
  // include biases and batch-norm affine terms, with the frozen statistics of
  // the capture treated as constants. input_grad equals vjp(output_grad).
  BackpropResult<T> backprop(const ForwardResult<T>& fwd, const Tensor<T>& output_grad) const {
    check_caps(fwd.captures);
    if (fwd.layer_inputs.size() != layers_.size())
      throw std::logic_error("backprop: forward trace does not match network");
    BackpropResult<T> out;
    out.param_grads.resize(param_tensor_count());
    Tensor<T> g = conform(output_grad, output_shape(), "backprop output_grad");
    std::vector<Tensor<T>> span_grads(spans_.size());
    for (std::size_t li = layers_.size(); li-- > 0;) {
      if (auto s = span_ending_at(li)) span_grads[*s] = g;
      if (layers_[li]->has_params()) {
        auto grads = layers_[li]->grad_params(fwd.layer_inputs[li], g, fwd.captures.layers[li],
                                              /*with_bias=*/true);
        const std::size_t off = param_offset(li);
        for (std::size_t k = 0; k < grads.size(); ++k)
          out.param_grads[off + k] = std::move(grads[k]);
      }
      g = layers_[li]->bmode(g, fwd.captures.layers[li]);
      if (auto s = span_starting_at(li)) g += span_grads[*s];
    }
    out.input_grad = std::move(g);
    return out;
  }

  // Forward through the affine map pinned by an existing capture: biases on,
  // masks/indices/statistics from `caps`. For piecewise-linear layers this is
  // x -> W_R x + b_R of the captured region.
  Tensor<T> forward_frozen(const CaptureSet<T>& caps, const Tensor<T>& batch) const {
    check_caps(caps);
    Tensor<T> x = conform(batch, input_shape_, "forward_frozen input");
    std::vector<Tensor<T>> spans(spans_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (auto s = span_starting_at(l)) spans[*s] = x;
      x = layers_[l]->forward_frozen(x, caps.layers[l]);
      if (auto s = span_ending_at(l)) x += spans[*s];
    }
    return x;
  }

 private:
  void require_bound() const {
    if (!bound_ || layers_.empty())
      throw std::logic_error("network: bind(input_shape) must run first");
  }

  void rebind() {
    Shape s = input_shape_;
    std::vector<Shape> span_entry(spans_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (auto sp = span_starting_at(l)) span_entry[*sp] = s;
      s = layers_[l]->bind(s);
      if (auto sp = span_ending_at(l)) {
        if (span_entry[*sp] != s)
          throw ShapeError("residual span " + std::to_string(spans_[*sp].first) + ".." +
                           std::to_string(spans_[*sp].last) + ": endpoint shapes differ, " +
                           shape_str(span_entry[*sp]) + " vs " + shape_str(s));
      }
    }
    for (std::size_t i = 0; i < spans_.size(); ++i) {
      if (spans_[i].first > spans_[i].last || spans_[i].last >= layers_.size())
        throw std::invalid_argument("residual span out of range");
      for (std::size_t j = i + 1; j < spans_.size(); ++j)
        if (spans_[i].first <= spans_[j].last && spans_[j].first <= spans_[i].last)
          throw std::invalid_argument("residual spans overlap");
    }
    bound_ = true;
  }

  std::optional<std::size_t> span_starting_at(std::size_t l) const {
    for (std::size_t i = 0; i < spans_.size(); ++i)
      if (spans_[i].first == l) return i;
    return std::nullopt;
  }
  std::optional<std::size_t> span_ending_at(std::size_t l) const {
    for (std::size_t i = 0; i < spans_.size(); ++i)
      if (spans_[i].last == l) return i;
    return std::nullopt;
  }

  void check_caps(const CaptureSet<T>& caps) const {
    require_bound();
    if (caps.layers.size() != layers_.size())
      throw std::logic_error("capture set does not match network (layer count " +
                             std::to_string(caps.layers.size()) + " vs " +
                             std::to_string(layers_.size()) + ")");
  }

  // Accepts (B, *expected) or flat (B, numel) and returns the structured view.
  static Tensor<T> conform(const Tensor<T>& t, const Shape& expected, const char* what) {
    if (t.ndim() == 0) throw ShapeError(std::string(what) + ": rank-0 tensor");
    const Shape per_sample = sample_shape(t.shape());
    if (per_sample == expected) return t;
    if (t.ndim() == 2 && t.extent(1) == shape_numel(expected))
      return t.reshaped(with_batch(t.extent(0), expected));
    throw ShapeError(std::string(what) + ": per-sample shape " + shape_str(per_sample) +
                     " incompatible with " + shape_str(expected));
  }

  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<ResidualSpan> spans_;
  Shape input_shape_;
  bool bound_ = false;
};

// Per-sample records sliced out of a batch capture; frozen batch-norm
// statistics are copied into every record.
template <typename T>
std::vector<CaptureRecord<T>> split_records(const CaptureSet<T>& caps) {
  std::vector<CaptureRecord<T>> out(caps.batch);
  for (std::size_t b = 0; b < caps.batch; ++b) {
    out[b].batch = 1;
    out[b].layers.resize(caps.layers.size());
    for (std::size_t l = 0; l < caps.layers.size(); ++l) {
      const LayerCapture<T>& src = caps.layers[l];
      LayerCapture<T>& dst = out[b].layers[l];
      if (!src.relu_mask.empty()) dst.relu_mask = slice_batch(src.relu_mask, b);
      if (!src.maxpool_indices.empty()) {
        const Shape out_shape = src.maxpool_indices.shape();
        const std::size_t stride = src.maxpool_indices.numel() / out_shape[0];
        dst.maxpool_indices = IndexTensor(with_batch(1, sample_shape(out_shape)));
        std::copy(src.maxpool_indices.data() + b * stride,
                  src.maxpool_indices.data() + (b + 1) * stride, dst.maxpool_indices.data());
        dst.maxpool_input_shape = with_batch(1, sample_shape(src.maxpool_input_shape));
      }
      dst.bn_mean = src.bn_mean;
      dst.bn_var = src.bn_var;
      if (!src.smooth_deriv.empty()) dst.smooth_deriv = slice_batch(src.smooth_deriv, b);
    }
  }
  return out;
}

}  // namespace specreg

#endif  // SPECREG_NETWORK_HPP
