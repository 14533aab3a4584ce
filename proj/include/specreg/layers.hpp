#ifndef SPECREG_LAYERS_HPP
#define SPECREG_LAYERS_HPP

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "specreg/errors.hpp"
#include "specreg/rng.hpp"
#include "specreg/tensor.hpp"

namespace specreg {

// Batch-norm handling during a forward pass. Pseudo-inference normalizes with
// the current batch's statistics but freezes them into the capture as
// constants, so every later mode pass is a per-sample pure function.
// Inference uses the running statistics.
enum class BnMode { pseudo_inference, inference };

// Per-layer state recorded by a forward pass; exactly what is needed to pin
// down the local linear map afterwards. Unused fields stay empty.
template <typename T>
struct LayerCapture {
  Tensor<T> relu_mask;            // 0/1, batch-shaped, 1 iff output > 0
  IndexTensor maxpool_indices;    // flat argmax within each (sample, channel) plane
  Shape maxpool_input_shape;      // batched input shape S for the unpool scatter
  Tensor<T> bn_mean, bn_var;      // frozen per-channel statistics
  Tensor<T> smooth_deriv;         // df/dx at the forward point, batch-shaped
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  bool bias_like;  // bias/beta: excluded from weight decay and mode-pass gradients
};

// A network layer as an operator triple: the ordinary forward pass, the
// bias-free forward mode (v -> W v restricted to the captured region), and
// the backward mode (u -> W^T u). All passes are batched with a leading
// batch axis. Per-sample input/output shapes are fixed when the layer is
// bound into a network.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual const char* kind() const = 0;
  virtual std::unique_ptr<Layer<T>> clone() const = 0;

  // Binds per-sample shapes; returns the output shape.
  virtual Shape bind(const Shape& input_shape) = 0;
  const Shape& input_shape() const { return in_shape_; }
  const Shape& output_shape() const { return out_shape_; }

  virtual bool needs_capture() const { return false; }

  virtual Tensor<T> forward(const Tensor<T>& x, LayerCapture<T>& cap, BnMode mode) = 0;
  virtual Tensor<T> fmode(const Tensor<T>& v, const LayerCapture<T>& cap) const = 0;
  virtual Tensor<T> bmode(const Tensor<T>& u, const LayerCapture<T>& cap) const = 0;

  // Forward with the region pinned by an existing capture: masks, pool
  // indices and batch-norm statistics come from `cap`, biases stay on.
  // Turns the network into the affine map x -> W_R x + b_R of the captured
  // region; used by finite-difference verification.
  virtual Tensor<T> forward_frozen(const Tensor<T>& x, const LayerCapture<T>& cap) const = 0;

  virtual std::vector<ParamRef<T>> param_refs() { return {}; }
  virtual bool has_params() const { return false; }

  // Pairing rule for parameter gradients: input_side is the activation
  // arriving at this layer in a forward-mode pass, output_side the
  // sensitivity arriving at its output in a backward-mode pass. Returns one
  // gradient tensor per param_refs entry, summed over the batch. with_bias
  // adds the bias/beta terms (training backprop); mode-pass gradients leave
  // them zero since W_R is bias-independent.
  virtual std::vector<Tensor<T>> grad_params(const Tensor<T>& input_side,
                                             const Tensor<T>& output_side,
                                             const LayerCapture<T>& cap, bool with_bias) const {
    (void)input_side;
    (void)output_side;
    (void)cap;
    if (with_bias)
      throw std::logic_error(std::string(kind()) + ": bias gradient requested on a layer "
                                                   "without parameters");
    return {};
  }

  virtual void init_params(SeededRng& rng) { (void)rng; }

 protected:
  void check_input(const Tensor<T>& x, const char* pass) const {
    if (x.ndim() == 0 || sample_shape(x.shape()) != in_shape_)
      throw ShapeError(std::string(kind()) + " " + pass + ": expected per-sample shape " +
                       shape_str(in_shape_) + ", got " + shape_str(x.shape()));
  }
  void check_output_side(const Tensor<T>& u, const char* pass) const {
    if (u.ndim() == 0 || sample_shape(u.shape()) != out_shape_)
      throw ShapeError(std::string(kind()) + " " + pass + ": expected per-sample shape " +
                       shape_str(out_shape_) + ", got " + shape_str(u.shape()));
  }

  Shape in_shape_, out_shape_;
};

// ---------------------------------------------------------------------------
// Linear: y = x W^T + b on (B, in) rows.
// ---------------------------------------------------------------------------
template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(std::size_t in, std::size_t out)
      : weight(Shape{out, in}), bias(Shape{out}), in_(in), out_(out) {}

  const char* kind() const override { return "Linear"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }

  Shape bind(const Shape& input_shape) override {
    if (input_shape != Shape{in_})
      throw ShapeError("Linear bind: expected " + shape_str(Shape{in_}) + ", got " +
                       shape_str(input_shape));
    this->in_shape_ = input_shape;
    this->out_shape_ = Shape{out_};
    return this->out_shape_;
  }

  Tensor<T> forward(const Tensor<T>& x, LayerCapture<T>&, BnMode) override {
    return affine(x, true);
  }
  Tensor<T> fmode(const Tensor<T>& v, const LayerCapture<T>&) const override {
    return affine(v, false);
  }
  Tensor<T> bmode(const Tensor<T>& u, const LayerCapture<T>&) const override {
    this->check_output_side(u, "bmode");
    const std::size_t batch = u.extent(0);
    Tensor<T> y(with_batch(batch, this->in_shape_));
    for (std::size_t b = 0; b < batch; ++b) {
      const T* ur = u.data() + b * out_;
      T* yr = y.data() + b * in_;
      for (std::size_t o = 0; o < out_; ++o) {
        const T uo = ur[o];
        if (uo == T(0)) continue;
        const T* wr = weight.data() + o * in_;
        for (std::size_t i = 0; i < in_; ++i) yr[i] += uo * wr[i];
      }
    }
    return y;
  }
  Tensor<T> forward_frozen(const Tensor<T>& x, const LayerCapture<T>&) const override {
    return affine(x, true);
  }

  bool has_params() const override { return true; }
  std::vector<ParamRef<T>> param_refs() override {
    return {{"weight", &weight, false}, {"bias", &bias, true}};
  }

  std::vector<Tensor<T>> grad_params(const Tensor<T>& input_side, const Tensor<T>& output_side,
                                     const LayerCapture<T>&, bool with_bias) const override {
    const std::size_t batch = input_side.extent(0);
    Tensor<T> dw(Shape{out_, in_});
    Tensor<T> db(Shape{out_});
    for (std::size_t b = 0; b < batch; ++b) {
      const T* ir = input_side.data() + b * in_;
      const T* orow = output_side.data() + b * out_;
      for (std::size_t o = 0; o < out_; ++o) {
        const T g = orow[o];
        if (g != T(0)) {
          T* dwr = dw.data() + o * in_;
          for (std::size_t i = 0; i < in_; ++i) dwr[i] += g * ir[i];
        }
        if (with_bias) db[o] += g;
      }
    }
    return {std::move(dw), std::move(db)};
  }

  void init_params(SeededRng& rng) override {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    fill_uniform(weight, rng, -bound, bound);
    fill_uniform(bias, rng, -bound, bound);
  }

  Tensor<T> weight;  // (out, in)
  Tensor<T> bias;    // (out)

 private:
  Tensor<T> affine(const Tensor<T>& x, bool with_bias) const {
    this->check_input(x, with_bias ? "forward" : "fmode");
    const std::size_t batch = x.extent(0);
    Tensor<T> y(with_batch(batch, this->out_shape_));
    for (std::size_t b = 0; b < batch; ++b) {
      const T* xr = x.data() + b * in_;
      T* yr = y.data() + b * out_;
      for (std::size_t o = 0; o < out_; ++o) {
        const T* wr = weight.data() + o * in_;
        T s = with_bias ? bias[o] : T(0);
        for (std::size_t i = 0; i < in_; ++i) s += wr[i] * xr[i];
        yr[o] = s;
      }
    }
    return y;
  }

  std::size_t in_, out_;
};

namespace conv_detail {

// Stride-1 cross-correlation row stencil shared by the forward pass and the
// transposed convolution (which is a correlation with the channel-transposed,
// spatially flipped kernel and complementary padding). Interior output pixels
// take all k taps from registers; edge pixels run with clipped tap ranges.
template <typename T>
void correlate_s1(const T* x, std::size_t batch, std::size_t cin, std::size_t h,
                  std::size_t w, const T* weight, const T* bias, std::size_t k,
                  std::size_t pad, std::size_t cout, std::size_t ho, std::size_t wo, T* y) {
  const std::size_t in_plane = h * w, out_plane = ho * wo;
  const std::size_t ow_full_lo = std::min(pad, wo);
  const std::size_t ow_full_hi = w + pad + 1 > k ? std::min(wo, w + pad + 1 - k) : 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* xb = x + b * cin * in_plane;
    T* yb = y + b * cout * out_plane;
    for (std::size_t co = 0; co < cout; ++co) {
      T* yp = yb + co * out_plane;
      const T bval = bias ? bias[co] : T(0);
      for (std::size_t i = 0; i < out_plane; ++i) yp[i] = bval;
      const T* wbase = weight + co * cin * k * k;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xp = xb + ci * in_plane;
        const T* wp = wbase + ci * k * k;
        for (std::size_t kh = 0; kh < k; ++kh) {
          const std::size_t oh_lo = pad > kh ? pad - kh : 0;
          const std::size_t oh_hi = std::min(ho, h + pad - kh);
          const T* wrow = wp + kh * k;
          for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
            const T* xr = xp + (oh + kh - pad) * w;
            T* yr = yp + oh * wo;
            for (std::size_t ow = 0; ow < ow_full_lo; ++ow) {
              const std::size_t kw_lo = pad - ow;
              const std::size_t kw_hi = std::min(k, w + pad - ow);
              T acc = 0;
              for (std::size_t kw = kw_lo; kw < kw_hi; ++kw)
                acc += wrow[kw] * xr[ow + kw - pad];
              yr[ow] += acc;
            }
            for (std::size_t ow = ow_full_lo; ow < ow_full_hi; ++ow) {
              const T* xs = xr + ow - pad;
              T acc = 0;
              for (std::size_t kw = 0; kw < k; ++kw) acc += wrow[kw] * xs[kw];
              yr[ow] += acc;
            }
            for (std::size_t ow = std::max(ow_full_hi, ow_full_lo); ow < wo; ++ow) {
              const std::size_t kw_hi = std::min(k, w + pad - ow);
              T acc = 0;
              for (std::size_t kw = 0; kw < kw_hi; ++kw)
                acc += wrow[kw] * xr[ow + kw - pad];
              yr[ow] += acc;
            }
          }
        }
      }
    }
  }
}

}  // namespace conv_detail

// ---------------------------------------------------------------------------
// Conv2d: square-kernel cross-correlation on (B, C, H, W), bias per output
// channel. Backward mode is the transposed convolution with the same kernel.
// ---------------------------------------------------------------------------
template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(std::size_t kernel, std::size_t c_in, std::size_t c_out, std::size_t stride,
         std::size_t padding)
      : weight(Shape{c_out, c_in, kernel, kernel}),
        bias(Shape{c_out}),
        k_(kernel),
        cin_(c_in),
        cout_(c_out),
        stride_(stride),
        pad_(padding) {}

  const char* kind() const override { return "Conv2d"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

  Shape bind(const Shape& input_shape) override {
    if (input_shape.size() != 3 || input_shape[0] != cin_)
      throw ShapeError("Conv2d bind: expected (C=" + std::to_string(cin_) + ",H,W), got " +
                       shape_str(input_shape));
    const std::size_t h = input_shape[1], w = input_shape[2];
    if (h + 2 * pad_ < k_ || w + 2 * pad_ < k_)
      throw ShapeError("Conv2d bind: kernel larger than padded input");
    h_ = h;
    w_ = w;
    ho_ = (h + 2 * pad_ - k_) / stride_ + 1;
    wo_ = (w + 2 * pad_ - k_) / stride_ + 1;
    this->in_shape_ = input_shape;
    this->out_shape_ = Shape{cout_, ho_, wo_};
    return this->out_shape_;
  }

  Tensor<T> forward(const Tensor<T>& x, LayerCapture<T>&, BnMode) override {
    return correlate(x, true);
  }
  Tensor<T> fmode(const Tensor<T>& v, const LayerCapture<T>&) const override {
    return correlate(v, false);
  }
  Tensor<T> bmode(const Tensor<T>& u, const LayerCapture<T>&) const override {
    this->check_output_side(u, "bmode");
    const std::size_t batch = u.extent(0);
    Tensor<T> y(with_batch(batch, this->in_shape_));
    const std::size_t in_plane = h_ * w_, out_plane = ho_ * wo_;
    if (stride_ == 1) {  // scatter: contiguous grad rows accumulate into input rows
      for (std::size_t b = 0; b < batch; ++b) {
        T* yb = y.data() + b * cin_ * in_plane;
        const T* ub = u.data() + b * cout_ * out_plane;
        for (std::size_t co = 0; co < cout_; ++co) {
          const T* up = ub + co * out_plane;
          const T* wbase = weight.data() + co * cin_ * k_ * k_;
          for (std::size_t ci = 0; ci < cin_; ++ci) {
            T* yp = yb + ci * in_plane;
            const T* wp = wbase + ci * k_ * k_;
            for (std::size_t kh = 0; kh < k_; ++kh) {
              const std::size_t oh_lo = pad_ > kh ? pad_ - kh : 0;
              const std::size_t oh_hi = std::min(ho_, h_ + pad_ - kh);
              for (std::size_t kw = 0; kw < k_; ++kw) {
                const T wv = wp[kh * k_ + kw];
                if (wv == T(0)) continue;
                const std::size_t ow_lo = pad_ > kw ? pad_ - kw : 0;
                const std::size_t ow_hi = std::min(wo_, w_ + pad_ - kw);
                for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                  const T* urow = up + oh * wo_ + ow_lo;
                  T* yrow = yp + (oh + kh - pad_) * w_ + (ow_lo + kw - pad_);
                  for (std::size_t i = 0; i < ow_hi - ow_lo; ++i) yrow[i] += wv * urow[i];
                }
              }
            }
          }
        }
      }
      return y;
    }
    for (std::size_t b = 0; b < batch; ++b) {
      T* yb = y.data() + b * cin_ * in_plane;
      const T* ub = u.data() + b * cout_ * out_plane;
      for (std::size_t co = 0; co < cout_; ++co) {
        const T* up = ub + co * out_plane;
        const T* wbase = weight.data() + co * cin_ * k_ * k_;
        for (std::size_t oh = 0; oh < ho_; ++oh) {
          std::size_t kh_lo, kh_hi;
          tap_range(oh, h_, kh_lo, kh_hi);
          const std::ptrdiff_t ih0 = static_cast<std::ptrdiff_t>(oh * stride_) -
                                     static_cast<std::ptrdiff_t>(pad_);
          for (std::size_t ow = 0; ow < wo_; ++ow) {
            const T g = up[oh * wo_ + ow];
            if (g == T(0)) continue;
            std::size_t kw_lo, kw_hi;
            tap_range(ow, w_, kw_lo, kw_hi);
            const std::ptrdiff_t iw0 = static_cast<std::ptrdiff_t>(ow * stride_) -
                                       static_cast<std::ptrdiff_t>(pad_);
            for (std::size_t ci = 0; ci < cin_; ++ci) {
              T* yp = yb + ci * in_plane;
              const T* wp = wbase + ci * k_ * k_;
              for (std::size_t kh = kh_lo; kh < kh_hi; ++kh) {
                T* yrow = yp + (ih0 + static_cast<std::ptrdiff_t>(kh)) * w_ + iw0;
                const T* wrow = wp + kh * k_;
                for (std::size_t kw = kw_lo; kw < kw_hi; ++kw) yrow[kw] += g * wrow[kw];
              }
            }
          }
        }
      }
    }
    return y;
  }
  Tensor<T> forward_frozen(const Tensor<T>& x, const LayerCapture<T>&) const override {
    return correlate(x, true);
  }

  bool has_params() const override { return true; }
  std::vector<ParamRef<T>> param_refs() override {
    return {{"weight", &weight, false}, {"bias", &bias, true}};
  }

  std::vector<Tensor<T>> grad_params(const Tensor<T>& input_side, const Tensor<T>& output_side,
                                     const LayerCapture<T>&, bool with_bias) const override {
    const std::size_t batch = input_side.extent(0);
    Tensor<T> dw(Shape{cout_, cin_, k_, k_});
    Tensor<T> db(Shape{cout_});
    const std::size_t in_plane = h_ * w_, out_plane = ho_ * wo_;
    if (stride_ == 1) {
      for (std::size_t b = 0; b < batch; ++b) {
        const T* xb = input_side.data() + b * cin_ * in_plane;
        const T* ub = output_side.data() + b * cout_ * out_plane;
        for (std::size_t co = 0; co < cout_; ++co) {
          const T* up = ub + co * out_plane;
          if (with_bias) {
            T s = 0;
            for (std::size_t i = 0; i < out_plane; ++i) s += up[i];
            db[co] += s;
          }
          T* dwbase = dw.data() + co * cin_ * k_ * k_;
          for (std::size_t ci = 0; ci < cin_; ++ci) {
            const T* xp = xb + ci * in_plane;
            T* dwp = dwbase + ci * k_ * k_;
            for (std::size_t kh = 0; kh < k_; ++kh) {
              const std::size_t oh_lo = pad_ > kh ? pad_ - kh : 0;
              const std::size_t oh_hi = std::min(ho_, h_ + pad_ - kh);
              for (std::size_t kw = 0; kw < k_; ++kw) {
                const std::size_t ow_lo = pad_ > kw ? pad_ - kw : 0;
                const std::size_t ow_hi = std::min(wo_, w_ + pad_ - kw);
                T acc = 0;
                for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                  const T* urow = up + oh * wo_ + ow_lo;
                  const T* xrow = xp + (oh + kh - pad_) * w_ + (ow_lo + kw - pad_);
                  for (std::size_t i = 0; i < ow_hi - ow_lo; ++i) acc += urow[i] * xrow[i];
                }
                dwp[kh * k_ + kw] += acc;
              }
            }
          }
        }
      }
      return {std::move(dw), std::move(db)};
    }
    for (std::size_t b = 0; b < batch; ++b) {
      const T* xb = input_side.data() + b * cin_ * in_plane;
      const T* ub = output_side.data() + b * cout_ * out_plane;
      for (std::size_t co = 0; co < cout_; ++co) {
        const T* up = ub + co * out_plane;
        T* dwbase = dw.data() + co * cin_ * k_ * k_;
        for (std::size_t oh = 0; oh < ho_; ++oh) {
          std::size_t kh_lo, kh_hi;
          tap_range(oh, h_, kh_lo, kh_hi);
          const std::ptrdiff_t ih0 = static_cast<std::ptrdiff_t>(oh * stride_) -
                                     static_cast<std::ptrdiff_t>(pad_);
          for (std::size_t ow = 0; ow < wo_; ++ow) {
            const T g = up[oh * wo_ + ow];
            if (g == T(0)) continue;
            if (with_bias) db[co] += g;
            std::size_t kw_lo, kw_hi;
            tap_range(ow, w_, kw_lo, kw_hi);
            const std::ptrdiff_t iw0 = static_cast<std::ptrdiff_t>(ow * stride_) -
                                       static_cast<std::ptrdiff_t>(pad_);
            for (std::size_t ci = 0; ci < cin_; ++ci) {
              const T* xp = xb + ci * in_plane;
              T* dwp = dwbase + ci * k_ * k_;
              for (std::size_t kh = kh_lo; kh < kh_hi; ++kh) {
                const T* xrow = xp + (ih0 + static_cast<std::ptrdiff_t>(kh)) * w_ + iw0;
                T* dwrow = dwp + kh * k_;
                for (std::size_t kw = kw_lo; kw < kw_hi; ++kw) dwrow[kw] += g * xrow[kw];
              }
            }
          }
        }
      }
    }
    return {std::move(dw), std::move(db)};
  }

  void init_params(SeededRng& rng) override {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin_ * k_ * k_));
    fill_uniform(weight, rng, -bound, bound);
    fill_uniform(bias, rng, -bound, bound);
  }

  std::size_t stride() const { return stride_; }
  std::size_t padding() const { return pad_; }

  Tensor<T> weight;  // (C_out, C_in, K, K)
  Tensor<T> bias;    // (C_out)

 private:
  // Valid kernel range along one axis for output index o: start offset and
  // length such that every tap lands in [0, extent).
  void tap_range(std::size_t o, std::size_t extent, std::size_t& lo, std::size_t& hi) const {
    const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(o * stride_) -
                                static_cast<std::ptrdiff_t>(pad_);
    lo = base < 0 ? static_cast<std::size_t>(-base) : 0;
    const std::ptrdiff_t room = static_cast<std::ptrdiff_t>(extent) - base;
    hi = room < static_cast<std::ptrdiff_t>(k_) ? (room < 0 ? 0 : static_cast<std::size_t>(room))
                                                : k_;
  }

  Tensor<T> correlate(const Tensor<T>& x, bool with_bias) const {
    this->check_input(x, with_bias ? "forward" : "fmode");
    const std::size_t batch = x.extent(0);
    Tensor<T> y(with_batch(batch, this->out_shape_));
    const std::size_t in_plane = h_ * w_, out_plane = ho_ * wo_;
    if (stride_ == 1) {
      conv_detail::correlate_s1(x.data(), batch, cin_, h_, w_, weight.data(),
                                with_bias ? bias.data() : nullptr, k_, pad_, cout_, ho_, wo_,
                                y.data());
      return y;
    }
    for (std::size_t b = 0; b < batch; ++b) {
      const T* xb = x.data() + b * cin_ * in_plane;
      T* yb = y.data() + b * cout_ * out_plane;
      for (std::size_t co = 0; co < cout_; ++co) {
        T* yp = yb + co * out_plane;
        const T bval = with_bias ? bias[co] : T(0);
        const T* wbase = weight.data() + co * cin_ * k_ * k_;
        for (std::size_t oh = 0; oh < ho_; ++oh) {
          std::size_t kh_lo, kh_hi;
          tap_range(oh, h_, kh_lo, kh_hi);
          const std::ptrdiff_t ih0 = static_cast<std::ptrdiff_t>(oh * stride_) -
                                     static_cast<std::ptrdiff_t>(pad_);
          for (std::size_t ow = 0; ow < wo_; ++ow) {
            std::size_t kw_lo, kw_hi;
            tap_range(ow, w_, kw_lo, kw_hi);
            const std::ptrdiff_t iw0 = static_cast<std::ptrdiff_t>(ow * stride_) -
                                       static_cast<std::ptrdiff_t>(pad_);
            T s = bval;
            for (std::size_t ci = 0; ci < cin_; ++ci) {
              const T* xp = xb + ci * in_plane;
              const T* wp = wbase + ci * k_ * k_;
              for (std::size_t kh = kh_lo; kh < kh_hi; ++kh) {
                const T* xrow = xp + (ih0 + static_cast<std::ptrdiff_t>(kh)) * w_ + iw0;
                const T* wrow = wp + kh * k_;
                for (std::size_t kw = kw_lo; kw < kw_hi; ++kw) s += xrow[kw] * wrow[kw];
              }
            }
            yp[oh * wo_ + ow] = s;
          }
        }
      }
    }
    return y;
  }

  std::size_t k_, cin_, cout_, stride_, pad_;
  std::size_t h_ = 0, w_ = 0, ho_ = 0, wo_ = 0;
};

// ---------------------------------------------------------------------------
// MaxPool2d: non-overlapping M x M windows, stride M, no padding. The argmax
// (first hit in row-major scan order on ties) is captured once and reused by
// both modes: forward mode gathers at the stored indices, backward mode
// scatters into the stored input shape.
// ---------------------------------------------------------------------------
template <typename T>
class MaxPool2d : public Layer<T> {
 public:
  explicit MaxPool2d(std::size_t window) : m_(window) {}

  const char* kind() const override { return "MaxPool2d"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2d>(*this); }
  bool needs_capture() const override { return true; }

  Shape bind(const Shape& input_shape) override {
    if (input_shape.size() != 3)
      throw ShapeError("MaxPool2d bind: expected (C,H,W), got " + shape_str(input_shape));
    if (input_shape[1] < m_ || input_shape[2] < m_)
      throw ShapeError("MaxPool2d bind: window larger than input");
    c_ = input_shape[0];
    h_ = input_shape[1];
    w_ = input_shape[2];
    ho_ = h_ / m_;
    wo_ = w_ / m_;
    this->in_shape_ = input_shape;
    this->out_shape_ = Shape{c_, ho_, wo_};
    return this->out_shape_;
  }

  Tensor<T> forward(const Tensor<T>& x, LayerCapture<T>& cap, BnMode) override {
    this->check_input(x, "forward");
    const std::size_t batch = x.extent(0);
    Tensor<T> y(with_batch(batch, this->out_shape_));
    cap.maxpool_indices = IndexTensor(with_batch(batch, this->out_shape_));
    cap.maxpool_input_shape = x.shape();
    const std::size_t in_plane = h_ * w_, out_plane = ho_ * wo_;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < c_; ++c) {
        const T* xp = x.data() + (b * c_ + c) * in_plane;
        T* yp = y.data() + (b * c_ + c) * out_plane;
        std::int64_t* ip = cap.maxpool_indices.data() + (b * c_ + c) * out_plane;
        for (std::size_t oh = 0; oh < ho_; ++oh)
          for (std::size_t ow = 0; ow < wo_; ++ow) {
            T best = xp[(oh * m_) * w_ + ow * m_];
            std::size_t best_idx = (oh * m_) * w_ + ow * m_;
            for (std::size_t dh = 0; dh < m_; ++dh)
              for (std::size_t dw = 0; dw < m_; ++dw) {
                const std::size_t idx = (oh * m_ + dh) * w_ + ow * m_ + dw;
                if (xp[idx] > best) {  // strict: first max in scan order wins
                  best = xp[idx];
                  best_idx = idx;
                }
              }
            yp[oh * wo_ + ow] = best;
            ip[oh * wo_ + ow] = static_cast<std::int64_t>(best_idx);
          }
      }
    return y;
  }

  Tensor<T> fmode(const Tensor<T>& v, const LayerCapture<T>& cap) const override {
    this->check_input(v, "fmode");
    require_capture(cap, v.extent(0));
    const std::size_t batch = v.extent(0);
    Tensor<T> y(with_batch(batch, this->out_shape_));
    gather(v, cap, y);
    return y;
  }

  Tensor<T> bmode(const Tensor<T>& u, const LayerCapture<T>& cap) const override {
    this->check_output_side(u, "bmode");
    require_capture(cap, u.extent(0));
    const std::size_t batch = u.extent(0);
    Tensor<T> y(cap.maxpool_input_shape);
    const std::size_t in_plane = h_ * w_, out_plane = ho_ * wo_;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < c_; ++c) {
        const T* up = u.data() + (b * c_ + c) * out_plane;
        const std::int64_t* ip = cap.maxpool_indices.data() + (b * c_ + c) * out_plane;
        T* yp = y.data() + (b * c_ + c) * in_plane;
        for (std::size_t o = 0; o < out_plane; ++o) yp[ip[o]] += up[o];
      }
    return y;
  }

  Tensor<T> forward_frozen(const Tensor<T>& x, const LayerCapture<T>& cap) const override {
    return fmode(x, cap);  // gather at frozen indices; pooling has no bias
  }

  std::size_t window() const { return m_; }

 private:
  void require_capture(const LayerCapture<T>& cap, std::size_t batch) const {
    if (cap.maxpool_indices.empty())
      throw std::logic_error("MaxPool2d: mode pass without a capture");
    if (cap.maxpool_indices.shape() != with_batch(batch, this->out_shape_))
      throw ShapeError("MaxPool2d: capture batch mismatch");
  }
  void gather(const Tensor<T>& v, const LayerCapture<T>& cap, Tensor<T>& y) const {
    const std::size_t batch = v.extent(0);
    const std::size_t in_plane = h_ * w_, out_plane = ho_ * wo_;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < c_; ++c) {
        const T* vp = v.data() + (b * c_ + c) * in_plane;
        const std::int64_t* ip = cap.maxpool_indices.data() + (b * c_ + c) * out_plane;
        T* yp = y.data() + (b * c_ + c) * out_plane;
        for (std::size_t o = 0; o < out_plane; ++o) yp[o] = vp[ip[o]];
      }
  }

  std::size_t m_;
  std::size_t c_ = 0, h_ = 0, w_ = 0, ho_ = 0, wo_ = 0;
};

// ---------------------------------------------------------------------------
// ReLU. The mask z = 1{output > 0} is the captured region state; inputs that
// are exactly zero get mask 0. Both modes multiply by the mask (diagonal,
// self-adjoint).
// ---------------------------------------------------------------------------
template <typename T>
class Relu : public Layer<T> {
 public:
  const char* kind() const override { return "ReLU"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Relu>(*this); }
  bool needs_capture() const override { return true; }

  Shape bind(const Shape& input_shape) override {
    this->in_shape_ = input_shape;
    this->out_shape_ = input_shape;
    return input_shape;
  }

  Tensor<T> forward(const Tensor<T>& x, LayerCapture<T>& cap, BnMode) override {
    this->check_input(x, "forward");
    Tensor<T> y = x;
    cap.relu_mask = Tensor<T>(x.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) {
      if (y[i] > T(0)) {
        cap.relu_mask[i] = T(1);
      } else {
        y[i] = T(0);
      }
    }
    return y;
  }

  Tensor<T> fmode(const Tensor<T>& v, const LayerCapture<T>& cap) const override {
    this->check_input(v, "fmode");
    if (cap.relu_mask.numel() != v.numel())
      throw std::logic_error("ReLU: mode pass without a matching capture");
    Tensor<T> y = v;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= cap.relu_mask[i];
    return y;
  }
  Tensor<T> bmode(const Tensor<T>& u, const LayerCapture<T>& cap) const override {
    return fmode(u, cap);
  }
  Tensor<T> forward_frozen(const Tensor<T>& x, const LayerCapture<T>& cap) const override {
    return fmode(x, cap);
  }
};

// ---------------------------------------------------------------------------
// BatchNorm2d over (B, C, H, W) with per-channel affine parameters. In
// pseudo-inference mode the batch statistics (biased variance) are used for
// normalization, frozen into the capture, and folded into the running
// estimates; mode passes and frozen forwards treat them as constants, which
// removes the cross-sample Jacobian coupling.
// ---------------------------------------------------------------------------
template <typename T>
class BatchNorm2d : public Layer<T> {
 public:
  explicit BatchNorm2d(std::size_t channels, T epsilon = T(1e-5))
      : gamma(Shape{channels}), beta(Shape{channels}), running_mean(Shape{channels}),
        running_var(Shape{channels}), eps_(epsilon), c_(channels) {
    if (!(epsilon > T(0))) throw std::invalid_argument("BatchNorm2d: epsilon must be > 0");
    gamma.fill(T(1));
    running_var.fill(T(1));
  }

  const char* kind() const override { return "BatchNorm2d"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  bool needs_capture() const override { return true; }

  Shape bind(const Shape& input_shape) override {
    if (input_shape.size() != 3 || input_shape[0] != c_)
      throw ShapeError("BatchNorm2d bind: expected (C=" + std::to_string(c_) + ",H,W), got " +
                       shape_str(input_shape));
    plane_ = input_shape[1] * input_shape[2];
    this->in_shape_ = input_shape;
    this->out_shape_ = input_shape;
    return input_shape;
  }

  Tensor<T> forward(const Tensor<T>& x, LayerCapture<T>& cap, BnMode mode) override {
    this->check_input(x, "forward");
    const std::size_t batch = x.extent(0);
    Tensor<T> mean(Shape{c_}), var(Shape{c_});
    if (mode == BnMode::pseudo_inference) {
      const T n = static_cast<T>(batch * plane_);
      for (std::size_t c = 0; c < c_; ++c) {
        T s = 0;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* xp = x.data() + (b * c_ + c) * plane_;
          for (std::size_t i = 0; i < plane_; ++i) s += xp[i];
        }
        mean[c] = s / n;
        T v2 = 0;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* xp = x.data() + (b * c_ + c) * plane_;
          for (std::size_t i = 0; i < plane_; ++i) {
            const T d = xp[i] - mean[c];
            v2 += d * d;
          }
        }
        var[c] = v2 / n;
      }
      for (std::size_t c = 0; c < c_; ++c) {
        running_mean[c] = (T(1) - momentum_) * running_mean[c] + momentum_ * mean[c];
        running_var[c] = (T(1) - momentum_) * running_var[c] + momentum_ * var[c];
      }
    } else {
      mean = running_mean;
      var = running_var;
    }
    cap.bn_mean = mean;
    cap.bn_var = var;
    Tensor<T> y(x.shape());
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < c_; ++c) {
        const T scale = gamma[c] / std::sqrt(var[c] + eps_);
        const T shift = beta[c] - mean[c] * scale;
        const T* xp = x.data() + (b * c_ + c) * plane_;
        T* yp = y.data() + (b * c_ + c) * plane_;
        for (std::size_t i = 0; i < plane_; ++i) yp[i] = xp[i] * scale + shift;
      }
    return y;
  }

  Tensor<T> fmode(const Tensor<T>& v, const LayerCapture<T>& cap) const override {
    this->check_input(v, "fmode");
    require_capture(cap);
    Tensor<T> y = v;
    const std::size_t batch = v.extent(0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < c_; ++c) {
        const T scale = gamma[c] / std::sqrt(cap.bn_var[c] + eps_);
        T* yp = y.data() + (b * c_ + c) * plane_;
        for (std::size_t i = 0; i < plane_; ++i) yp[i] *= scale;
      }
    return y;
  }
  Tensor<T> bmode(const Tensor<T>& u, const LayerCapture<T>& cap) const override {
    return fmode(u, cap);  // diagonal, self-adjoint
  }
  Tensor<T> forward_frozen(const Tensor<T>& x, const LayerCapture<T>& cap) const override {
    this->check_input(x, "forward_frozen");
    require_capture(cap);
    Tensor<T> y = x;
    const std::size_t batch = x.extent(0);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < c_; ++c) {
        const T scale = gamma[c] / std::sqrt(cap.bn_var[c] + eps_);
        const T shift = beta[c] - cap.bn_mean[c] * scale;
        T* yp = y.data() + (b * c_ + c) * plane_;
        for (std::size_t i = 0; i < plane_; ++i) yp[i] = yp[i] * scale + shift;
      }
    return y;
  }

  bool has_params() const override { return true; }
  std::vector<ParamRef<T>> param_refs() override {
    return {{"gamma", &gamma, false}, {"beta", &beta, true}};
  }

  // input_side is the raw layer input; gamma pairs with the normalized input
  // for backprop and with 1/sqrt(var+eps) scaling for mode-pass gradients.
  std::vector<Tensor<T>> grad_params(const Tensor<T>& input_side, const Tensor<T>& output_side,
                                     const LayerCapture<T>& cap, bool with_bias) const override {
    require_capture(cap);
    const std::size_t batch = input_side.extent(0);
    Tensor<T> dgamma(Shape{c_}), dbeta(Shape{c_});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < c_; ++c) {
        const T inv = T(1) / std::sqrt(cap.bn_var[c] + eps_);
        const T* xp = input_side.data() + (b * c_ + c) * plane_;
        const T* up = output_side.data() + (b * c_ + c) * plane_;
        T sg = 0, sb = 0;
        for (std::size_t i = 0; i < plane_; ++i) {
          const T centered = with_bias ? (xp[i] - cap.bn_mean[c]) : xp[i];
          sg += up[i] * centered * inv;
          sb += up[i];
        }
        dgamma[c] += sg;
        if (with_bias) dbeta[c] += sb;
      }
    return {std::move(dgamma), std::move(dbeta)};
  }

  T epsilon() const { return eps_; }

  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;

 private:
  void require_capture(const LayerCapture<T>& cap) const {
    if (cap.bn_var.numel() != c_)
      throw std::logic_error("BatchNorm2d: mode pass without frozen statistics");
  }

  T eps_;
  T momentum_ = T(0.1);
  std::size_t c_, plane_ = 0;
};

// ---------------------------------------------------------------------------
// Flatten (C,H,W) -> (C*H*W).
// ---------------------------------------------------------------------------
template <typename T>
class Flatten : public Layer<T> {
 public:
  const char* kind() const override { return "Flatten"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Flatten>(*this); }

  Shape bind(const Shape& input_shape) override {
    this->in_shape_ = input_shape;
    this->out_shape_ = Shape{shape_numel(input_shape)};
    return this->out_shape_;
  }

  Tensor<T> forward(const Tensor<T>& x, LayerCapture<T>&, BnMode) override {
    this->check_input(x, "forward");
    return x.reshaped(with_batch(x.extent(0), this->out_shape_));
  }
  Tensor<T> fmode(const Tensor<T>& v, const LayerCapture<T>&) const override {
    this->check_input(v, "fmode");
    return v.reshaped(with_batch(v.extent(0), this->out_shape_));
  }
  Tensor<T> bmode(const Tensor<T>& u, const LayerCapture<T>&) const override {
    this->check_output_side(u, "bmode");
    return u.reshaped(with_batch(u.extent(0), this->in_shape_));
  }
  Tensor<T> forward_frozen(const Tensor<T>& x, const LayerCapture<T>& cap) const override {
    return fmode(x, cap);
  }
};

// ---------------------------------------------------------------------------
// Elementwise smooth activation (sigmoid or tanh). The capture stores the
// pointwise derivative at the forward point; both modes multiply by it,
// which is the diagonal-derivative extension of the boolean-mask scheme.
// ---------------------------------------------------------------------------
enum class SmoothKind { sigmoid, tanh };

template <typename T>
class SmoothActivation : public Layer<T> {
 public:
  explicit SmoothActivation(SmoothKind fn) : fn_(fn) {}

  const char* kind() const override {
    return fn_ == SmoothKind::sigmoid ? "Sigmoid" : "Tanh";
  }
  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<SmoothActivation>(*this);
  }
  bool needs_capture() const override { return true; }

  Shape bind(const Shape& input_shape) override {
    this->in_shape_ = input_shape;
    this->out_shape_ = input_shape;
    return input_shape;
  }

  Tensor<T> forward(const Tensor<T>& x, LayerCapture<T>& cap, BnMode) override {
    this->check_input(x, "forward");
    Tensor<T> y(x.shape());
    cap.smooth_deriv = Tensor<T>(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (fn_ == SmoothKind::sigmoid) {
        const T s = T(1) / (T(1) + std::exp(-x[i]));
        y[i] = s;
        cap.smooth_deriv[i] = s * (T(1) - s);
      } else {
        const T t = std::tanh(x[i]);
        y[i] = t;
        cap.smooth_deriv[i] = T(1) - t * t;
      }
    }
    return y;
  }

  Tensor<T> fmode(const Tensor<T>& v, const LayerCapture<T>& cap) const override {
    this->check_input(v, "fmode");
    if (cap.smooth_deriv.numel() != v.numel())
      throw std::logic_error(std::string(kind()) + ": mode pass without a capture");
    Tensor<T> y = v;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= cap.smooth_deriv[i];
    return y;
  }
  Tensor<T> bmode(const Tensor<T>& u, const LayerCapture<T>& cap) const override {
    return fmode(u, cap);
  }
  // Frozen forwards keep the true nonlinearity: there is no region to pin.
  Tensor<T> forward_frozen(const Tensor<T>& x, const LayerCapture<T>&) const override {
    LayerCapture<T> scratch;
    return const_cast<SmoothActivation*>(this)->forward(x, scratch, BnMode::inference);
  }

 private:
  SmoothKind fn_;
};

}  // namespace specreg

#endif  // SPECREG_LAYERS_HPP
