#ifndef SPECREG_CHECKPOINT_HPP
#define SPECREG_CHECKPOINT_HPP

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include "specreg/errors.hpp"
#include "specreg/model.hpp"

namespace specreg {

// Versioned binary checkpoint: layer list, shapes and parameters in row-major
// order, with explicit endianness and precision tags. Raw parameter bytes are
// written untouched, so a save/load cycle is bit-exact in either precision.
// Readers reject checkpoints from a foreign byte order or precision.

namespace ckpt_detail {

constexpr char kMagic[8] = {'S', 'P', 'R', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kEndianTag = 0x01020304u;

enum LayerTag : std::uint32_t {
  kLinear = 1,
  kConv2d = 2,
  kMaxPool2d = 3,
  kRelu = 4,
  kBatchNorm2d = 5,
  kFlatten = 6,
  kSigmoid = 7,
  kTanh = 8,
};

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  }
  void bytes(const void* p, std::size_t n) { out.write(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  template <typename T>
  void tensor(const Tensor<T>& t) {
    u32(static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) u64(d);
    bytes(t.data(), t.numel() * sizeof(T));
  }
  void shape(const Shape& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    for (std::size_t d : s) u64(d);
  }
};

struct Reader {
  std::ifstream in;
  std::string path;
  explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw std::runtime_error("checkpoint: cannot open " + p);
  }
  std::size_t offset() { return static_cast<std::size_t>(in.tellg()); }
  void bytes(void* p, std::size_t n) {
    const std::size_t at = offset();
    in.read(static_cast<char*>(p), n);
    if (!in) throw ParseError("truncated checkpoint " + path, at);
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  template <typename T>
  Tensor<T> tensor() {
    Tensor<T> t(shape());
    bytes(t.data(), t.numel() * sizeof(T));
    return t;
  }
  Shape shape() {
    const std::uint32_t nd = u32();
    Shape s(nd);
    for (auto& d : s) d = u64();
    return s;
  }
};

template <typename T>
void expect_shape(const Tensor<T>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw ParseError(std::string("checkpoint: ") + what + " has shape " + shape_str(t.shape()) +
                         ", expected " + shape_str(expected),
                     0);
}

}  // namespace ckpt_detail

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  using namespace ckpt_detail;
  const std::string tmp = path + ".tmp";
  {
    Writer w(tmp);
    w.bytes(kMagic, 8);
    w.u32(kVersion);
    w.u32(kEndianTag);
    w.u32(sizeof(T) == 4 ? 32 : 64);
    w.str(model.tag);
    w.shape(model.net.input_shape());
    w.u32(static_cast<std::uint32_t>(model.net.layer_count()));
    for (std::size_t l = 0; l < model.net.layer_count(); ++l) {
      const Layer<T>& layer = model.net.layer(l);
      const std::string kind = layer.kind();
      if (kind == "Linear") {
        const auto& lin = static_cast<const Linear<T>&>(layer);
        w.u32(kLinear);
        w.u64(lin.weight.extent(1));
        w.u64(lin.weight.extent(0));
        w.tensor(lin.weight);
        w.tensor(lin.bias);
      } else if (kind == "Conv2d") {
        const auto& c = static_cast<const Conv2d<T>&>(layer);
        w.u32(kConv2d);
        w.u64(c.weight.extent(2));  // kernel
        w.u64(c.weight.extent(1));  // c_in
        w.u64(c.weight.extent(0));  // c_out
        w.u64(c.stride());
        w.u64(c.padding());
        w.tensor(c.weight);
        w.tensor(c.bias);
      } else if (kind == "MaxPool2d") {
        w.u32(kMaxPool2d);
        w.u64(static_cast<const MaxPool2d<T>&>(layer).window());
      } else if (kind == "ReLU") {
        w.u32(kRelu);
      } else if (kind == "BatchNorm2d") {
        const auto& bn = static_cast<const BatchNorm2d<T>&>(layer);
        w.u32(kBatchNorm2d);
        w.u64(bn.gamma.numel());
        w.f64(static_cast<double>(bn.epsilon()));
        w.tensor(bn.gamma);
        w.tensor(bn.beta);
        w.tensor(bn.running_mean);
        w.tensor(bn.running_var);
      } else if (kind == "Flatten") {
        w.u32(kFlatten);
      } else if (kind == "Sigmoid") {
        w.u32(kSigmoid);
      } else if (kind == "Tanh") {
        w.u32(kTanh);
      } else {
        throw std::logic_error("checkpoint: unknown layer kind " + kind);
      }
    }
    const auto& spans = model.net.residual_spans();
    w.u32(static_cast<std::uint32_t>(spans.size()));
    for (const auto& s : spans) {
      w.u64(s.first);
      w.u64(s.last);
    }
    w.u32(model.stats.empty() ? 0 : 1);
    if (!model.stats.empty()) {
      w.tensor(model.stats.mean);
      w.tensor(model.stats.stdev);
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("checkpoint: rename failed for " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  Reader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw ParseError("bad checkpoint magic", 0);
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 8);
  if (r.u32() != kEndianTag) throw ParseError("checkpoint byte order differs from this host", 12);
  const std::uint32_t prec = r.u32();
  if (prec != (sizeof(T) == 4 ? 32u : 64u))
    throw ParseError("checkpoint precision f" + std::to_string(prec) + " does not match", 16);

  Model<T> model;
  model.tag = r.str();
  const Shape input_shape = r.shape();
  const std::uint32_t n_layers = r.u32();
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    switch (r.u32()) {
      case kLinear: {
        const std::size_t in = r.u64(), out = r.u64();
        Linear<T> lin(in, out);
        lin.weight = r.tensor<T>();
        lin.bias = r.tensor<T>();
        expect_shape(lin.weight, Shape{out, in}, "linear weight");
        expect_shape(lin.bias, Shape{out}, "linear bias");
        model.net.add(std::move(lin));
        break;
      }
      case kConv2d: {
        const std::size_t k = r.u64(), cin = r.u64(), cout = r.u64();
        const std::size_t stride = r.u64(), pad = r.u64();
        Conv2d<T> conv(k, cin, cout, stride, pad);
        conv.weight = r.tensor<T>();
        conv.bias = r.tensor<T>();
        expect_shape(conv.weight, Shape{cout, cin, k, k}, "conv weight");
        expect_shape(conv.bias, Shape{cout}, "conv bias");
        model.net.add(std::move(conv));
        break;
      }
      case kMaxPool2d:
        model.net.add(MaxPool2d<T>(r.u64()));
        break;
      case kRelu:
        model.net.add(Relu<T>());
        break;
      case kBatchNorm2d: {
        const std::size_t c = r.u64();
        const T eps = static_cast<T>(r.f64());
        BatchNorm2d<T> bn(c, eps);
        bn.gamma = r.tensor<T>();
        bn.beta = r.tensor<T>();
        bn.running_mean = r.tensor<T>();
        bn.running_var = r.tensor<T>();
        expect_shape(bn.gamma, Shape{c}, "batchnorm gamma");
        expect_shape(bn.beta, Shape{c}, "batchnorm beta");
        expect_shape(bn.running_mean, Shape{c}, "batchnorm running mean");
        expect_shape(bn.running_var, Shape{c}, "batchnorm running var");
        model.net.add(std::move(bn));
        break;
      }
      case kFlatten:
        model.net.add(Flatten<T>());
        break;
      case kSigmoid:
        model.net.add(SmoothActivation<T>(SmoothKind::sigmoid));
        break;
      case kTanh:
        model.net.add(SmoothActivation<T>(SmoothKind::tanh));
        break;
      default:
        throw ParseError("unknown layer tag in checkpoint", r.offset() - 4);
    }
  }
  const std::uint32_t n_spans = r.u32();
  for (std::uint32_t i = 0; i < n_spans; ++i) {
    const std::size_t first = r.u64(), last = r.u64();
    model.net.add_residual_span(first, last);
  }
  if (r.u32() == 1) {
    model.stats.mean = r.tensor<T>();
    model.stats.stdev = r.tensor<T>();
  }
  model.net.bind(input_shape);
  return model;
}

}  // namespace specreg

#endif  // SPECREG_CHECKPOINT_HPP
