#ifndef SPECREG_DATA_HPP
#define SPECREG_DATA_HPP

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "specreg/errors.hpp"
#include "specreg/rng.hpp"
#include "specreg/tensor.hpp"

namespace specreg {

template <typename T>
struct NormStats {
  Tensor<T> mean, stdev;  // per channel
  bool empty() const { return mean.numel() == 0; }
};

// Image classification dataset. Images are (N, C, H, W); raw pixel values
// live in [0,1] until normalize() is applied.
template <typename T>
struct Dataset {
  Tensor<T> images;
  std::vector<std::int32_t> labels;
  std::size_t n_classes = 0;
  bool normalized = false;
  std::optional<NormStats<T>> stats;  // set by normalize()

  std::size_t size() const { return labels.size(); }
  Shape image_shape() const { return sample_shape(images.shape()); }
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

inline bool is_gzip(const std::vector<unsigned char>& b) {
  return b.size() >= 2 && b[0] == 0x1f && b[1] == 0x8b;
}

inline std::vector<unsigned char> gunzip(const std::vector<unsigned char>& in,
                                         const std::string& path) {
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
    throw std::runtime_error("zlib init failed for " + path);
  std::vector<unsigned char> out;
  out.resize(std::max<std::size_t>(in.size() * 4, 1 << 16));
  zs.next_in = const_cast<unsigned char*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::size_t written = 0;
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    if (written == out.size()) out.resize(out.size() * 2);
    zs.next_out = out.data() + written;
    zs.avail_out = static_cast<uInt>(out.size() - written);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw ParseError("gzip decompression failed for " + path, zs.total_in);
    }
    written = out.size() - zs.avail_out;
  }
  inflateEnd(&zs);
  out.resize(written);
  return out;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                               const std::string& path) {
  if (off + 4 > b.size()) throw ParseError("truncated IDX file " + path, off);
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace detail

// IDX image/label pair in the MNIST-family layout: big-endian magic numbers
// 0x00000803 (images) and 0x00000801 (labels), big-endian dimension fields,
// one byte per pixel/label. Transparently inflates gzipped files. Pixels are
// scaled to [0,1] by /255.
template <typename T>
Dataset<T> load_idx(const std::string& images_path, const std::string& labels_path) {
  auto ibytes = detail::read_file_bytes(images_path);
  if (detail::is_gzip(ibytes)) ibytes = detail::gunzip(ibytes, images_path);
  auto lbytes = detail::read_file_bytes(labels_path);
  if (detail::is_gzip(lbytes)) lbytes = detail::gunzip(lbytes, labels_path);

  if (detail::read_be32(ibytes, 0, images_path) != 0x00000803u)
    throw ParseError("bad IDX image magic in " + images_path, 0);
  if (detail::read_be32(lbytes, 0, labels_path) != 0x00000801u)
    throw ParseError("bad IDX label magic in " + labels_path, 0);

  const std::uint32_t n_images = detail::read_be32(ibytes, 4, images_path);
  const std::uint32_t rows = detail::read_be32(ibytes, 8, images_path);
  const std::uint32_t cols = detail::read_be32(ibytes, 12, images_path);
  const std::uint32_t n_labels = detail::read_be32(lbytes, 4, labels_path);
  if (n_images != n_labels)
    throw ParseError("image count " + std::to_string(n_images) + " != label count " +
                         std::to_string(n_labels) + " (" + labels_path + ")",
                     4);

  const std::size_t pixels = std::size_t(n_images) * rows * cols;
  if (16 + pixels > ibytes.size())
    throw ParseError("truncated IDX image data in " + images_path, ibytes.size());
  if (8 + n_labels > lbytes.size())
    throw ParseError("truncated IDX label data in " + labels_path, lbytes.size());

  Dataset<T> ds;
  ds.images = Tensor<T>(Shape{n_images, 1, rows, cols});
  for (std::size_t i = 0; i < pixels; ++i)
    ds.images[i] = static_cast<T>(ibytes[16 + i]) / T(255);
  ds.labels.resize(n_labels);
  std::int32_t max_label = 0;
  for (std::size_t i = 0; i < n_labels; ++i) {
    ds.labels[i] = lbytes[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.n_classes = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

// Writes the dataset back out in IDX layout (pixels quantized to bytes).
template <typename T>
void write_idx(const Dataset<T>& ds, const std::string& images_path,
               const std::string& labels_path) {
  const Shape s = ds.images.shape();
  if (s.size() != 4 || s[1] != 1)
    throw ShapeError("write_idx: expected (N,1,H,W) images, got " + shape_str(s));
  auto put_be32 = [](std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("cannot write " + images_path);
  put_be32(img, 0x00000803u);
  put_be32(img, static_cast<std::uint32_t>(s[0]));
  put_be32(img, static_cast<std::uint32_t>(s[2]));
  put_be32(img, static_cast<std::uint32_t>(s[3]));
  for (std::size_t i = 0; i < ds.images.numel(); ++i) {
    const double v = std::clamp(static_cast<double>(ds.images[i]), 0.0, 1.0);
    const unsigned char byte = static_cast<unsigned char>(std::lround(v * 255.0));
    img.write(reinterpret_cast<const char*>(&byte), 1);
  }
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("cannot write " + labels_path);
  put_be32(lab, 0x00000801u);
  put_be32(lab, static_cast<std::uint32_t>(ds.labels.size()));
  for (std::int32_t l : ds.labels) {
    const unsigned char byte = static_cast<unsigned char>(l);
    lab.write(reinterpret_cast<const char*>(&byte), 1);
  }
}

template <typename T>
NormStats<T> compute_norm_stats(const Dataset<T>& ds) {
  const Shape s = ds.images.shape();
  const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
  NormStats<T> st{Tensor<T>(Shape{c}), Tensor<T>(Shape{c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = ds.images.data() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) sum += p[k];
    }
    const double mean = sum / static_cast<double>(n * plane);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = ds.images.data() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double d = p[k] - mean;
        var += d * d;
      }
    }
    var /= static_cast<double>(n * plane);
    if (var <= 0)
      throw DegenerateChannelError("channel " + std::to_string(ch) +
                                   " has zero variance; cannot normalize");
    st.mean[ch] = static_cast<T>(mean);
    st.stdev[ch] = static_cast<T>(std::sqrt(var));
  }
  return st;
}

// Per-channel (x - mean)/std. Stats default to the dataset's own; pass the
// training split's stats when normalizing a validation split.
template <typename T>
Dataset<T> normalize(const Dataset<T>& ds, std::optional<NormStats<T>> stats = std::nullopt) {
  NormStats<T> st = stats ? *stats : compute_norm_stats(ds);
  Dataset<T> out = ds;
  const Shape s = ds.images.shape();
  const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = out.images.data() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - st.mean[ch]) / st.stdev[ch];
    }
  out.normalized = true;
  out.stats = st;
  return out;
}

template <typename T>
Dataset<T> denormalize(const Dataset<T>& ds) {
  if (!ds.normalized || !ds.stats) return ds;
  Dataset<T> out = ds;
  const Shape s = ds.images.shape();
  const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = out.images.data() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k)
        p[k] = p[k] * ds.stats->stdev[ch] + ds.stats->mean[ch];
    }
  out.normalized = false;
  out.stats = std::nullopt;
  return out;
}

// Gaussian clusters at fixed (per n_classes/dim) centers inside [0,1]^dim,
// clipped to stay a valid raw dataset. `separation` scales how far the
// centers spread from 0.5; the sample noise has a fixed 0.05 deviation.
// Deterministic: centers depend only on (n_classes, dim), samples only on
// the passed rng.
template <typename T>
Dataset<T> synthetic_blobs(SeededRng& rng, std::size_t n_per_class, std::size_t n_classes,
                           std::size_t dim, double separation) {
  if (separation < 0) throw std::invalid_argument("synthetic_blobs: separation must be >= 0");
  if (n_per_class == 0 || n_classes == 0 || dim == 0)
    throw std::invalid_argument("synthetic_blobs: counts and dim must be >= 1");
  SeededRng center_rng(0xB10B5ull + n_classes * 131 + dim);
  std::vector<std::vector<double>> centers(n_classes, std::vector<double>(dim));
  for (auto& c : centers)
    for (double& v : c) v = std::clamp(0.5 + 0.03 * separation * center_rng.next_normal(), 0.0, 1.0);

  const std::size_t n = n_per_class * n_classes;
  Dataset<T> ds;
  ds.images = Tensor<T>(Shape{n, 1, 1, dim});
  ds.labels.resize(n);
  ds.n_classes = n_classes;
  std::size_t i = 0;
  for (std::size_t k = 0; k < n_classes; ++k)
    for (std::size_t j = 0; j < n_per_class; ++j, ++i) {
      ds.labels[i] = static_cast<std::int32_t>(k);
      T* p = ds.images.data() + i * dim;
      for (std::size_t d = 0; d < dim; ++d)
        p[d] = static_cast<T>(std::clamp(centers[k][d] + 0.05 * rng.next_normal(), 0.0, 1.0));
    }
  return ds;
}

// Stacks the selected samples into a batch tensor.
template <typename T>
Tensor<T> gather_images(const Dataset<T>& ds, const std::vector<std::size_t>& idx) {
  const Shape per = ds.image_shape();
  const std::size_t stride = shape_numel(per);
  Tensor<T> out(with_batch(idx.size(), per));
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(ds.images.data() + idx[i] * stride, ds.images.data() + (idx[i] + 1) * stride,
              out.data() + i * stride);
  return out;
}

template <typename T>
Tensor<T> gather_onehot(const Dataset<T>& ds, const std::vector<std::size_t>& idx) {
  Tensor<T> out(Shape{idx.size(), ds.n_classes});
  for (std::size_t i = 0; i < idx.size(); ++i) out(i, ds.labels[idx[i]]) = T(1);
  return out;
}

template <typename T>
std::pair<Dataset<T>, Dataset<T>> split_dataset(const Dataset<T>& ds, std::size_t n_first) {
  if (n_first > ds.size()) throw std::invalid_argument("split_dataset: split beyond dataset");
  std::vector<std::size_t> head(n_first), tail(ds.size() - n_first);
  for (std::size_t i = 0; i < n_first; ++i) head[i] = i;
  for (std::size_t i = 0; i < tail.size(); ++i) tail[i] = n_first + i;
  auto take = [&](const std::vector<std::size_t>& idx) {
    Dataset<T> out;
    out.images = gather_images(ds, idx);
    out.labels.reserve(idx.size());
    for (std::size_t i : idx) out.labels.push_back(ds.labels[i]);
    out.n_classes = ds.n_classes;
    out.normalized = ds.normalized;
    out.stats = ds.stats;
    return out;
  };
  return {take(head), take(tail)};
}

}  // namespace specreg

#endif  // SPECREG_DATA_HPP
