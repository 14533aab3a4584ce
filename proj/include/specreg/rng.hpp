#ifndef SPECREG_RNG_HPP
#define SPECREG_RNG_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "specreg/tensor.hpp"

namespace specreg {

// Counter-based generator (splitmix64). Chosen over <random> engines so the
// stream is bitwise reproducible across standard library implementations:
// identical seed + call sequence gives identical output, always.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; never zero, safe under log().
  double next_uniform_open() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

  // Standard normal via Box-Muller. The spare is cached, so draws come in
  // deterministic pairs.
  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform_open();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Independent stream for parallel consumers; offset picks the substream.
  SeededRng split(std::uint64_t offset) const {
    SeededRng child(state_ ^ (0xD2B74407B1CE6E93ull + offset * 0x9E3779B97F4A7C15ull));
    child.next_u64();
    return child;
  }

  // Fisher-Yates index for shuffles: uniform in [0, n) without modulo bias
  // beyond 2^-64 (acceptable here; n is tiny against 2^64).
  std::size_t next_index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <typename T>
void fill_gaussian(Tensor<T>& t, SeededRng& rng) {
  for (T& v : t.vec()) v = static_cast<T>(rng.next_normal());
}

template <typename T>
void fill_uniform(Tensor<T>& t, SeededRng& rng, double lo, double hi) {
  for (T& v : t.vec()) v = static_cast<T>(rng.next_uniform(lo, hi));
}

// rows x dim matrix whose rows are i.i.d. uniform on the unit sphere
// (Gaussian draw, then row normalization).
template <typename T>
Tensor<T> sample_unit_rows(SeededRng& rng, std::size_t rows, std::size_t dim) {
  if (dim == 0) throw std::invalid_argument("sample_unit_rows: dim must be >= 1");
  if (rows == 0) throw std::invalid_argument("sample_unit_rows: rows must be >= 1");
  Tensor<T> m(Shape{rows, dim});
  fill_gaussian(m, rng);
  normalize_rows(m);
  return m;
}

}  // namespace specreg

#endif  // SPECREG_RNG_HPP
