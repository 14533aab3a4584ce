#ifndef SPECREG_SPECTRAL_ORACLE_HPP
#define SPECREG_SPECTRAL_ORACLE_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "specreg/errors.hpp"
#include "specreg/rng.hpp"
#include "specreg/tensor.hpp"

namespace specreg {

template <typename T>
struct SvdResult {
  T sigma = 0;        // largest singular value
  Tensor<T> u;        // left singular vector, unit (zero for sigma == 0)
  Tensor<T> v;        // right singular vector, unit
  std::size_t iterations = 0;
};

namespace detail {

// y = A x for a dense row-major square matrix.
inline void symvec(const std::vector<double>& a, std::size_t n, const std::vector<double>& x,
                   std::vector<double>& y) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = a.data() + i * n;
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += row[j] * x[j];
    y[i] = s;
  }
}

inline double vec_norm(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

struct PowerRun {
  double sigma = 0;
  std::vector<double> vec;
  std::size_t iterations = 0;
  bool converged = false;
};

inline PowerRun power_iterate(const std::vector<double>& a, std::size_t n,
                              std::vector<double> x, double tol, std::size_t max_iters) {
  PowerRun run;
  double nx = vec_norm(x);
  for (double& v : x) v /= nx;
  std::vector<double> y(n, 0.0);
  double sigma_prev = -1.0;
  for (std::size_t it = 1; it <= max_iters; ++it) {
    symvec(a, n, x, y);
    double lambda = 0;
    for (std::size_t j = 0; j < n; ++j) lambda += x[j] * y[j];
    const double sigma = std::sqrt(std::max(lambda, 0.0));
    const double ny = vec_norm(y);
    run.iterations = it;
    run.sigma = sigma;
    if (ny == 0.0) {  // x in the null space; for A = m^T m this means sigma 0
      run.sigma = 0.0;
      run.vec = x;
      run.converged = true;
      return run;
    }
    if (it > 1 && std::abs(sigma - sigma_prev) < tol * std::max(sigma, 1e-300)) {
      run.vec = x;
      run.converged = true;
      return run;
    }
    sigma_prev = sigma;
    for (std::size_t j = 0; j < n; ++j) x[j] = y[j] / ny;
  }
  run.vec = x;
  return run;
}

}  // namespace detail

// Largest singular value of a rank-2 tensor by dense power iteration on the
// Gram matrix m^T m. Two starts are always run: the deterministic all-ones
// vector and one seeded random vector, keeping the larger converged estimate.
// A single conditional restart would not do: a start orthogonal to the top
// eigenvector converges to a subdominant eigenpair with zero residual, which
// no stall test can distinguish from the true answer. Degenerate top spectra
// stabilize in sigma while the vectors keep rotating; that counts as
// converged.
//
// All internal arithmetic is double regardless of T.
template <typename T>
SvdResult<T> max_singular_value_dense(const Tensor<T>& m, T tol,
                                      std::size_t max_iters = 10000) {
  if (m.ndim() != 2) throw ShapeError("max_singular_value_dense: expected rank-2, got " +
                                      shape_str(m.shape()));
  if (!(tol > T(0))) throw std::invalid_argument("max_singular_value_dense: tol must be > 0");
  require_finite(m, "max_singular_value_dense");

  const std::size_t rows = m.extent(0);
  const std::size_t cols = m.extent(1);

  // Gram matrix A = m^T m (cols x cols), formed once.
  std::vector<double> a(cols * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* mr = m.data() + r * cols;
    for (std::size_t i = 0; i < cols; ++i) {
      const double mi = static_cast<double>(mr[i]);
      if (mi == 0.0) continue;
      double* arow = a.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) arow[j] += mi * static_cast<double>(mr[j]);
    }
  }

  const double dtol = static_cast<double>(tol);
  detail::PowerRun best =
      detail::power_iterate(a, cols, std::vector<double>(cols, 1.0), dtol, max_iters);

  SeededRng restart_rng(0x5EED5EEDull ^ (rows * 1315423911ull + cols));
  std::vector<double> x0(cols);
  for (double& v : x0) v = restart_rng.next_normal();
  detail::PowerRun second = detail::power_iterate(a, cols, std::move(x0), dtol, max_iters);
  if ((second.converged && !best.converged) ||
      (second.converged == best.converged && second.sigma > best.sigma))
    best = second;
  if (!best.converged)
    throw ConvergenceError("max_singular_value_dense: no convergence after " +
                               std::to_string(max_iters) + " iterations",
                           best.sigma);

  SvdResult<T> out;
  out.iterations = best.iterations;
  out.v = Tensor<T>(Shape{cols});
  for (std::size_t j = 0; j < cols; ++j) out.v[j] = static_cast<T>(best.vec[j]);

  // sigma = ||m v||, u = m v / sigma: makes m v = sigma u exact.
  std::vector<double> mv(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* mr = m.data() + r * cols;
    double s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += static_cast<double>(mr[j]) * best.vec[j];
    mv[r] = s;
  }
  const double sigma = detail::vec_norm(mv);
  out.sigma = static_cast<T>(sigma);
  out.u = Tensor<T>(Shape{rows});
  if (sigma > 0)
    for (std::size_t r = 0; r < rows; ++r) out.u[r] = static_cast<T>(mv[r] / sigma);
  return out;
}

}  // namespace specreg

#endif  // SPECREG_SPECTRAL_ORACLE_HPP
