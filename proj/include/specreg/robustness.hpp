#ifndef SPECREG_ROBUSTNESS_HPP
#define SPECREG_ROBUSTNESS_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "specreg/model.hpp"
#include "specreg/trainer.hpp"

namespace specreg {

enum class AttackKind { pgd, tpgd };

inline const char* attack_kind_name(AttackKind k) {
  return k == AttackKind::pgd ? "pgd" : "tpgd";
}

struct AttackConfig {
  double delta = 32.0 / 255.0;  // infinity-ball radius, raw pixel units
  double eta = 2.0 / 255.0;     // ascent step size
  std::size_t iters = 10;
  AttackKind kind = AttackKind::pgd;
  bool rand_start = false;  // TPGD needs one; PGD defaults to none
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(eta > 0) || eta > delta)
      throw std::invalid_argument("attack: require 0 < eta <= delta");
    if (iters < 1) throw std::invalid_argument("attack: iters must be >= 1");
  }
};

struct BoundarySearchConfig {
  std::size_t samples_per_sphere = 256;
  double radius_lo = 0.0;
  double radius_hi = 10.0;  // normalized units
  std::size_t bisection_iters = 25;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(radius_lo < radius_hi))
      throw std::invalid_argument("boundary: radius_lo must be < radius_hi");
    if (samples_per_sphere < 1)
      throw std::invalid_argument("boundary: samples_per_sphere must be >= 1");
    if (bisection_iters < 1)
      throw std::invalid_argument("boundary: bisection_iters must be >= 1");
  }
};

template <typename T>
struct BoundaryResult {
  T radius = 0;
  bool saturated = false;  // no class change found inside the bracket
};

namespace detail {

// Projects t onto [x - delta, x + delta] and [0, 1] so that the containment
// checks |t - x| <= delta and 0 <= t <= 1 hold exactly in type T arithmetic.
// Plain clamping against fl(x +- delta) can land one ulp outside the ball.
template <typename T>
T exact_ball_project(T x, T t, T delta) {
  const T lo = std::max(x - delta, T(0));
  const T hi = std::min(x + delta, T(1));
  t = std::min(std::max(t, lo), hi);
  while (t - x > delta) t = std::nextafter(t, -std::numeric_limits<T>::infinity());
  while (x - t > delta) t = std::nextafter(t, std::numeric_limits<T>::infinity());
  if (t < T(0)) t = T(0);
  if (t > T(1)) t = T(1);
  return t;
}

template <typename T>
void sign_inplace(Tensor<T>& g) {
  for (T& v : g.vec()) v = (v > T(0)) ? T(1) : ((v < T(0)) ? T(-1) : T(0));
}

template <typename T>
std::size_t argmax_row(const Tensor<T>& logits, std::size_t row) {
  const std::size_t n = logits.numel() / logits.extent(0);
  const T* r = logits.data() + row * n;
  std::size_t arg = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (r[j] > r[arg]) arg = j;
  return arg;
}

}  // namespace detail

// Accuracy drop under clipped per-pixel Gaussian noise in raw pixel space:
// x~ = clip01(x + eps), eps ~ N(0, sigma^2), then the model's own
// preprocessing. Returns baseline accuracy minus perturbed accuracy.
template <typename T>
T gaussian_perturb_eval(const Model<T>& model, const Dataset<T>& ds, double sigma,
                        SeededRng& rng) {
  if (ds.normalized)
    throw std::invalid_argument("gaussian_perturb_eval: expects a raw dataset");
  const T baseline = evaluate(model, ds).accuracy;
  Dataset<T> noisy = ds;
  if (sigma != 0.0)
    for (T& v : noisy.images.vec())
      v = static_cast<T>(std::clamp(static_cast<double>(v) + sigma * rng.next_normal(), 0.0, 1.0));
  const T perturbed = evaluate(model, noisy).accuracy;
  return baseline - perturbed;
}

// Projected gradient ascent on the task loss: per round,
// x~ <- Proj_ball[x~ + eta sign(dl/dx~)], gradients taken through the model
// preprocessing (the 1/std chain factor is folded in before the sign). The
// ball projection runs per round; the [0,1] clip lands after the ascent.
// sign(0) = 0, so a flat loss leaves the input untouched.
template <typename T>
Tensor<T> pgd_attack(Model<T>& model, const Tensor<T>& batch_raw, const Tensor<T>& onehot,
                     const AttackConfig& cfg) {
  cfg.validate();
  const T delta = static_cast<T>(cfg.delta);
  Tensor<T> x_adv = batch_raw;
  if (cfg.rand_start) {
    SeededRng rng(cfg.seed ^ 0x9D6Aull);
    for (std::size_t i = 0; i < x_adv.numel(); ++i)
      x_adv[i] += static_cast<T>(rng.next_uniform(-cfg.delta / 2, cfg.delta / 2));
  }
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    auto fwd = model.net.forward_capture(model.preprocess(x_adv), BnMode::inference);
    auto lg = softmax_cross_entropy(fwd.logits, onehot);
    auto bp = model.net.backprop(fwd, lg.logits_grad);
    Tensor<T> g = model.grad_to_raw(bp.input_grad);
    detail::sign_inplace(g);
    for (std::size_t i = 0; i < x_adv.numel(); ++i) {
      T t = x_adv[i] + static_cast<T>(cfg.eta) * g[i];
      // per-coordinate clamp to [x - delta, x + delta]
      t = std::min(std::max(t, batch_raw[i] - delta), batch_raw[i] + delta);
      x_adv[i] = t;
    }
  }
  for (std::size_t i = 0; i < x_adv.numel(); ++i)
    x_adv[i] = detail::exact_ball_project(batch_raw[i], x_adv[i], delta);
  return x_adv;
}

// KL variant: ascends KL(softmax f(x) || softmax f(x~)) with the clean
// distribution held fixed. The gradient vanishes at x~ = x, so the attack
// starts from a uniform perturbation inside the ball unless rand_start was
// explicitly disabled.
template <typename T>
Tensor<T> tpgd_attack(Model<T>& model, const Tensor<T>& batch_raw, const AttackConfig& cfg) {
  cfg.validate();
  const T delta = static_cast<T>(cfg.delta);
  const std::size_t batch = batch_raw.extent(0);

  Tensor<T> p = softmax_rows(model.net.forward_inference(model.preprocess(batch_raw)));
  Tensor<T> x_adv = batch_raw;
  if (cfg.rand_start) {
    SeededRng rng(cfg.seed ^ 0x7D6Bull);
    for (std::size_t i = 0; i < x_adv.numel(); ++i)
      x_adv[i] += static_cast<T>(rng.next_uniform(-cfg.delta / 2, cfg.delta / 2));
  }
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    auto fwd = model.net.forward_capture(model.preprocess(x_adv), BnMode::inference);
    Tensor<T> q = softmax_rows(fwd.logits);
    Tensor<T> kl_grad = q;  // d KL / d logits(x~) = q - p
    kl_grad -= p;
    kl_grad *= T(1) / static_cast<T>(batch);
    auto bp = model.net.backprop(fwd, kl_grad);
    Tensor<T> g = model.grad_to_raw(bp.input_grad);
    detail::sign_inplace(g);
    for (std::size_t i = 0; i < x_adv.numel(); ++i) {
      T t = x_adv[i] + static_cast<T>(cfg.eta) * g[i];
      t = std::min(std::max(t, batch_raw[i] - delta), batch_raw[i] + delta);
      x_adv[i] = t;
    }
  }
  for (std::size_t i = 0; i < x_adv.numel(); ++i)
    x_adv[i] = detail::exact_ball_project(batch_raw[i], x_adv[i], delta);
  return x_adv;
}

// KL(p || q) per row, summed; used by tests and the TPGD objective.
template <typename T>
T kl_divergence_rows(const Tensor<T>& p, const Tensor<T>& q) {
  T total = 0;
  for (std::size_t i = 0; i < p.numel(); ++i)
    if (p[i] > T(0)) total += p[i] * std::log(p[i] / std::max(q[i], T(1e-30)));
  return total;
}

// Attack dispatcher; labels are needed for PGD only.
template <typename T>
Tensor<T> run_attack(Model<T>& model, const Tensor<T>& batch_raw, const Tensor<T>& onehot,
                     const AttackConfig& cfg) {
  if (cfg.kind == AttackKind::pgd) return pgd_attack(model, batch_raw, onehot, cfg);
  AttackConfig tcfg = cfg;
  tcfg.rand_start = true;
  return tpgd_attack(model, batch_raw, tcfg);
}

// Distance to the nearest decision boundary around one raw sample, measured
// in normalized units: points are drawn uniformly on concentric spheres
// (one fixed direction set per call, so larger sample counts refine nested
// sets) and bisection finds the smallest radius whose sphere contains a
// point of different predicted class. Saturates at radius_hi when the
// bracket shows no change.
template <typename T>
BoundaryResult<T> boundary_distance(const Model<T>& model, const Tensor<T>& sample_raw,
                                    const BoundarySearchConfig& cfg) {
  cfg.validate();
  if (sample_raw.extent(0) != 1)
    throw std::invalid_argument("boundary_distance: expected a single sample");
  Tensor<T> xn = model.preprocess(sample_raw);
  const std::size_t n_in = xn.numel();

  Tensor<T> base_logits = model.net.forward_inference(xn);
  const std::size_t base_class = detail::argmax_row(base_logits, 0);

  SeededRng rng(cfg.seed ^ 0xB0DAull);
  Tensor<T> dirs = sample_unit_rows<T>(rng, cfg.samples_per_sphere, n_in);

  auto sphere_changed = [&](T radius) {
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < cfg.samples_per_sphere; start += chunk) {
      const std::size_t stop = std::min(cfg.samples_per_sphere, start + chunk);
      Tensor<T> pts(Shape{stop - start, n_in});
      for (std::size_t i = start; i < stop; ++i) {
        T* row = pts.data() + (i - start) * n_in;
        const T* d = dirs.data() + i * n_in;
        for (std::size_t j = 0; j < n_in; ++j) row[j] = xn[j] + radius * d[j];
      }
      Tensor<T> logits =
          model.net.forward_inference(pts.reshaped(with_batch(stop - start, sample_shape(xn.shape()))));
      for (std::size_t r = 0; r < stop - start; ++r)
        if (detail::argmax_row(logits, r) != base_class) return true;
    }
    return false;
  };

  BoundaryResult<T> out;
  if (!sphere_changed(static_cast<T>(cfg.radius_hi))) {
    out.radius = static_cast<T>(cfg.radius_hi);
    out.saturated = true;
    return out;
  }
  T lo = static_cast<T>(cfg.radius_lo), hi = static_cast<T>(cfg.radius_hi);
  for (std::size_t it = 0; it < cfg.bisection_iters; ++it) {
    const T mid = (lo + hi) / 2;
    if (sphere_changed(mid))
      hi = mid;
    else
      lo = mid;
  }
  out.radius = (lo + hi) / 2;
  return out;
}

}  // namespace specreg

#endif  // SPECREG_ROBUSTNESS_HPP
