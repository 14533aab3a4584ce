#ifndef SPECREG_TRAINER_HPP
#define SPECREG_TRAINER_HPP

#include <chrono>
#include <cmath>
#include <numeric>
#include <vector>

#include "specreg/data.hpp"
#include "specreg/errors.hpp"
#include "specreg/model.hpp"
#include "specreg/regularizers.hpp"

namespace specreg {

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.8;
  RegularizerConfig regularizer;
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("train: learning_rate must be > 0");
    if (momentum < 0 || momentum >= 1) throw std::invalid_argument("train: momentum in [0,1)");
    regularizer.validate();
  }
};

template <typename T>
struct EpochMetrics {
  std::size_t epoch = 0;
  T train_loss = 0;
  T val_loss = 0;
  T val_accuracy = 0;
  T mean_penalty = 0;
  double ms_per_batch = 0;  // wall clock; excluded from determinism comparisons
};

template <typename T>
struct RunMetrics {
  std::vector<EpochMetrics<T>> epochs;
};

template <typename T>
struct LossGrad {
  T loss = 0;
  Tensor<T> logits_grad;
};

// Numerically stable softmax cross-entropy against one-hot labels. Loss is
// the batch mean; the gradient is (softmax - onehot)/B.
template <typename T>
LossGrad<T> softmax_cross_entropy(const Tensor<T>& logits, const Tensor<T>& onehot) {
  if (logits.ndim() != 2 || !logits.same_shape(onehot))
    throw ShapeError("softmax_cross_entropy: logits " + shape_str(logits.shape()) +
                     " vs labels " + shape_str(onehot.shape()));
  const std::size_t batch = logits.extent(0), n = logits.extent(1);
  LossGrad<T> out;
  out.logits_grad = Tensor<T>(logits.shape());
  double total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* lr = logits.data() + b * n;
    const T* yr = onehot.data() + b * n;
    std::size_t label = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (yr[j] == T(1) && label == n)
        label = j;
      else if (yr[j] != T(0))
        throw InvalidLabelError("softmax_cross_entropy: row " + std::to_string(b) +
                                " is not one-hot");
    }
    if (label == n)
      throw InvalidLabelError("softmax_cross_entropy: row " + std::to_string(b) +
                              " is not one-hot");
    T mx = lr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, lr[j]);
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(static_cast<double>(lr[j] - mx));
    const double logsum = std::log(sum);
    total += logsum - static_cast<double>(lr[label] - mx);
    T* gr = out.logits_grad.data() + b * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = std::exp(static_cast<double>(lr[j] - mx)) / sum;
      gr[j] = static_cast<T>((p - static_cast<double>(yr[j])) / static_cast<double>(batch));
    }
  }
  out.loss = static_cast<T>(total / static_cast<double>(batch));
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  const std::size_t batch = logits.extent(0), n = logits.numel() / logits.extent(0);
  Tensor<T> out = logits.reshaped(Shape{batch, n});
  for (std::size_t b = 0; b < batch; ++b) {
    T* r = out.data() + b * n;
    T mx = r[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, r[j]);
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(static_cast<double>(r[j] - mx));
    for (std::size_t j = 0; j < n; ++j)
      r[j] = static_cast<T>(std::exp(static_cast<double>(r[j] - mx)) / sum);
  }
  return out;
}

// velocity <- momentum * velocity + grads; params <- params - lr * velocity
template <typename T>
void sgd_momentum_step(std::vector<ParamRef<T>>& params, const std::vector<Tensor<T>>& grads,
                       std::vector<Tensor<T>>& velocity, T lr, T momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw std::invalid_argument("sgd_momentum_step: list sizes differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] *= momentum;
    velocity[i] += grads[i];
    params[i].value->axpy(-lr, velocity[i]);
  }
}

template <typename T>
struct EvalResult {
  T accuracy = 0;
  T mean_loss = 0;
};

// Accuracy and mean loss over a raw dataset; batch-norm runs with its
// running statistics. Argmax ties resolve to the lowest class index.
template <typename T>
EvalResult<T> evaluate(const Model<T>& model, const Dataset<T>& ds,
                       std::size_t eval_batch = 256) {
  if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const std::size_t n = ds.size();
  double loss_total = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < n; start += eval_batch) {
    const std::size_t stop = std::min(n, start + eval_batch);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor<T> x = gather_images(ds, idx);
    if (!ds.normalized) x = model.preprocess(x);
    Tensor<T> logits = model.net.forward_inference(x);
    Tensor<T> y = gather_onehot(ds, idx);
    auto lg = softmax_cross_entropy(logits, y);
    loss_total += static_cast<double>(lg.loss) * static_cast<double>(idx.size());
    const std::size_t classes = logits.extent(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const T* row = logits.data() + b * classes;
      std::size_t arg = 0;
      for (std::size_t j = 1; j < classes; ++j)
        if (row[j] > row[arg]) arg = j;
      if (static_cast<std::int32_t>(arg) == ds.labels[idx[b]]) ++correct;
    }
  }
  EvalResult<T> out;
  out.accuracy = static_cast<T>(static_cast<double>(correct) / static_cast<double>(n));
  out.mean_loss = static_cast<T>(loss_total / static_cast<double>(n));
  return out;
}

// Regularized training: per batch, one captured forward pass shared by the
// task loss and the penalty, SGD with momentum on the summed gradients.
// Batch-norm runs in pseudo-inference mode so the penalty sees per-sample
// affine maps; running statistics still accumulate for later evaluation.
// Deterministic for a fixed seed and precision (modulo the wall-clock
// column of the metrics).
template <typename T>
RunMetrics<T> fit(Model<T>& model, const Dataset<T>& train_raw, const Dataset<T>& val_raw,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_raw.size() == 0) throw std::invalid_argument("fit: empty training set");
  SeededRng rng(cfg.seed);

  if (model.stats.empty()) model.stats = compute_norm_stats(train_raw);
  const std::optional<NormStats<T>> stats(model.stats);
  Dataset<T> train = train_raw.normalized ? train_raw : normalize(train_raw, stats);
  Dataset<T> val =
      val_raw.size() && !val_raw.normalized ? normalize(val_raw, stats) : val_raw;
  model.tag = reg_kind_name(cfg.regularizer.kind);

  auto params = model.net.param_refs();
  std::vector<Tensor<T>> velocity;
  for (auto& p : params) velocity.emplace_back(p.value->shape());

  PowerIterState<T> bound_state;
  if (cfg.regularizer.kind == RegKind::spectral_bound)
    bound_state = PowerIterState<T>::make(model.net, rng);

  const bool per_sample_penalty = cfg.regularizer.kind == RegKind::spectral ||
                                  cfg.regularizer.kind == RegKind::frobenius;

  RunMetrics<T> metrics;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)  // seeded Fisher-Yates
      std::swap(order[i - 1], order[rng.next_index(i)]);

    double loss_sum = 0, penalty_sum = 0, ms_sum = 0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++n_batches) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
      Tensor<T> x = gather_images(train, idx);
      Tensor<T> y = gather_onehot(train, idx);

      ForwardResult<T> fwd;
      try {
        fwd = model.net.forward_capture(x, BnMode::pseudo_inference);
      } catch (const NonFiniteError&) {
        throw TrainingDiverged("fit: non-finite activations", epoch, n_batches);
      }
      auto lg = softmax_cross_entropy(fwd.logits, y);
      if (!std::isfinite(static_cast<double>(lg.loss)))
        throw TrainingDiverged("fit: loss is not finite", epoch, n_batches);
      loss_sum += static_cast<double>(lg.loss);

      auto bp = model.net.backprop(fwd, lg.logits_grad);
      std::vector<Tensor<T>>& grads = bp.param_grads;

      if (cfg.regularizer.kind != RegKind::none) {
        auto pen = batch_penalty(model.net, fwd.captures, cfg.regularizer, rng, &bound_state);
        const T scale = per_sample_penalty
                            ? static_cast<T>(cfg.regularizer.lambda / static_cast<double>(idx.size()))
                            : static_cast<T>(cfg.regularizer.lambda);
        for (std::size_t i = 0; i < grads.size(); ++i)
          grads[i].axpy(scale, pen.param_grads[i]);
        penalty_sum += per_sample_penalty
                           ? static_cast<double>(pen.penalty) / static_cast<double>(idx.size())
                           : static_cast<double>(pen.penalty);
      }

      sgd_momentum_step(params, grads, velocity, static_cast<T>(cfg.learning_rate),
                        static_cast<T>(cfg.momentum));
      ms_sum += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
    }

    EpochMetrics<T> row;
    row.epoch = epoch;
    row.train_loss = static_cast<T>(loss_sum / static_cast<double>(n_batches));
    row.mean_penalty = static_cast<T>(penalty_sum / static_cast<double>(n_batches));
    row.ms_per_batch = ms_sum / static_cast<double>(n_batches);
    if (val.size()) {
      auto ev = evaluate(model, val);
      row.val_loss = ev.mean_loss;
      row.val_accuracy = ev.accuracy;
    }
    metrics.epochs.push_back(row);
  }
  return metrics;
}

}  // namespace specreg

#endif  // SPECREG_TRAINER_HPP
