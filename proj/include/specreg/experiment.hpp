#ifndef SPECREG_EXPERIMENT_HPP
#define SPECREG_EXPERIMENT_HPP

#include <json.hpp>

#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "specreg/architectures.hpp"
#include "specreg/bench.hpp"
#include "specreg/checkpoint.hpp"
#include "specreg/csv.hpp"
#include "specreg/robustness.hpp"
#include "specreg/trainer.hpp"

namespace specreg {

inline constexpr const char* kCodeVersion = "0.1.0";

inline constexpr const char* kMetricsHeader =
    "epoch,train_loss,val_loss,val_acc,mean_penalty,ms_per_batch";
inline constexpr const char* kAttackHeader = "method,attack,iters_or_sigma,accuracy_drop";
inline constexpr const char* kBoundaryHeader = "sample_id,radius,saturated_flag";
inline constexpr const char* kBenchTimeHeader = "method,batch_size,ms_per_batch";
inline constexpr const char* kBenchRelErrHeader =
    "n_iters,median_rel_err,mean_rel_err,median_ub_ratio,mean_ub_ratio,samples,flagged";
inline constexpr const char* kEvalHeader = "samples,accuracy,mean_loss";
inline constexpr const char* kGridHeader = "lr,batch_size,lambda,repeat_idx,val_loss,val_acc";

// Everything a command needs; the manifest serializes this struct, so a run
// is reproducible from the manifest alone.
struct ExperimentConfig {
  std::string command;
  std::string arch = "lenet";
  std::string precision = "f64";

  std::string train_images, train_labels;
  std::string test_images, test_labels;
  std::string blobs;  // "dim,n_per_class,n_classes[,separation]" synthetic fallback
  std::string model_path;
  std::string out_dir = "out";

  std::size_t repeat = 1;
  std::size_t eval_limit = 0;  // cap attack/boundary/eval sample counts; 0 = all

  TrainConfig train;
  AttackConfig attack;
  BoundarySearchConfig boundary;
  std::size_t boundary_samples = 64;  // how many inputs get a boundary search

  std::vector<std::size_t> attack_iters;  // strength scan; empty = {attack.iters}
  std::vector<double> noise_sigmas;       // noise scan
  std::vector<std::size_t> bench_batches = {16, 32, 128};
  std::vector<std::size_t> bench_n = {1, 2, 4, 8, 16, 32, 50};
  std::size_t bench_samples = 50;

  void validate() const {
    if (repeat < 1) throw std::invalid_argument("config: repeat must be >= 1");
    if (precision != "f32" && precision != "f64")
      throw std::invalid_argument("config: precision must be f32 or f64");
  }
};

namespace exp_detail {

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["command"] = c.command;
  j["arch"] = c.arch;
  j["precision"] = c.precision;
  j["train_images"] = c.train_images;
  j["train_labels"] = c.train_labels;
  j["test_images"] = c.test_images;
  j["test_labels"] = c.test_labels;
  j["blobs"] = c.blobs;
  j["model_path"] = c.model_path;
  j["repeat"] = c.repeat;
  j["eval_limit"] = c.eval_limit;
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"momentum", c.train.momentum},
                {"seed", c.train.seed},
                {"reg", reg_kind_name(c.train.regularizer.kind)},
                {"lambda", c.train.regularizer.lambda},
                {"power_iters", c.train.regularizer.power_iters},
                {"n_proj", c.train.regularizer.n_proj},
                {"penalty_exponent", c.train.regularizer.penalty_exponent}};
  j["attack"] = {{"kind", attack_kind_name(c.attack.kind)},
                 {"delta", c.attack.delta},
                 {"eta", c.attack.eta},
                 {"iters", c.attack.iters},
                 {"rand_start", c.attack.rand_start},
                 {"noise_sigma", c.attack.noise_sigma},
                 {"seed", c.attack.seed}};
  j["boundary"] = {{"samples_per_sphere", c.boundary.samples_per_sphere},
                   {"radius_lo", c.boundary.radius_lo},
                   {"radius_hi", c.boundary.radius_hi},
                   {"bisection_iters", c.boundary.bisection_iters},
                   {"seed", c.boundary.seed},
                   {"boundary_samples", c.boundary_samples}};
  j["attack_iters_scan"] = c.attack_iters;
  j["noise_sigmas"] = c.noise_sigmas;
  j["bench_batches"] = c.bench_batches;
  j["bench_n"] = c.bench_n;
  j["bench_samples"] = c.bench_samples;
  return j;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline void write_manifest(const ExperimentConfig& cfg) {
  nlohmann::json j = to_json(cfg);
  char hex[20];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(fnv1a(j.dump())));
  j["config_hash"] = hex;
  j["code_version"] = kCodeVersion;
  write_file_atomic((std::filesystem::path(cfg.out_dir) / "manifest.json").string(),
                    j.dump(2) + "\n");
}

inline std::vector<double> parse_number_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stod(item));
  return out;
}

}  // namespace exp_detail

// "lenet", "mlp" or "mlp:H1,H2,...".
template <typename T>
Network<T> build_arch(const std::string& arch, const Shape& input_shape,
                      std::size_t n_classes) {
  if (arch == "lenet") {
    if (input_shape != Shape{1, 28, 28})
      throw std::invalid_argument("lenet expects 1x28x28 inputs, got " +
                                  shape_str(input_shape));
    if (n_classes != 10) throw std::invalid_argument("lenet expects 10 classes");
    return lenet<T>();
  }
  if (arch.rfind("mlp", 0) == 0) {
    std::vector<std::size_t> hidden{128};
    if (arch.size() > 4 && arch[3] == ':') {
      hidden.clear();
      for (double v : exp_detail::parse_number_list(arch.substr(4)))
        hidden.push_back(static_cast<std::size_t>(v));
    }
    return mlp<T>(input_shape, hidden, n_classes);
  }
  throw std::invalid_argument("unknown architecture: " + arch);
}

template <typename T>
struct ExperimentData {
  Dataset<T> train, eval;
};

// IDX files when paths are configured, synthetic blobs otherwise.
template <typename T>
ExperimentData<T> load_experiment_data(const ExperimentConfig& cfg, bool need_train) {
  ExperimentData<T> data;
  if (!cfg.train_images.empty() || !cfg.test_images.empty()) {
    if (!cfg.train_images.empty() && (need_train || cfg.test_images.empty()))
      data.train = load_idx<T>(cfg.train_images, cfg.train_labels);
    if (!cfg.test_images.empty()) {
      data.eval = load_idx<T>(cfg.test_images, cfg.test_labels);
    } else if (need_train && data.train.size() > 1) {
      // hold out the trailing fifth when no test split is configured
      auto [head, tail] = split_dataset(data.train, data.train.size() * 4 / 5);
      data.train = head;
      data.eval = tail;
    } else {
      data.eval = data.train;  // evaluation-only run pointed at a single file pair
    }
    return data;
  }
  if (cfg.blobs.empty())
    throw std::invalid_argument("no dataset: configure IDX paths or a blobs spec");
  auto nums = exp_detail::parse_number_list(cfg.blobs);
  if (nums.size() < 3) throw std::invalid_argument("blobs spec: dim,n_per_class,n_classes[,sep]");
  const auto dim = static_cast<std::size_t>(nums[0]);
  const auto per_class = static_cast<std::size_t>(nums[1]);
  const auto classes = static_cast<std::size_t>(nums[2]);
  const double sep = nums.size() > 3 ? nums[3] : 8.0;
  SeededRng train_rng(cfg.train.seed ^ 0x7261696Eull);
  SeededRng eval_rng(cfg.train.seed ^ 0x6576616Cull);
  if (need_train) data.train = synthetic_blobs<T>(train_rng, per_class, classes, dim, sep);
  data.eval = synthetic_blobs<T>(eval_rng, std::max<std::size_t>(per_class / 4, 8), classes,
                                 dim, sep);
  return data;
}

template <typename T>
Dataset<T> limit_dataset(const Dataset<T>& ds, std::size_t limit) {
  if (limit == 0 || ds.size() <= limit) return ds;
  return split_dataset(ds, limit).first;
}

template <typename T>
std::string metrics_csv(const RunMetrics<T>& metrics) {
  CsvTable table(kMetricsHeader);
  for (const auto& e : metrics.epochs)
    table.add_row({num_str(e.epoch), num_str(e.train_loss), num_str(e.val_loss),
                   num_str(e.val_accuracy), num_str(e.mean_penalty),
                   num_str(e.ms_per_batch)});
  return table.str();
}

template <typename T>
Model<T> load_model_or_fail(const ExperimentConfig& cfg) {
  if (cfg.model_path.empty())
    throw std::invalid_argument(cfg.command + " requires a model checkpoint (--model)");
  return load_checkpoint<T>(cfg.model_path);
}

template <typename T>
RunMetrics<T> run_train_command(const ExperimentConfig& cfg,
                                const std::filesystem::path& out) {
  auto data = load_experiment_data<T>(cfg, /*need_train=*/true);
  Model<T> model;
  model.net = build_arch<T>(cfg.arch, data.train.image_shape(), data.train.n_classes);
  SeededRng init_rng(cfg.train.seed ^ 0x1717ull);
  model.net.init_params(init_rng);
  auto metrics = fit(model, data.train, data.eval, cfg.train);
  write_file_atomic((out / "metrics.csv").string(), metrics_csv(metrics));
  save_checkpoint(model, (out / "checkpoint.bin").string());
  return metrics;
}

// Accuracy drop for one attack configuration over a raw dataset, attacking
// in fixed-size chunks. Containment is an exact postcondition here: any
// violating pixel is a bug, not a tolerance.
template <typename T>
T attack_accuracy_drop(Model<T>& model, const Dataset<T>& ds, const AttackConfig& cfg) {
  const T baseline = evaluate(model, ds).accuracy;
  const std::size_t chunk = 128;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t stop = std::min(ds.size(), start + chunk);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor<T> x = gather_images(ds, idx);
    Tensor<T> y = gather_onehot(ds, idx);
    AttackConfig chunk_cfg = cfg;
    chunk_cfg.seed = cfg.seed ^ start;
    Tensor<T> adv = run_attack(model, x, y, chunk_cfg);
    for (std::size_t i = 0; i < adv.numel(); ++i) {
      if (std::abs(adv[i] - x[i]) > static_cast<T>(cfg.delta) || adv[i] < T(0) || adv[i] > T(1))
        throw std::logic_error("attack containment violated");
    }
    Tensor<T> logits = model.net.forward_inference(model.preprocess(adv));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const std::size_t n = logits.extent(1);
      const T* row = logits.data() + b * n;
      std::size_t arg = 0;
      for (std::size_t j = 1; j < n; ++j)
        if (row[j] > row[arg]) arg = j;
      if (static_cast<std::int32_t>(arg) == ds.labels[idx[b]]) ++correct;
    }
  }
  const T attacked = static_cast<T>(static_cast<double>(correct) / ds.size());
  return baseline - attacked;
}

template <typename T>
int run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::filesystem::path out(cfg.out_dir);
  std::filesystem::create_directories(out);
  exp_detail::write_manifest(cfg);

  if (cfg.command == "train") {
    run_train_command<T>(cfg, out);
    return 0;
  }

  if (cfg.command == "grid") {
    // standard sweep: 2 learning rates x 2 batch sizes x 4 weights
    const std::vector<double> lrs{0.01, 0.001};
    const std::vector<std::size_t> batches{16, 32};
    const std::vector<double> lambdas{0.0001, 0.001, 0.01, 0.1};
    auto data = load_experiment_data<T>(cfg, true);
    CsvTable table(kGridHeader);
    double best_loss = std::numeric_limits<double>::infinity();
    nlohmann::json best;
    for (double lr : lrs)
      for (std::size_t bs : batches)
        for (double lambda : lambdas) {
          double loss_sum = 0;
          for (std::size_t r = 0; r < cfg.repeat; ++r) {
            TrainConfig tc = cfg.train;
            tc.learning_rate = lr;
            tc.batch_size = bs;
            tc.regularizer.lambda = lambda;
            tc.seed = cfg.train.seed + r * 7919;
            Model<T> model;
            model.net = build_arch<T>(cfg.arch, data.train.image_shape(),
                                      data.train.n_classes);
            SeededRng init_rng(tc.seed ^ 0x1717ull);
            model.net.init_params(init_rng);
            auto metrics = fit(model, data.train, data.eval, tc);
            const auto& last = metrics.epochs.back();
            loss_sum += static_cast<double>(last.val_loss);
            table.add_row({num_str(lr), num_str(bs), num_str(lambda), num_str(r),
                           num_str(last.val_loss), num_str(last.val_accuracy)});
          }
          const double mean_loss = loss_sum / static_cast<double>(cfg.repeat);
          if (mean_loss < best_loss) {
            best_loss = mean_loss;
            best = {{"lr", lr},
                    {"batch_size", bs},
                    {"lambda", lambda},
                    {"mean_val_loss", mean_loss}};
          }
        }
    table.write((out / "grid.csv").string());
    write_file_atomic((out / "best.json").string(), best.dump(2) + "\n");
    return 0;
  }

  if (cfg.command == "eval") {
    auto model = load_model_or_fail<T>(cfg);
    auto data = load_experiment_data<T>(cfg, false);
    auto ds = limit_dataset(data.eval, cfg.eval_limit);
    auto ev = evaluate(model, ds);
    CsvTable table(kEvalHeader);
    table.add_row({num_str(ds.size()), num_str(ev.accuracy), num_str(ev.mean_loss)});
    table.write((out / "eval.csv").string());
    return 0;
  }

  if (cfg.command == "attack") {
    auto model = load_model_or_fail<T>(cfg);
    auto data = load_experiment_data<T>(cfg, false);
    auto ds = limit_dataset(data.eval, cfg.eval_limit);
    std::vector<std::size_t> scan = cfg.attack_iters;
    if (scan.empty()) scan = {cfg.attack.iters};
    CsvTable table(kAttackHeader);
    for (std::size_t iters : scan) {
      AttackConfig acfg = cfg.attack;
      acfg.iters = iters;
      const T drop = attack_accuracy_drop(model, ds, acfg);
      table.add_row({model.tag, attack_kind_name(acfg.kind), num_str(iters), num_str(drop)});
    }
    table.write((out / "attack.csv").string());
    return 0;
  }

  if (cfg.command == "noise") {
    auto model = load_model_or_fail<T>(cfg);
    auto data = load_experiment_data<T>(cfg, false);
    auto ds = limit_dataset(data.eval, cfg.eval_limit);
    std::vector<double> sigmas = cfg.noise_sigmas;
    if (sigmas.empty()) sigmas = {cfg.attack.noise_sigma};
    CsvTable table(kAttackHeader);
    for (double sigma : sigmas) {
      SeededRng rng(cfg.attack.seed ^ exp_detail::fnv1a(num_str(sigma)));
      const T drop = gaussian_perturb_eval(model, ds, sigma, rng);
      table.add_row({model.tag, "noise", num_str(sigma), num_str(drop)});
    }
    table.write((out / "attack.csv").string());
    return 0;
  }

  if (cfg.command == "boundary") {
    auto model = load_model_or_fail<T>(cfg);
    auto data = load_experiment_data<T>(cfg, false);
    auto ds = limit_dataset(data.eval, cfg.eval_limit);
    const std::size_t count = std::min(cfg.boundary_samples, ds.size());
    CsvTable table(kBoundaryHeader);
    for (std::size_t i = 0; i < count; ++i) {
      BoundarySearchConfig bcfg = cfg.boundary;
      bcfg.seed = cfg.boundary.seed ^ (i * 0x9E3779B9ull);
      auto res = boundary_distance(model, slice_batch(ds.images, i), bcfg);
      table.add_row({num_str(i), num_str(res.radius), res.saturated ? "1" : "0"});
    }
    table.write((out / "boundary.csv").string());
    return 0;
  }

  if (cfg.command == "bench-time") {
    auto model = load_model_or_fail<T>(cfg);
    auto rows = bench_time(model, cfg.bench_batches, cfg.train.regularizer.power_iters, 20, 2,
                           cfg.train.seed);
    CsvTable table(kBenchTimeHeader);
    for (const auto& r : rows)
      table.add_row({r.method, num_str(r.batch_size), num_str(r.ms_per_batch)});
    table.write((out / "bench_time.csv").string());
    return 0;
  }

  if (cfg.command == "bench-relerr") {
    auto model = load_model_or_fail<T>(cfg);
    auto data = load_experiment_data<T>(cfg, false);
    auto ds = limit_dataset(data.eval, std::max(cfg.bench_samples, std::size_t(1)));
    std::vector<std::size_t> idx(std::min(cfg.bench_samples, ds.size()));
    std::iota(idx.begin(), idx.end(), 0);
    Tensor<T> inputs = gather_images(ds, idx);
    auto rows = bench_relative_error(model, inputs, cfg.bench_n, cfg.train.seed);
    CsvTable table(kBenchRelErrHeader);
    for (const auto& r : rows)
      table.add_row({num_str(r.n_iters), num_str(r.median_rel_err), num_str(r.mean_rel_err),
                     num_str(r.median_ub_ratio), num_str(r.mean_ub_ratio),
                     num_str(r.samples_used), num_str(r.flagged)});
    table.write((out / "bench_relerr.csv").string());
    return 0;
  }

  throw std::invalid_argument("unknown command: " + cfg.command);
}

}  // namespace specreg

#endif  // SPECREG_EXPERIMENT_HPP
