// Command-line driver: training, evaluation, perturbation studies, boundary
// searches and the two benchmark procedures, all emitting CSV/JSON artifacts
// reproducible from the manifest in the output directory.

#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "specreg/experiment.hpp"

using namespace specreg;

int main(int argc, char** argv) {
  CLI::App app{"spectral-norm regularization workbench"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string reg = "none";
  std::string attack_kind = "pgd";
  std::string attack_iters_list, noise_sigma_list, bench_batch_list, bench_n_list;
  bool pgd_rand_start = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--arch", cfg.arch, "lenet | mlp | mlp:H1,H2,...");
    sub->add_option("--precision", cfg.precision, "f32 | f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    sub->add_option("--seed", cfg.train.seed, "run seed");
    sub->add_option("--out", cfg.out_dir, "output directory");
    sub->add_option("--train-images", cfg.train_images, "IDX image file (training)");
    sub->add_option("--train-labels", cfg.train_labels, "IDX label file (training)");
    sub->add_option("--test-images", cfg.test_images, "IDX image file (evaluation)");
    sub->add_option("--test-labels", cfg.test_labels, "IDX label file (evaluation)");
    sub->add_option("--blobs", cfg.blobs, "synthetic data: dim,n_per_class,n_classes[,sep]");
    sub->add_option("--model", cfg.model_path, "checkpoint to load");
    sub->add_option("--eval-limit", cfg.eval_limit, "cap evaluation samples (0 = all)");
  };
  auto add_train = [&](CLI::App* sub) {
    sub->add_option("--reg", reg, "none | l2 | frobenius | spectral-bound | spectral");
    sub->add_option("--lambda", cfg.train.regularizer.lambda, "penalty weight");
    sub->add_option("--power-iters", cfg.train.regularizer.power_iters,
                    "power iterations per batch");
    sub->add_option("--n-proj", cfg.train.regularizer.n_proj, "frobenius projections");
    sub->add_option("--penalty-exponent", cfg.train.regularizer.penalty_exponent,
                    "h(x)=x or x^2 for the spectral penalty")
        ->check(CLI::IsMember({1, 2}));
    sub->add_option("--epochs", cfg.train.epochs, "training epochs");
    sub->add_option("--batch-size", cfg.train.batch_size, "batch size");
    sub->add_option("--lr", cfg.train.learning_rate, "learning rate");
    sub->add_option("--momentum", cfg.train.momentum, "SGD momentum");
  };
  auto add_attack = [&](CLI::App* sub) {
    sub->add_option("--attack", attack_kind, "pgd | tpgd")
        ->check(CLI::IsMember({"pgd", "tpgd"}));
    sub->add_option("--delta", cfg.attack.delta, "infinity-ball radius (raw pixels)");
    sub->add_option("--eta", cfg.attack.eta, "ascent step size");
    sub->add_option("--attack-iters", attack_iters_list,
                    "iteration counts, comma separated (strength scan)");
    sub->add_option("--attack-seed", cfg.attack.seed, "random-start seed");
    sub->add_flag("--rand-start", pgd_rand_start, "random start for PGD");
  };

  auto* train = app.add_subcommand("train", "fit a model and write metrics + checkpoint");
  add_common(train);
  add_train(train);

  auto* grid = app.add_subcommand("grid", "hyperparameter sweep (2 lr x 2 batch x 4 lambda)");
  add_common(grid);
  add_train(grid);
  grid->add_option("--repeat", cfg.repeat, "training repetitions per configuration");

  auto* eval = app.add_subcommand("eval", "accuracy/loss of a checkpoint on a dataset");
  add_common(eval);

  auto* attack = app.add_subcommand("attack", "PGD/TPGD accuracy-drop scan");
  add_common(attack);
  add_attack(attack);

  auto* noise = app.add_subcommand("noise", "white-noise accuracy-drop scan");
  add_common(noise);
  noise->add_option("--noise-sigma", noise_sigma_list, "sigma values, comma separated");
  noise->add_option("--attack-seed", cfg.attack.seed, "noise seed");

  auto* boundary = app.add_subcommand("boundary", "decision-boundary distance histogram");
  add_common(boundary);
  boundary->add_option("--sphere-samples", cfg.boundary.samples_per_sphere,
                       "points per sphere");
  boundary->add_option("--radius-hi", cfg.boundary.radius_hi, "bracket upper radius");
  boundary->add_option("--bisection-iters", cfg.boundary.bisection_iters, "bisection rounds");
  boundary->add_option("--boundary-samples", cfg.boundary_samples, "inputs to measure");
  boundary->add_option("--boundary-seed", cfg.boundary.seed, "sphere sampling seed");

  auto* bench_time_cmd = app.add_subcommand("bench-time", "per-batch timing table");
  add_common(bench_time_cmd);
  bench_time_cmd->add_option("--batch-sizes", bench_batch_list, "comma separated");
  bench_time_cmd->add_option("--power-iters", cfg.train.regularizer.power_iters,
                             "N for the spectral row");

  auto* bench_rel = app.add_subcommand("bench-relerr", "power-iteration relative error table");
  add_common(bench_rel);
  bench_rel->add_option("--n-values", bench_n_list, "iteration counts, comma separated");
  bench_rel->add_option("--bench-samples", cfg.bench_samples, "inputs to measure");

  CLI11_PARSE(app, argc, argv);

  try {
    cfg.command = app.get_subcommands().front()->get_name();
    cfg.train.regularizer.kind = reg_kind_from_name(reg);
    cfg.attack.kind = attack_kind == "tpgd" ? AttackKind::tpgd : AttackKind::pgd;
    cfg.attack.rand_start = pgd_rand_start;
    if (!attack_iters_list.empty())
      for (double v : exp_detail::parse_number_list(attack_iters_list))
        cfg.attack_iters.push_back(static_cast<std::size_t>(v));
    if (!noise_sigma_list.empty())
      cfg.noise_sigmas = exp_detail::parse_number_list(noise_sigma_list);
    if (!bench_batch_list.empty()) {
      cfg.bench_batches.clear();
      for (double v : exp_detail::parse_number_list(bench_batch_list))
        cfg.bench_batches.push_back(static_cast<std::size_t>(v));
    }
    if (!bench_n_list.empty()) {
      cfg.bench_n.clear();
      for (double v : exp_detail::parse_number_list(bench_n_list))
        cfg.bench_n.push_back(static_cast<std::size_t>(v));
    }
    return cfg.precision == "f32" ? run_experiment<float>(cfg) : run_experiment<double>(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
