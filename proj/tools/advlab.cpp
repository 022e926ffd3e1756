// advlab: train, attack, evaluate and sweep small image classifiers under
// l-inf adversaries, driven by a JSON config. Progress goes to stderr;
// machine-readable results go to files (and stdout for --dry-run).

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "adv/errors.hpp"
#include "adv/experiments.hpp"
#include "adv/run_config.hpp"
#include "adv/serialize.hpp"
#include "adv/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string weights_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int epochs = -1;
  int batch_size = -1;
  int workers = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_weights) {
  cmd->add_option("--config", args.config_path, "JSON run config")->required();
  if (needs_weights)
    cmd->add_option("--weights", args.weights_path, ".advw weight file")->required();
  cmd->add_option("--out", args.out_dir, "output directory (overrides config out_dir)");
  cmd->add_option("--seed", args.seed, "override config seed")->each([&args](const std::string&) {
    args.seed_set = true;
  });
  cmd->add_option("--epochs", args.epochs, "override config epochs");
  cmd->add_option("--batch-size", args.batch_size, "override config batch size");
  cmd->add_option("--workers", args.workers, "evaluation/attack worker threads");
}

// Precedence: flag > config file > ADVLAB_OUT > current directory.
adv::RunConfig load_config(const CommonArgs& args, const json** raw_out = nullptr) {
  static json raw;
  raw = adv::read_json_file(args.config_path);
  adv::RunConfig cfg = adv::parse_run_config(raw);
  if (args.seed_set) cfg.train.seed = args.seed;
  if (args.epochs >= 0) cfg.train.epochs = args.epochs;
  if (args.batch_size > 0) cfg.train.batch_size = args.batch_size;
  if (args.workers > 0) cfg.workers = args.workers;
  if (!args.out_dir.empty()) {
    cfg.out_dir = args.out_dir;
  } else if (cfg.out_dir == "." || cfg.out_dir.empty()) {
    if (const char* env = std::getenv("ADVLAB_OUT")) cfg.out_dir = env;
  }
  cfg.train.validate();
  if (raw_out) *raw_out = &raw;
  return cfg;
}

fs::path ensure_out_dir(const adv::RunConfig& cfg) {
  fs::path dir(cfg.out_dir.empty() ? "." : cfg.out_dir);
  fs::create_directories(dir);
  return dir;
}

void warn_weak_eval(const json& train_meta, const std::vector<adv::AttackConfig>& eval_attacks) {
  if (!train_meta.is_object() || !train_meta.contains("attack")) return;
  const json& a = train_meta["attack"];
  if (!a.contains("n2") || a.value("kind", "") == "fgsm" || a.value("kind", "") == "rfgsm") return;
  const int train_n2 = a.value("n2", 1);
  for (const adv::AttackConfig& e : eval_attacks) {
    if (e.iterative() && e.n2 <= train_n2)
      std::cerr << "warning: evaluation attack " << e.label() << " is not stronger than the training "
                << "attack (n2 " << e.n2 << " <= " << train_n2
                << "); pick a larger n2 for a convincing evaluation\n";
  }
}

int cmd_train(const CommonArgs& args, bool dry_run) {
  const json* raw = nullptr;
  adv::RunConfig cfg = load_config(args, &raw);
  adv::Dataset data = adv::resolve_dataset(cfg);
  const std::uint64_t forecast = cfg.train.forecast_input_grad_evals(data.train.size());

  if (dry_run) {
    json out{{"resolved_config", adv::run_config_to_json(cfg)},
             {"train_examples", data.train.size()},
             {"batches_per_epoch", cfg.train.batches_per_epoch(data.train.size())},
             {"forecast_input_grad_evals", forecast},
             {"forecast_param_updates",
              std::uint64_t(cfg.train.epochs) * cfg.train.batches_per_epoch(data.train.size())}};
    std::cout << out.dump(2) << "\n";
    return 0;
  }

  const fs::path dir = ensure_out_dir(cfg);
  adv::Network<float> net = adv::build_net_for(cfg, data);
  std::cerr << "training " << adv::regime_name(cfg.train.regime) << " on " << data.train.size()
            << " examples (" << cfg.train.epochs << " epochs, batch " << cfg.train.batch_size << ")\n";

  const auto t0 = std::chrono::steady_clock::now();
  adv::TrainReport report = adv::train(net, data, cfg.train);
  for (const adv::EpochStats& e : report.epochs) {
    std::cerr << "epoch " << e.epoch << " loss " << e.mean_loss;
    if (e.clean_accuracy >= 0) std::cerr << " clean_acc " << e.clean_accuracy;
    std::cerr << " (" << e.wall_ms << " ms)\n";
  }
  if (report.input_grad_evals != forecast)
    throw std::runtime_error("instrumented grad-eval count " + std::to_string(report.input_grad_evals) +
                             " does not match forecast " + std::to_string(forecast));

  json train_meta{{"regime", adv::regime_name(cfg.train.regime)},
                  {"seed", cfg.train.seed},
                  {"attack",
                   {{"kind", adv::attack_kind_name(cfg.train.attack.kind)},
                    {"epsilon", cfg.train.attack.epsilon},
                    {"n1", cfg.train.attack.n1},
                    {"n2", cfg.train.attack.n2}}}};
  const fs::path weights = dir / "weights.advw";
  adv::save_weights(net, weights.string(), train_meta);
  report.weights_path = weights.string();

  json envelope = adv::run_envelope(adv::run_config_to_json(cfg), cfg.train.seed,
                                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  envelope["report"] = report.to_json();
  adv::write_json_file((dir / "train_report.json").string(), envelope);
  std::cerr << "wrote " << weights.string() << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  adv::RunConfig cfg = load_config(args);
  if (cfg.eval_attacks.empty()) throw adv::ConfigError("eval.attacks: required for the eval command");
  adv::Dataset data = adv::resolve_dataset(cfg);
  json train_meta;
  adv::Network<float> net = adv::load_weights(args.weights_path, &train_meta);
  warn_weak_eval(train_meta, cfg.eval_attacks);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<adv::EvalRow> rows = adv::eval_matrix(net, data.test, cfg.eval_attacks, cfg.workers);
  std::vector<std::vector<std::string>> csv_rows;
  for (const adv::EvalRow& r : rows) {
    std::cerr << r.label << " accuracy " << r.accuracy << "\n";
    csv_rows.push_back({r.label, adv::format_float(r.accuracy)});
  }
  const fs::path dir = ensure_out_dir(cfg);
  adv::write_csv((dir / "eval_matrix.csv").string(), {"attack", "accuracy"}, csv_rows);
  json envelope = adv::run_envelope(adv::run_config_to_json(cfg), cfg.train.seed,
                                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  envelope["weights"] = args.weights_path;
  adv::write_json_file((dir / "eval_report.json").string(), envelope);
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& kind_flag) {
  adv::RunConfig cfg = load_config(args);
  if (!kind_flag.empty()) cfg.sweep_kind = kind_flag;
  adv::Dataset data = adv::resolve_dataset(cfg);
  adv::Network<float> net = adv::load_weights(args.weights_path);

  const auto t0 = std::chrono::steady_clock::now();
  adv::RhoCurve curve;
  const float eps = cfg.train.attack.epsilon;
  const std::uint64_t seed = cfg.train.attack.seed;
  if (cfg.sweep_kind == "per_step") {
    curve = adv::sweep_per_step(net, data.test, eps, cfg.sweep_grid, seed, args.weights_path, cfg.workers);
  } else if (cfg.sweep_kind == "intermediate") {
    curve = adv::sweep_intermediate(net, data.test, eps, cfg.sweep_n1, cfg.sweep_n2, seed,
                                    args.weights_path, cfg.workers);
  } else {
    throw adv::ConfigError("sweep.kind: unknown value '" + cfg.sweep_kind + "'");
  }
  for (std::size_t i = 0; i < curve.xs.size(); ++i)
    std::cerr << "x " << curve.xs[i] << " error " << curve.error_rates[i] << " rho " << curve.rhos[i]
              << "\n";
  const fs::path dir = ensure_out_dir(cfg);
  adv::write_csv((dir / ("sweep_" + cfg.sweep_kind + ".csv")).string(), adv::kRhoCurveHeader,
                 adv::rho_curve_rows(curve));
  json envelope = adv::run_envelope(adv::run_config_to_json(cfg), seed,
                                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  envelope["weights"] = args.weights_path;
  adv::write_json_file((dir / ("sweep_" + cfg.sweep_kind + "_report.json")).string(), envelope);
  return 0;
}

int cmd_attack(const CommonArgs& args) {
  adv::RunConfig cfg = load_config(args);
  adv::Dataset data = adv::resolve_dataset(cfg);
  adv::Network<float> net = adv::load_weights(args.weights_path);
  const adv::AttackConfig& atk = cfg.train.attack;
  atk.validate();

  const Eigen::Index n = data.test.size();
  adv::Tensor<float> adv_images(data.test.images.shape);
  const Eigen::Index per = adv::shape_numel(data.input_shape());
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  const Eigen::Index bs = 250;
  std::uint64_t batch_index = 0;
  for (Eigen::Index start = 0; start < n; start += bs, ++batch_index) {
    adv::Batch<float> batch = adv::gather_batch(data.test, order, start, std::min(start + bs, n));
    adv::AttackResult<float> res = adv::run_attack(net, batch, atk, batch_index);
    adv_images.data.segment(start * per, batch.size() * per) = res.adversarial.data;
  }
  const fs::path dir = ensure_out_dir(cfg);
  adv::write_idx_images((dir / "adv_images.idx").string(), adv_images);
  adv::write_idx_labels((dir / "adv_labels.idx").string(), data.test.labels);
  std::cerr << "wrote " << n << " " << atk.label() << " examples to " << dir.string() << "\n";
  return 0;
}

int cmd_features(const CommonArgs& args, bool attacked) {
  adv::RunConfig cfg = load_config(args);
  adv::Dataset data = adv::resolve_dataset(cfg);
  adv::Network<float> net = adv::load_weights(args.weights_path);

  const Eigen::Index n = data.test.size();
  adv::Tensor<float> images = data.test.images;
  std::vector<int> labels = data.test.labels;
  std::vector<int> flags(static_cast<std::size_t>(n), 0);
  if (attacked) {
    // clean rows followed by adversarial rows for the same examples
    adv::Shape s = data.test.images.shape;
    s[0] = 2 * n;
    adv::Tensor<float> both(s);
    const Eigen::Index per = adv::shape_numel(data.input_shape());
    both.data.head(n * per) = data.test.images.data;
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    const Eigen::Index bs = 250;
    std::uint64_t batch_index = 0;
    for (Eigen::Index start = 0; start < n; start += bs, ++batch_index) {
      adv::Batch<float> batch = adv::gather_batch(data.test, order, start, std::min(start + bs, n));
      adv::AttackResult<float> res = adv::run_attack(net, batch, cfg.train.attack, batch_index);
      both.data.segment((n + start) * per, batch.size() * per) = res.adversarial.data;
    }
    images = std::move(both);
    labels.insert(labels.end(), data.test.labels.begin(), data.test.labels.end());
    flags.insert(flags.end(), static_cast<std::size_t>(n), 1);
  }
  const fs::path dir = ensure_out_dir(cfg);
  adv::dump_features(net, images, labels, flags, (dir / "features.csv").string());
  std::cerr << "wrote features for " << images.shape[0] << " rows\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial training laboratory"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, sweep_args, attack_args, feat_args;
  bool dry_run = false, attacked = false;
  std::string sweep_kind_flag;

  CLI::App* train_cmd = app.add_subcommand("train", "train a classifier per the config regime");
  add_common(train_cmd, train_args, false);
  train_cmd->add_flag("--dry-run", dry_run, "print resolved config and op-count forecast, then exit");

  CLI::App* eval_cmd = app.add_subcommand("eval", "accuracy matrix over the configured attacks");
  add_common(eval_cmd, eval_args, true);

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "rho-ratio diagnostic sweeps");
  add_common(sweep_cmd, sweep_args, true);
  sweep_cmd->add_option("--kind", sweep_kind_flag, "per_step or intermediate");

  CLI::App* attack_cmd = app.add_subcommand("attack", "dump adversarial images for the eval split");
  add_common(attack_cmd, attack_args, true);

  CLI::App* feat_cmd = app.add_subcommand("features", "dump penultimate-layer activations to CSV");
  add_common(feat_cmd, feat_args, true);
  feat_cmd->add_flag("--attacked", attacked, "append adversarial rows generated with config attack");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? 2 : 0;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_args, dry_run);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_args, sweep_kind_flag);
    if (attack_cmd->parsed()) return cmd_attack(attack_args);
    if (feat_cmd->parsed()) return cmd_features(feat_args, attacked);
  } catch (const adv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
