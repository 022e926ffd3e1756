#include "adv/run_config.hpp"

#include <sstream>

#include "adv/errors.hpp"

namespace adv {

using nlohmann::json;

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback, std::vector<std::string>& errors,
         const std::string& prefix) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    errors.push_back(prefix + key + ": wrong type");
    return fallback;
  }
}

}  // namespace

AttackConfig attack_from_json(const json& j, const std::string& field,
                              std::vector<std::string>& errors) {
  AttackConfig cfg;
  if (!j.is_object()) {
    errors.push_back(field + ": must be an object");
    return cfg;
  }
  const std::string prefix = field + ".";
  std::string kind = get_or<std::string>(j, "kind", "fgsm", errors, prefix);
  try {
    cfg.kind = attack_kind_from_string(kind);
  } catch (const ConfigError& e) {
    errors.push_back(field + "." + e.what());
  }
  cfg.epsilon = get_or<float>(j, "epsilon", cfg.epsilon, errors, prefix);
  cfg.n1 = get_or<int>(j, "n1", cfg.iterative() ? 10 : 1, errors, prefix);
  cfg.n2 = get_or<int>(j, "n2", cfg.iterative() ? cfg.n1 : 1, errors, prefix);
  cfg.seed = get_or<std::uint64_t>(j, "seed", 0, errors, prefix);
  cfg.init_scale = get_or<float>(j, "init_scale", 1.0f, errors, prefix);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    errors.push_back(field + ": " + e.what());
  }
  return cfg;
}

RunConfig parse_run_config(const json& j) {
  std::vector<std::string> errors;
  RunConfig cfg;
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");

  if (j.contains("regime")) {
    try {
      cfg.train.regime = regime_from_string(j.at("regime").get<std::string>());
    } catch (const json::exception&) {
      errors.push_back("regime: wrong type");
    } catch (const ConfigError& e) {
      errors.push_back(e.what());
    }
  }
  if (j.contains("attack")) cfg.train.attack = attack_from_json(j.at("attack"), "attack", errors);
  cfg.train.epochs = get_or<int>(j, "epochs", cfg.train.epochs, errors, "");
  cfg.train.batch_size = get_or<int>(j, "batch_size", cfg.train.batch_size, errors, "");
  cfg.train.lambda_da = get_or<float>(j, "lambda", cfg.train.lambda_da, errors, "");
  cfg.train.replay_m = get_or<int>(j, "m", cfg.train.replay_m, errors, "");
  cfg.train.clean_adv_mix = get_or<float>(j, "clean_adv_mix", cfg.train.clean_adv_mix, errors, "");
  cfg.train.seed = get_or<std::uint64_t>(j, "seed", cfg.train.seed, errors, "");
  cfg.train.shuffle = get_or<bool>(j, "shuffle", cfg.train.shuffle, errors, "");
  cfg.train.eval_each_epoch = get_or<bool>(j, "eval_each_epoch", cfg.train.eval_each_epoch, errors, "");
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    cfg.train.learning_rate = get_or<float>(o, "learning_rate", cfg.train.learning_rate, errors, "optimizer.");
    cfg.train.momentum = get_or<float>(o, "momentum", cfg.train.momentum, errors, "optimizer.");
  }
  cfg.train.center_beta = get_or<float>(j, "center_beta", cfg.train.center_beta, errors, "");

  if (j.contains("network")) {
    const json& n = j.at("network");
    cfg.arch = get_or<std::string>(n, "arch", cfg.arch, errors, "network.");
    cfg.hidden = get_or<std::vector<int>>(n, "hidden", cfg.hidden, errors, "network.");
    if (cfg.arch != "lenet_lite" && cfg.arch != "mlp")
      errors.push_back("network.arch: unknown value '" + cfg.arch + "' (expected lenet_lite|mlp)");
    for (int h : cfg.hidden)
      if (h < 1) errors.push_back("network.hidden: widths must be positive");
  }

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    cfg.dataset_kind = get_or<std::string>(d, "kind", cfg.dataset_kind, errors, "dataset.");
    if (cfg.dataset_kind == "mnist" || cfg.dataset_kind == "fmnist") {
      for (const char* key : {"train_images", "train_labels", "test_images", "test_labels"})
        if (!d.contains(key)) errors.push_back(std::string("dataset.") + key + ": required for IDX datasets");
      cfg.train_images = get_or<std::string>(d, "train_images", "", errors, "dataset.");
      cfg.train_labels = get_or<std::string>(d, "train_labels", "", errors, "dataset.");
      cfg.test_images = get_or<std::string>(d, "test_images", "", errors, "dataset.");
      cfg.test_labels = get_or<std::string>(d, "test_labels", "", errors, "dataset.");
    } else if (cfg.dataset_kind == "synth_digits") {
      cfg.synth_train = get_or<Index>(d, "train_count", cfg.synth_train, errors, "dataset.");
      cfg.synth_test = get_or<Index>(d, "test_count", cfg.synth_test, errors, "dataset.");
      if (cfg.synth_train < 1 || cfg.synth_test < 1)
        errors.push_back("dataset.train_count/test_count: must be positive");
    } else if (cfg.dataset_kind == "blobs") {
      cfg.blobs_k = get_or<int>(d, "k", cfg.blobs_k, errors, "dataset.");
      cfg.blobs_per_class = get_or<int>(d, "per_class", cfg.blobs_per_class, errors, "dataset.");
      cfg.blobs_dim = get_or<int>(d, "dim", cfg.blobs_dim, errors, "dataset.");
      cfg.blobs_spread = get_or<float>(d, "spread", cfg.blobs_spread, errors, "dataset.");
      if (cfg.blobs_k < 2) errors.push_back("dataset.k: must be >= 2");
    } else {
      errors.push_back("dataset.kind: unknown value '" + cfg.dataset_kind +
                       "' (expected mnist|fmnist|synth_digits|blobs)");
    }
    cfg.data_seed = get_or<std::uint64_t>(d, "seed", cfg.data_seed, errors, "dataset.");
    cfg.train_subset = get_or<Index>(d, "train_subset", cfg.train_subset, errors, "dataset.");
    cfg.eval_subset = get_or<Index>(d, "eval_subset", cfg.eval_subset, errors, "dataset.");
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    if (e.contains("attacks")) {
      if (!e.at("attacks").is_array()) {
        errors.push_back("eval.attacks: must be an array");
      } else {
        int i = 0;
        for (const json& a : e.at("attacks"))
          cfg.eval_attacks.push_back(attack_from_json(a, "eval.attacks[" + std::to_string(i++) + "]", errors));
      }
    }
  }

  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    cfg.sweep_kind = get_or<std::string>(s, "kind", cfg.sweep_kind, errors, "sweep.");
    if (cfg.sweep_kind != "per_step" && cfg.sweep_kind != "intermediate")
      errors.push_back("sweep.kind: unknown value '" + cfg.sweep_kind +
                       "' (expected per_step|intermediate)");
    cfg.sweep_grid = get_or<std::vector<int>>(s, "grid", cfg.sweep_grid, errors, "sweep.");
    cfg.sweep_n1 = get_or<int>(s, "n1", cfg.sweep_n1, errors, "sweep.");
    cfg.sweep_n2 = get_or<int>(s, "n2", cfg.sweep_n2, errors, "sweep.");
    if (cfg.sweep_grid.empty()) errors.push_back("sweep.grid: must be nonempty");
    for (std::size_t i = 1; i < cfg.sweep_grid.size(); ++i)
      if (cfg.sweep_grid[i] < cfg.sweep_grid[i - 1]) {
        errors.push_back("sweep.grid: must be ascending");
        break;
      }
    if (cfg.sweep_n1 < 1 || cfg.sweep_n2 < 1) errors.push_back("sweep.n1/n2: must be >= 1");
  }

  cfg.out_dir = get_or<std::string>(j, "out_dir", cfg.out_dir, errors, "");
  cfg.workers = get_or<int>(j, "workers", cfg.workers, errors, "");
  if (cfg.workers < 1) errors.push_back("workers: must be >= 1");

  try {
    cfg.train.validate();
  } catch (const ConfigError& e) {
    errors.push_back(e.what());
  }

  if (!errors.empty()) {
    std::ostringstream os;
    os << "invalid config (" << errors.size() << " problem" << (errors.size() > 1 ? "s" : "") << "):";
    for (const std::string& e : errors) os << "\n  - " << e;
    throw ConfigError(os.str());
  }
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json attack{{"kind", attack_kind_name(cfg.train.attack.kind)},
              {"epsilon", cfg.train.attack.epsilon},
              {"n1", cfg.train.attack.n1},
              {"n2", cfg.train.attack.n2},
              {"seed", cfg.train.attack.seed},
              {"init_scale", cfg.train.attack.init_scale}};
  json dataset{{"kind", cfg.dataset_kind},
               {"seed", cfg.data_seed},
               {"train_subset", cfg.train_subset},
               {"eval_subset", cfg.eval_subset}};
  if (cfg.dataset_kind == "mnist" || cfg.dataset_kind == "fmnist") {
    dataset["train_images"] = cfg.train_images;
    dataset["train_labels"] = cfg.train_labels;
    dataset["test_images"] = cfg.test_images;
    dataset["test_labels"] = cfg.test_labels;
  } else if (cfg.dataset_kind == "synth_digits") {
    dataset["train_count"] = cfg.synth_train;
    dataset["test_count"] = cfg.synth_test;
  } else if (cfg.dataset_kind == "blobs") {
    dataset["k"] = cfg.blobs_k;
    dataset["per_class"] = cfg.blobs_per_class;
    dataset["dim"] = cfg.blobs_dim;
    dataset["spread"] = cfg.blobs_spread;
  }
  json eval_attacks = json::array();
  for (const AttackConfig& a : cfg.eval_attacks)
    eval_attacks.push_back(json{{"kind", attack_kind_name(a.kind)},
                                {"epsilon", a.epsilon},
                                {"n1", a.n1},
                                {"n2", a.n2},
                                {"seed", a.seed},
                                {"init_scale", a.init_scale}});
  return json{{"regime", regime_name(cfg.train.regime)},
              {"attack", attack},
              {"epochs", cfg.train.epochs},
              {"batch_size", cfg.train.batch_size},
              {"lambda", cfg.train.lambda_da},
              {"m", cfg.train.replay_m},
              {"clean_adv_mix", cfg.train.clean_adv_mix},
              {"seed", cfg.train.seed},
              {"optimizer", {{"learning_rate", cfg.train.learning_rate}, {"momentum", cfg.train.momentum}}},
              {"center_beta", cfg.train.center_beta},
              {"shuffle", cfg.train.shuffle},
              {"eval_each_epoch", cfg.train.eval_each_epoch},
              {"network", {{"arch", cfg.arch}, {"hidden", cfg.hidden}}},
              {"dataset", dataset},
              {"eval", {{"attacks", eval_attacks}}},
              {"sweep", {{"kind", cfg.sweep_kind}, {"grid", cfg.sweep_grid}, {"n1", cfg.sweep_n1}, {"n2", cfg.sweep_n2}}},
              {"out_dir", cfg.out_dir},
              {"workers", cfg.workers}};
}

Dataset resolve_dataset(const RunConfig& cfg) {
  Dataset data;
  if (cfg.dataset_kind == "mnist" || cfg.dataset_kind == "fmnist") {
    data = load_idx_dataset(cfg.train_images, cfg.train_labels, cfg.test_images, cfg.test_labels,
                            cfg.dataset_kind);
  } else if (cfg.dataset_kind == "synth_digits") {
    data = synth_digits(cfg.synth_train, cfg.synth_test, cfg.data_seed);
  } else if (cfg.dataset_kind == "blobs") {
    data = synth_blobs(cfg.blobs_k, cfg.blobs_per_class, cfg.blobs_dim, cfg.blobs_spread, cfg.data_seed);
  } else {
    throw ConfigError("dataset.kind: unknown value '" + cfg.dataset_kind + "'");
  }
  if (cfg.train_subset > 0 || cfg.eval_subset > 0) {
    const Index train_n = cfg.train_subset > 0 ? cfg.train_subset : data.train.size();
    const Index test_n = cfg.eval_subset > 0 ? cfg.eval_subset : data.test.size();
    data = take(data, std::min(train_n, data.train.size()), std::min(test_n, data.test.size()));
  }
  return data;
}

Network<float> build_net_for(const RunConfig& cfg, const Dataset& data) {
  if (cfg.arch == "lenet_lite")
    return make_lenet_lite<float>(data.input_shape(), data.class_count, cfg.train.seed);
  if (cfg.arch == "mlp")
    return make_mlp<float>(data.input_shape(), data.class_count, cfg.hidden, cfg.train.seed);
  throw ConfigError("network.arch: unknown value '" + cfg.arch + "'");
}

}  // namespace adv
