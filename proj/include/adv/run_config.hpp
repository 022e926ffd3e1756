#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "adv/dataset.hpp"
#include "adv/network.hpp"
#include "adv/trainer.hpp"

namespace adv {

// Everything a CLI run needs, parsed and validated before any compute starts.
struct RunConfig {
  TrainConfig train;

  std::string arch = "lenet_lite";  // lenet_lite | mlp
  std::vector<int> hidden = {64};   // mlp widths

  // dataset
  std::string dataset_kind = "synth_digits";  // mnist | fmnist | synth_digits | blobs
  std::string train_images, train_labels, test_images, test_labels;
  Index train_subset = 0;  // 0 = all
  Index eval_subset = 2000;
  Index synth_train = 10000, synth_test = 2000;
  std::uint64_t data_seed = 1;
  int blobs_k = 4, blobs_per_class = 200, blobs_dim = 8;
  float blobs_spread = 0.05f;

  std::vector<AttackConfig> eval_attacks;

  std::string sweep_kind = "per_step";  // per_step | intermediate
  std::vector<int> sweep_grid = {1, 2, 3, 5, 10, 20, 30};
  int sweep_n1 = 10, sweep_n2 = 30;

  std::string out_dir = ".";
  int workers = 1;
};

AttackConfig attack_from_json(const nlohmann::json& j, const std::string& field,
                              std::vector<std::string>& errors);

// Parses and fully validates; throws ConfigError listing every problem found.
RunConfig parse_run_config(const nlohmann::json& j);

nlohmann::json run_config_to_json(const RunConfig& cfg);

Dataset resolve_dataset(const RunConfig& cfg);
Network<float> build_net_for(const RunConfig& cfg, const Dataset& data);

}  // namespace adv
