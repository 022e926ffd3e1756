#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "adv/atda.hpp"
#include "adv/attack.hpp"
#include "adv/dataset.hpp"
#include "adv/network.hpp"

namespace adv {

enum class Regime { Vanilla, FgsmAdv, IterAdv, Atda, FreeAdv, SimAdv };

const char* regime_name(Regime r);
Regime regime_from_string(const std::string& s);

struct TrainConfig {
  Regime regime = Regime::Vanilla;
  AttackConfig attack;
  int epochs = 15;
  int batch_size = 100;
  float lambda_da = 1.0f / 3.0f;  // weight of the domain-adaptation losses (atda)
  int replay_m = 1;               // free_adv minibatch replay factor
  float clean_adv_mix = 0.5f;     // weight of the clean CE term; 1-mix goes to the adversarial term
  std::uint64_t seed = 0;
  float learning_rate = 0.05f;
  float momentum = 0.9f;
  float center_beta = 0.1f;
  bool shuffle = true;
  bool eval_each_epoch = true;

  void validate(bool attack_required = true) const;
  std::uint64_t batches_per_epoch(Index train_size) const;
  // Exact forecast of input-gradient evaluations; the instrumented run must
  // match it to the count.
  std::uint64_t forecast_input_grad_evals(Index train_size) const;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0;
  double clean_accuracy = -1;  // -1 when per-epoch evaluation is disabled
  double wall_ms = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::uint64_t input_grad_evals = 0;
  std::uint64_t param_updates = 0;
  double wall_seconds = 0;
  std::string perturbation_setting;  // sim_adv only: "over" (n1 < n2) or "under"
  std::string weights_path;          // filled by the CLI after saving

  nlohmann::json to_json() const;
};

// Per-sample adversarial images carried across epochs by the epoch-iterative
// trainer, keyed by stable sample id, plus the epoch-phase counter.
struct SimState {
  std::unordered_map<std::int64_t, ArrayX<float>> adv_images;
  int phase = 0;  // in [0, attack.n2); 0 right after a reset epoch
};

TrainReport train_vanilla(Network<float>& net, const Dataset& data, const TrainConfig& cfg);
TrainReport train_iter_adv(Network<float>& net, const Dataset& data, const TrainConfig& cfg);
TrainReport train_atda(Network<float>& net, const Dataset& data, const TrainConfig& cfg,
                       CenterSet<float>* centers_out = nullptr);
TrainReport train_free(Network<float>& net, const Dataset& data, const TrainConfig& cfg);
TrainReport train_sim(Network<float>& net, const Dataset& data, const TrainConfig& cfg,
                      SimState* state_out = nullptr);

TrainReport train(Network<float>& net, const Dataset& data, const TrainConfig& cfg);

}  // namespace adv
