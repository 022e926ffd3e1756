#include "adv/trainer.hpp"

#include <chrono>
#include <cmath>

#include "adv/errors.hpp"
#include "adv/rng.hpp"

namespace adv {

using Clock = std::chrono::steady_clock;

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Vanilla: return "vanilla";
    case Regime::FgsmAdv: return "fgsm_adv";
    case Regime::IterAdv: return "iter_adv";
    case Regime::Atda: return "atda";
    case Regime::FreeAdv: return "free_adv";
    case Regime::SimAdv: return "sim_adv";
  }
  return "?";
}

Regime regime_from_string(const std::string& s) {
  if (s == "vanilla") return Regime::Vanilla;
  if (s == "fgsm_adv") return Regime::FgsmAdv;
  if (s == "iter_adv") return Regime::IterAdv;
  if (s == "atda") return Regime::Atda;
  if (s == "free_adv") return Regime::FreeAdv;
  if (s == "sim_adv") return Regime::SimAdv;
  throw ConfigError("regime: unknown value '" + s +
                    "' (expected vanilla|fgsm_adv|iter_adv|atda|free_adv|sim_adv)");
}

void TrainConfig::validate(bool attack_required) const {
  if (epochs < 0) throw ConfigError("epochs: must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (!(lambda_da >= 0.0f)) throw ConfigError("lambda: must be >= 0");
  if (!(clean_adv_mix >= 0.0f && clean_adv_mix <= 1.0f))
    throw ConfigError("clean_adv_mix: must be in [0,1]");
  if (!(learning_rate > 0.0f)) throw ConfigError("optimizer.learning_rate: must be > 0");
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("optimizer.momentum: must be in [0,1)");
  if (replay_m < 1) throw ConfigError("m: must be >= 1");
  if (regime == Regime::FreeAdv && epochs % replay_m != 0)
    throw ConfigError("epochs: must be divisible by m=" + std::to_string(replay_m) +
                      " for free_adv (total passes preserved)");
  if (regime == Regime::FgsmAdv && attack.iterative())
    throw ConfigError("attack.kind: fgsm_adv trains with a single-step kind (fgsm or rfgsm)");
  if (regime != Regime::Vanilla && attack_required) attack.validate();
}

std::uint64_t TrainConfig::batches_per_epoch(Index train_size) const {
  if (train_size < 1) return 0;
  return static_cast<std::uint64_t>((train_size + batch_size - 1) / batch_size);
}

std::uint64_t TrainConfig::forecast_input_grad_evals(Index train_size) const {
  const std::uint64_t b = batches_per_epoch(train_size);
  const std::uint64_t e = static_cast<std::uint64_t>(epochs);
  switch (regime) {
    case Regime::Vanilla: return 0;
    case Regime::FgsmAdv:
    case Regime::Atda:
    case Regime::SimAdv: return e * b;
    case Regime::IterAdv: return e * b * (attack.iterative() ? std::uint64_t(attack.n2) : 1u);
    case Regime::FreeAdv: return e * b;  // (epochs/m) outer epochs, m evals per batch
  }
  return 0;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json per_epoch = nlohmann::json::array();
  for (const EpochStats& e : epochs) {
    nlohmann::json j{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"wall_ms", e.wall_ms}};
    if (e.clean_accuracy >= 0) j["clean_accuracy"] = e.clean_accuracy;
    per_epoch.push_back(std::move(j));
  }
  nlohmann::json j{{"epochs", per_epoch},
                   {"input_grad_evals", input_grad_evals},
                   {"param_updates", param_updates},
                   {"wall_seconds", wall_seconds}};
  if (!perturbation_setting.empty()) j["perturbation_setting"] = perturbation_setting;
  if (!weights_path.empty()) j["weights"] = weights_path;
  return j;
}

namespace {

struct RunContext {
  const TrainConfig& cfg;
  const Dataset& data;
  SgdState<float> opt;
  std::uint64_t param_updates = 0;
  std::uint64_t grad_evals_at_start = 0;

  explicit RunContext(Network<float>& net, const TrainConfig& cfg_, const Dataset& data_)
      : cfg(cfg_), data(data_), opt(make_sgd_state(net, cfg_.learning_rate, cfg_.momentum)) {
    grad_evals_at_start = input_grad_eval_count().load();
  }
};

std::vector<std::int64_t> epoch_order(const TrainConfig& cfg, Index n, int epoch) {
  if (!cfg.shuffle) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    return order;
  }
  SplitMix64 rng(derive_stream(cfg.seed, 0xE70C000ULL + static_cast<std::uint64_t>(epoch)));
  return random_permutation(n, rng);
}

// One parameter step on mix*CE(clean) + (1-mix)*CE(adv); returns the loss.
double mixed_step(Network<float>& net, RunContext& ctx, const Batch<float>& clean,
                  const Tensor<float>& adv_images) {
  const float mix = ctx.cfg.clean_adv_mix;
  const float b = static_cast<float>(clean.size());
  Gradients<float> grads = zero_gradients(net);

  ForwardTrace<float> ctr = forward_trace(net, clean.images);
  const float closs = cross_entropy(ctr.acts.back(), clean.labels);
  backprop(net, ctr, cross_entropy_logit_grad(ctr.acts.back(), clean.labels, mix / b), &grads,
           static_cast<Tensor<float>*>(nullptr));

  ForwardTrace<float> atr = forward_trace(net, adv_images);
  const float aloss = cross_entropy(atr.acts.back(), clean.labels);
  backprop(net, atr, cross_entropy_logit_grad(atr.acts.back(), clean.labels, (1.0f - mix) / b), &grads,
           static_cast<Tensor<float>*>(nullptr));

  sgd_step(net, grads, ctx.opt);
  ++ctx.param_updates;
  const double loss = double(mix) * closs + double(1.0f - mix) * aloss;
  if (!std::isfinite(loss)) throw std::runtime_error("training diverged: non-finite loss");
  return loss;
}

TrainReport finish(Network<float>& net, RunContext& ctx, TrainReport report, Clock::time_point t0) {
  report.input_grad_evals = input_grad_eval_count().load() - ctx.grad_evals_at_start;
  report.param_updates = ctx.param_updates;
  report.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  (void)net;
  return report;
}

EpochStats epoch_stats(Network<float>& net, const RunContext& ctx, int epoch, double loss_sum,
                       std::uint64_t batches, Clock::time_point et0) {
  EpochStats s;
  s.epoch = epoch;
  s.mean_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
  if (ctx.cfg.eval_each_epoch && ctx.data.test.size() > 0)
    s.clean_accuracy = accuracy(net, ctx.data.test.images, ctx.data.test.labels);
  s.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - et0).count();
  return s;
}

}  // namespace

TrainReport train_vanilla(Network<float>& net, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate(false);
  RunContext ctx(net, cfg, data);
  TrainReport report;
  const Index n = data.train.size();
  const auto t0 = Clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto et0 = Clock::now();
    const std::vector<std::int64_t> order = epoch_order(cfg, n, epoch);
    double loss_sum = 0;
    std::uint64_t batches = 0;
    for (Index start = 0; start < n; start += cfg.batch_size, ++batches) {
      Batch<float> batch = gather_batch(data.train, order, start, std::min<Index>(start + cfg.batch_size, n));
      Gradients<float> grads = zero_gradients(net);
      loss_sum += loss_and_param_gradients(net, batch, grads);
      sgd_step(net, grads, ctx.opt);
      ++ctx.param_updates;
    }
    report.epochs.push_back(epoch_stats(net, ctx, epoch, loss_sum, batches, et0));
  }
  return finish(net, ctx, std::move(report), t0);
}

TrainReport train_iter_adv(Network<float>& net, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  RunContext ctx(net, cfg, data);
  TrainReport report;
  const Index n = data.train.size();
  const std::uint64_t bpe = cfg.batches_per_epoch(n);
  const auto t0 = Clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto et0 = Clock::now();
    const std::vector<std::int64_t> order = epoch_order(cfg, n, epoch);
    double loss_sum = 0;
    std::uint64_t batches = 0;
    for (Index start = 0; start < n; start += cfg.batch_size, ++batches) {
      Batch<float> batch = gather_batch(data.train, order, start, std::min<Index>(start + cfg.batch_size, n));
      const std::uint64_t batch_index = std::uint64_t(epoch) * bpe + batches;
      AttackResult<float> adv = run_attack(net, batch, cfg.attack, batch_index);
      loss_sum += mixed_step(net, ctx, batch, adv.adversarial);
    }
    report.epochs.push_back(epoch_stats(net, ctx, epoch, loss_sum, batches, et0));
  }
  return finish(net, ctx, std::move(report), t0);
}

TrainReport train_atda(Network<float>& net, const Dataset& data, const TrainConfig& cfg,
                       CenterSet<float>* centers_out) {
  cfg.validate();
  RunContext ctx(net, cfg, data);
  CenterSet<float> centers = CenterSet<float>::uniform_init(net.class_count, cfg.center_beta);
  TrainReport report;
  const Index n = data.train.size();
  const std::uint64_t bpe = cfg.batches_per_epoch(n);
  const float mix = cfg.clean_adv_mix;
  const auto t0 = Clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto et0 = Clock::now();
    const std::vector<std::int64_t> order = epoch_order(cfg, n, epoch);
    double loss_sum = 0;
    std::uint64_t batches = 0;
    for (Index start = 0; start < n; start += cfg.batch_size, ++batches) {
      Batch<float> batch = gather_batch(data.train, order, start, std::min<Index>(start + cfg.batch_size, n));
      const float b = static_cast<float>(batch.size());
      const std::uint64_t batch_index = std::uint64_t(epoch) * bpe + batches;
      AttackResult<float> adv = run_attack(net, batch, cfg.attack, batch_index);

      Gradients<float> grads = zero_gradients(net);
      ForwardTrace<float> ctr = forward_trace(net, batch.images);
      ForwardTrace<float> atr = forward_trace(net, adv.adversarial);
      const Tensor<float>& clean_logits = ctr.acts.back();
      const Tensor<float>& adv_logits = atr.acts.back();
      Tensor<float> d_clean = cross_entropy_logit_grad(clean_logits, batch.labels, mix / b);
      Tensor<float> d_adv = cross_entropy_logit_grad(adv_logits, batch.labels, (1.0f - mix) / b);
      double loss = double(mix) * cross_entropy(clean_logits, batch.labels) +
                    double(1.0f - mix) * cross_entropy(adv_logits, batch.labels);

      // pooled predictions drive the domain-adaptation terms and the centers
      Tensor<float> pc = softmax(clean_logits);
      Tensor<float> pa = softmax(adv_logits);
      const Index bi = batch.size();
      Tensor<float> pooled({2 * bi, Index(net.class_count)});
      pooled.data.head(pc.numel()) = pc.data;
      pooled.data.tail(pa.numel()) = pa.data;
      std::vector<int> pooled_labels(batch.labels);
      pooled_labels.insert(pooled_labels.end(), batch.labels.begin(), batch.labels.end());

      if (cfg.lambda_da > 0.0f) {
        Tensor<float> dpc(pc.shape), dpa(pa.shape);
        uda_loss_grad(pc, pa, dpc, dpa);
        Tensor<float> dsda = sda_loss_grad(pooled, pooled_labels, centers);
        dpc.data += dsda.data.head(pc.numel());
        dpa.data += dsda.data.tail(pa.numel());
        dpc.data *= cfg.lambda_da;
        dpa.data *= cfg.lambda_da;
        d_clean.data += softmax_backward(pc, dpc).data;
        d_adv.data += softmax_backward(pa, dpa).data;
        loss += double(cfg.lambda_da) *
                (uda_loss(pc, pa) + sda_loss(pooled, pooled_labels, centers));
      }

      backprop(net, ctr, d_clean, &grads, static_cast<Tensor<float>*>(nullptr));
      backprop(net, atr, d_adv, &grads, static_cast<Tensor<float>*>(nullptr));
      sgd_step(net, grads, ctx.opt);
      ++ctx.param_updates;
      if (!std::isfinite(loss)) throw std::runtime_error("training diverged: non-finite loss");
      loss_sum += loss;

      update_centers(centers, pooled, pooled_labels);
    }
    report.epochs.push_back(epoch_stats(net, ctx, epoch, loss_sum, batches, et0));
  }
  if (centers_out) *centers_out = std::move(centers);
  return finish(net, ctx, std::move(report), t0);
}

TrainReport train_free(Network<float>& net, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  RunContext ctx(net, cfg, data);
  TrainReport report;
  const Index n = data.train.size();
  const int outer_epochs = cfg.epochs / cfg.replay_m;
  const float eps = cfg.attack.epsilon;
  const auto t0 = Clock::now();
  for (int epoch = 0; epoch < outer_epochs; ++epoch) {
    const auto et0 = Clock::now();
    const std::vector<std::int64_t> order = epoch_order(cfg, n, epoch);
    double loss_sum = 0;
    std::uint64_t batches = 0;
    for (Index start = 0; start < n; start += cfg.batch_size, ++batches) {
      Batch<float> batch = gather_batch(data.train, order, start, std::min<Index>(start + cfg.batch_size, n));
      // carried perturbation: replay r+1 starts from replay r's output and
      // applies a full-eps sign step with ball projection
      Tensor<float> carried = batch.images;
      for (int r = 0; r < cfg.replay_m; ++r) {
        carried = iter_step(net, carried, batch.images, batch.labels, eps, 1);
        loss_sum += mixed_step(net, ctx, batch, carried);
      }
    }
    report.epochs.push_back(
        epoch_stats(net, ctx, epoch, loss_sum, batches * std::uint64_t(cfg.replay_m), et0));
  }
  return finish(net, ctx, std::move(report), t0);
}

TrainReport train_sim(Network<float>& net, const Dataset& data, const TrainConfig& cfg,
                      SimState* state_out) {
  cfg.validate();
  RunContext ctx(net, cfg, data);
  TrainReport report;
  report.perturbation_setting = cfg.attack.n1 < cfg.attack.n2 ? "over" : "under";
  SimState state;
  const Index n = data.train.size();
  const Index per = shape_numel(data.input_shape());
  const float eps = cfg.attack.epsilon;
  const auto t0 = Clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto et0 = Clock::now();
    const std::vector<std::int64_t> order = epoch_order(cfg, n, epoch);
    double loss_sum = 0;
    std::uint64_t batches = 0;
    const bool from_originals = state.phase == 0;
    for (Index start = 0; start < n; start += cfg.batch_size, ++batches) {
      Batch<float> batch = gather_batch(data.train, order, start, std::min<Index>(start + cfg.batch_size, n));
      Tensor<float> gen_input = batch.images;
      if (!from_originals) {
        for (Index i = 0; i < batch.size(); ++i) {
          auto it = state.adv_images.find(batch.ids[static_cast<std::size_t>(i)]);
          if (it == state.adv_images.end())
            throw std::runtime_error("sim state missing sample " +
                                     std::to_string(batch.ids[static_cast<std::size_t>(i)]));
          gen_input.data.segment(i * per, per) = it->second;
        }
      }
      Tensor<float> adv = iter_step(net, gen_input, batch.images, batch.labels, eps, cfg.attack.n1);
      for (Index i = 0; i < batch.size(); ++i)
        state.adv_images[batch.ids[static_cast<std::size_t>(i)]] = adv.data.segment(i * per, per);
      loss_sum += mixed_step(net, ctx, batch, adv);
    }
    state.phase += 1;
    if (state.phase == cfg.attack.n2) state.phase = 0;
    report.epochs.push_back(epoch_stats(net, ctx, epoch, loss_sum, batches, et0));
  }
  if (state_out) *state_out = std::move(state);
  return finish(net, ctx, std::move(report), t0);
}

TrainReport train(Network<float>& net, const Dataset& data, const TrainConfig& cfg) {
  switch (cfg.regime) {
    case Regime::Vanilla: return train_vanilla(net, data, cfg);
    case Regime::FgsmAdv:
    case Regime::IterAdv: return train_iter_adv(net, data, cfg);
    case Regime::Atda: return train_atda(net, data, cfg);
    case Regime::FreeAdv: return train_free(net, data, cfg);
    case Regime::SimAdv: return train_sim(net, data, cfg);
  }
  throw ConfigError("train: unknown regime");
}

}  // namespace adv
