#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adv/errors.hpp"
#include "adv/network.hpp"
#include "adv/rng.hpp"

namespace adv {

enum class AttackKind { Fgsm, Rfgsm, Bim, Madry };

inline const char* attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Rfgsm: return "rfgsm";
    case AttackKind::Bim: return "bim";
    case AttackKind::Madry: return "madry";
  }
  return "?";
}

inline AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "fgsm") return AttackKind::Fgsm;
  if (s == "rfgsm") return AttackKind::Rfgsm;
  if (s == "bim") return AttackKind::Bim;
  if (s == "madry") return AttackKind::Madry;
  throw ConfigError("attack.kind: unknown value '" + s + "' (expected fgsm|rfgsm|bim|madry)");
}

struct AttackConfig {
  AttackKind kind = AttackKind::Fgsm;
  float epsilon = 0.3f;
  int n1 = 1;  // per-step scale: step size is epsilon/n1
  int n2 = 1;  // iteration count
  std::uint64_t seed = 0;
  float init_scale = 1.0f;  // scales the random start; 0 makes madry/rfgsm start deterministic

  bool iterative() const { return kind == AttackKind::Bim || kind == AttackKind::Madry; }

  // "Name(n1,n2)" for the iterative kinds.
  std::string label() const {
    switch (kind) {
      case AttackKind::Fgsm: return "FGSM";
      case AttackKind::Rfgsm: return "R+FGSM";
      case AttackKind::Bim: return "BIM(" + std::to_string(n1) + "," + std::to_string(n2) + ")";
      case AttackKind::Madry: return "Madry(" + std::to_string(n1) + "," + std::to_string(n2) + ")";
    }
    return "?";
  }

  void validate() const {
    if (!(epsilon >= 0.0f) || epsilon > 1.0f)
      throw ConfigError("attack.epsilon: must be in [0,1], got " + std::to_string(epsilon));
    if (n1 < 1) throw ConfigError("attack.n1: must be >= 1");
    if (n2 < 1) throw ConfigError("attack.n2: must be >= 1");
    if (!iterative() && (n1 != 1 || n2 != 1))
      throw ConfigError(std::string("attack.kind ") + attack_kind_name(kind) + " requires n1 = n2 = 1");
  }
};

template <typename Scalar>
struct AttackResult {
  Tensor<Scalar> adversarial;
  std::uint64_t grad_eval_count = 0;
};

// Elementwise min(max(x, lo), hi); in-range values pass through untouched.
template <typename Scalar>
Tensor<Scalar> clip_interval(const Tensor<Scalar>& x, Scalar lo, Scalar hi) {
  if (lo > hi) throw ShapeError("clip_interval: lo > hi");
  return Tensor<Scalar>(x.shape, x.data.max(lo).min(hi));
}

namespace detail {

// Clamp onto the eps-ball of `original` intersected with [0,1].
template <typename Scalar>
void project_ball(Tensor<Scalar>& x, const Tensor<Scalar>& original, Scalar eps) {
  x.data = x.data.max(original.data - eps).min(original.data + eps).max(Scalar(0)).min(Scalar(1));
}

}  // namespace detail

// One projected sign step of size eps/n1 from `current`: the shared kernel
// behind FGSM, BIM, Madry and the epoch-iterative trainer. Consumes exactly
// one input-gradient evaluation.
template <typename Scalar>
Tensor<Scalar> iter_step(const Network<Scalar>& net, const Tensor<Scalar>& current,
                         const Tensor<Scalar>& original, const std::vector<int>& labels, Scalar eps,
                         int n1) {
  if (n1 < 1) throw ConfigError("iter_step: n1 must be >= 1");
  if (linf_dist(current, original) > eps + Scalar(1e-6))
    throw std::invalid_argument("iter_step: current point lies outside the eps-ball of the original");
  Tensor<Scalar> grad = input_gradient(net, Batch<Scalar>{current, labels, {}});
  Tensor<Scalar> next(current.shape,
                      current.data + (eps / static_cast<Scalar>(n1)) * grad.data.sign());
  detail::project_ball(next, original, eps);
  return next;
}

// x~ = clip_[0,1][x + eps*sign(grad)]; realized as a single full-size
// projected step so it is bit-identical to BIM(1,1).
template <typename Scalar>
AttackResult<Scalar> fgsm(const Network<Scalar>& net, const Batch<Scalar>& batch, Scalar eps) {
  return {iter_step(net, batch.images, batch.images, batch.labels, eps, 1), 1};
}

// Random start at eps/2, then one eps/2 gradient step, then ball projection.
template <typename Scalar>
AttackResult<Scalar> rfgsm(const Network<Scalar>& net, const Batch<Scalar>& batch, Scalar eps,
                           std::uint64_t seed, std::uint64_t batch_index = 0, Scalar init_scale = 1) {
  SplitMix64 rng(derive_stream(seed, batch_index));
  Tensor<Scalar> start(batch.images.shape);
  const Scalar half = eps / Scalar(2);
  for (Index i = 0; i < start.numel(); ++i) {
    double u = rng.uniform(-1.0, 1.0);
    Scalar s = u > 0 ? Scalar(1) : (u < 0 ? Scalar(-1) : Scalar(0));
    start.data[i] = batch.images.data[i] + init_scale * half * s;
  }
  start.data = start.data.max(Scalar(0)).min(Scalar(1));
  return {iter_step(net, start, batch.images, batch.labels, eps, 2), 1};
}

// BIM starts at the original, Madry inside the ball; n2 projected steps of
// size eps/n1. Every step's output can be recorded for the sweep harness.
template <typename Scalar>
AttackResult<Scalar> iterative_attack(const Network<Scalar>& net, const Batch<Scalar>& batch,
                                      const AttackConfig& cfg, std::uint64_t batch_index = 0,
                                      std::vector<Tensor<Scalar>>* intermediates = nullptr) {
  cfg.validate();
  if (!cfg.iterative())
    throw ConfigError(std::string("iterative_attack: kind must be bim or madry, got ") +
                      attack_kind_name(cfg.kind));
  Tensor<Scalar> current = batch.images;
  if (cfg.kind == AttackKind::Madry) {
    SplitMix64 rng(derive_stream(cfg.seed, batch_index));
    for (Index i = 0; i < current.numel(); ++i)
      current.data[i] += Scalar(cfg.init_scale) * static_cast<Scalar>(rng.uniform(-double(cfg.epsilon), double(cfg.epsilon)));
    current.data = current.data.max(Scalar(0)).min(Scalar(1));
  }
  for (int it = 0; it < cfg.n2; ++it) {
    current = iter_step(net, current, batch.images, batch.labels, Scalar(cfg.epsilon), cfg.n1);
    if (intermediates) intermediates->push_back(current);
  }
  return {std::move(current), static_cast<std::uint64_t>(cfg.n2)};
}

template <typename Scalar>
AttackResult<Scalar> run_attack(const Network<Scalar>& net, const Batch<Scalar>& batch,
                                const AttackConfig& cfg, std::uint64_t batch_index = 0) {
  cfg.validate();
  switch (cfg.kind) {
    case AttackKind::Fgsm: return fgsm(net, batch, Scalar(cfg.epsilon));
    case AttackKind::Rfgsm:
      return rfgsm(net, batch, Scalar(cfg.epsilon), cfg.seed, batch_index, Scalar(cfg.init_scale));
    case AttackKind::Bim:
    case AttackKind::Madry: return iterative_attack(net, batch, cfg, batch_index);
  }
  throw ConfigError("run_attack: unknown attack kind");
}

}  // namespace adv
