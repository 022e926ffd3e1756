#pragma once

// Central-difference gradient oracle. Test-only: drives the network through
// its forward pass alone, never through the analytic backward path it checks.

#include <cstdint>
#include <string>
#include <vector>

#include "adv/loss.hpp"
#include "adv/network.hpp"

namespace fdtest {

using adv::Index;

struct FdOptions {
  double h = 1e-3;
  double tol = 1e-4;
  double guard = 1e-8;
  // A central difference across a relu/maxpool kink measures a subgradient
  // average, not the derivative; crossings are detected via the activation
  // pattern and skipped when enabled.
  bool skip_kinks = false;
  // Where |analytic - numeric| is within the oracle's own truncation error
  // (estimated by Richardson h vs h/2), the coordinate is unverifiable at this
  // h; skipped and counted when enabled.
  bool skip_unresolved = false;
};

struct FdReport {
  double max_rel = 0.0;
  std::int64_t checked = 0;
  std::int64_t kink_skipped = 0;
  std::int64_t unresolved = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
  std::string worst_where;

  bool pass(double tol) const { return checked > 0 && max_rel < tol; }
};

// Relu sign bits and pool argmax choices, folded into one FNV-1a hash.
inline std::uint64_t pattern_hash(const adv::Network<double>& net,
                                  const adv::ForwardTrace<double>& tr) {
  std::uint64_t h = 1469598103934665603ULL;
  auto fold = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ULL;
  };
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    if (net.layers[li].desc.kind == adv::LayerKind::Relu) {
      const auto& x = tr.acts[li];
      for (Index i = 0; i < x.numel(); ++i) fold(x.data[i] > 0.0 ? 2 * i + 1 : 2 * i);
    } else if (net.layers[li].desc.kind == adv::LayerKind::MaxPool2d) {
      for (Index s : tr.pool_src[li]) fold(static_cast<std::uint64_t>(s) * 0x9E3779B97F4A7C15ULL);
    }
  }
  return h;
}

struct LossEval {
  double loss;
  std::uint64_t pattern;
};

inline LossEval eval_ce(const adv::Network<double>& net, const adv::Tensor<double>& images,
                        const std::vector<int>& labels, bool mean) {
  adv::ForwardTrace<double> tr = adv::forward_trace(net, images);
  double loss = adv::cross_entropy(tr.acts.back(), labels);
  if (!mean) loss *= static_cast<double>(images.shape[0]);
  return {loss, pattern_hash(net, tr)};
}

namespace detail {

// Shared comparison for one coordinate; `value` is the perturbed storage slot.
template <typename EvalFn>
void check_coordinate(double& value, double analytic, const EvalFn& eval, std::uint64_t base_pattern,
                      const FdOptions& opt, const std::string& where, FdReport& rep) {
  const double saved = value;
  value = saved + opt.h;
  LossEval plus = eval();
  value = saved - opt.h;
  LossEval minus = eval();
  value = saved;

  const double numeric = (plus.loss - minus.loss) / (2.0 * opt.h);
  const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.guard});
  const double rel = std::abs(analytic - numeric) / denom;

  if (rel >= opt.tol) {
    if (opt.skip_kinks && (plus.pattern != base_pattern || minus.pattern != base_pattern)) {
      ++rep.kink_skipped;
      return;
    }
    if (opt.skip_unresolved) {
      const double h2 = opt.h / 2.0;
      value = saved + h2;
      LossEval p2 = eval();
      value = saved - h2;
      LossEval m2 = eval();
      value = saved;
      const double numeric_h2 = (p2.loss - m2.loss) / (2.0 * h2);
      const double trunc_est = std::abs(numeric - numeric_h2) * (4.0 / 3.0);
      if (std::abs(analytic - numeric) <= 2.0 * trunc_est + opt.guard) {
        ++rep.unresolved;
        return;
      }
    }
  }
  ++rep.checked;
  if (rel > rep.max_rel) {
    rep.max_rel = rel;
    rep.worst_analytic = analytic;
    rep.worst_numeric = numeric;
    rep.worst_where = where;
  }
}

}  // namespace detail

// Check every weight and bias of `net` against central differences of the
// mean cross-entropy.
inline FdReport fd_check_params(adv::Network<double> net, const adv::Batch<double>& batch,
                                const FdOptions& opt = {}) {
  adv::Gradients<double> grads = adv::param_gradients(net, batch);
  FdReport rep;
  const std::uint64_t base = eval_ce(net, batch.images, batch.labels, true).pattern;
  auto eval = [&net, &batch]() { return eval_ce(net, batch.images, batch.labels, true); };
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    if (!net.layers[li].desc.has_params()) continue;
    for (int part = 0; part < 2; ++part) {
      adv::Tensor<double>& param = part == 0 ? net.layers[li].weight : net.layers[li].bias;
      const adv::Tensor<double>& analytic = part == 0 ? grads.weight[li] : grads.bias[li];
      for (Index i = 0; i < param.numel(); ++i) {
        std::string where = "layer " + std::to_string(li) + (part == 0 ? " weight[" : " bias[") +
                            std::to_string(i) + "]";
        detail::check_coordinate(param.data[i], analytic.data[i], eval, base, opt, where, rep);
      }
    }
  }
  return rep;
}

// Check the summed-cross-entropy input gradient pixel by pixel.
inline FdReport fd_check_input(const adv::Network<double>& net, adv::Batch<double> batch,
                               const FdOptions& opt = {}) {
  adv::Tensor<double> analytic = adv::input_gradient(net, batch);
  FdReport rep;
  const std::uint64_t base = eval_ce(net, batch.images, batch.labels, false).pattern;
  auto eval = [&net, &batch]() { return eval_ce(net, batch.images, batch.labels, false); };
  for (Index i = 0; i < batch.images.numel(); ++i) {
    std::string where = "pixel[" + std::to_string(i) + "]";
    detail::check_coordinate(batch.images.data[i], analytic.data[i], eval, base, opt, where, rep);
  }
  return rep;
}

}  // namespace fdtest
