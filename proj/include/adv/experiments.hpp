#pragma once

#include <string>
#include <vector>

#include "adv/attack.hpp"
#include "adv/dataset.hpp"
#include "adv/network.hpp"

namespace adv {

// One diagnostic sweep: error rate and its rho normalization per grid point.
struct RhoCurve {
  std::string sweep_kind;        // per_step | intermediate
  std::string classifier_label;  // caller-provided tag for the weights
  std::string attack_label;
  std::vector<double> xs;  // n1 = n2 grid, or iteration index
  std::vector<double> error_rates;
  std::vector<double> rhos;
};

// error_current / error_max; the normalizer must be positive.
double rho_ratio(double error_current, double error_max);

// BIM(n,n) against frozen weights for each n in the ascending grid; rho is
// normalized by the final grid point (the same measured value, not a rerun).
RhoCurve sweep_per_step(const Network<float>& net, const DataSplit& eval, float epsilon,
                        const std::vector<int>& n_grid, std::uint64_t seed,
                        const std::string& classifier_label, int workers = 1,
                        Index batch_size = 250);

// One BIM(n1,n2) generation recording every intermediate step; error rate is
// evaluated at each iteration i in [0, n2], with i = 0 the original examples.
RhoCurve sweep_intermediate(const Network<float>& net, const DataSplit& eval, float epsilon, int n1,
                            int n2, std::uint64_t seed, const std::string& classifier_label,
                            int workers = 1, Index batch_size = 250);

struct EvalRow {
  std::string label;  // "Original" or the attack's Name(n1,n2) label
  double accuracy = 0;
};

// Clean row plus one row per attack config; deterministic for fixed seeds
// regardless of worker count.
std::vector<EvalRow> eval_matrix(const Network<float>& net, const DataSplit& eval,
                                 const std::vector<AttackConfig>& attacks, int workers = 1,
                                 Index batch_size = 250);

// Accuracy under one attack (or clean when attack is null), sharded by batch.
double robust_accuracy(const Network<float>& net, const DataSplit& eval, const AttackConfig* attack,
                       int workers = 1, Index batch_size = 250);

// Penultimate-layer activations (input to the final dense layer) as CSV:
// one row per example, d feature columns plus label and is_adv columns.
void dump_features(const Network<float>& net, const Tensor<float>& images,
                   const std::vector<int>& labels, const std::vector<int>& adv_flags,
                   const std::string& path);

std::vector<std::vector<std::string>> rho_curve_rows(const RhoCurve& c);
extern const std::vector<std::string> kRhoCurveHeader;

}  // namespace adv
