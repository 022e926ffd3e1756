#include "adv/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include "adv/errors.hpp"
#include "adv/serialize.hpp"

namespace adv {

double rho_ratio(double error_current, double error_max) {
  if (!(error_max > 0.0))
    throw std::domain_error("rho_ratio: error rate at the maximum point is zero; rho is undefined");
  return error_current / error_max;
}

namespace {

Index count_correct(const Network<float>& net, const Tensor<float>& images,
                    const std::vector<int>& labels) {
  std::vector<int> pred = predict_classes(net, images);
  Index correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == labels[i]) ++correct;
  return correct;
}

// Runs fn(batch_index, batch) over fixed-size batches of `eval`, sharded
// round-robin across workers. Results must be merged keyed by batch index so
// worker count never changes the outcome.
template <typename Fn>
void for_each_batch(const DataSplit& eval, Index batch_size, int workers, const Fn& fn) {
  const Index n = eval.size();
  if (n == 0) throw ShapeError("evaluation split is empty");
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  const Index num_batches = (n + batch_size - 1) / batch_size;
  workers = std::max(1, std::min<int>(workers, static_cast<int>(num_batches)));

  std::atomic<Index> next{0};
  auto work = [&]() {
    for (;;) {
      const Index b = next.fetch_add(1);
      if (b >= num_batches) return;
      const Index start = b * batch_size;
      Batch<float> batch = gather_batch(eval, order, start, std::min(start + batch_size, n));
      fn(static_cast<std::uint64_t>(b), batch);
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
}

}  // namespace

double robust_accuracy(const Network<float>& net, const DataSplit& eval, const AttackConfig* attack,
                       int workers, Index batch_size) {
  std::atomic<Index> correct{0};
  for_each_batch(eval, batch_size, workers, [&](std::uint64_t batch_index, const Batch<float>& batch) {
    if (attack) {
      AttackResult<float> res = run_attack(net, batch, *attack, batch_index);
      correct.fetch_add(count_correct(net, res.adversarial, batch.labels));
    } else {
      correct.fetch_add(count_correct(net, batch.images, batch.labels));
    }
  });
  return static_cast<double>(correct.load()) / static_cast<double>(eval.size());
}

std::vector<EvalRow> eval_matrix(const Network<float>& net, const DataSplit& eval,
                                 const std::vector<AttackConfig>& attacks, int workers,
                                 Index batch_size) {
  if (attacks.empty()) throw ConfigError("eval_matrix: attack list is empty");
  std::vector<EvalRow> rows;
  rows.push_back({"Original", robust_accuracy(net, eval, nullptr, workers, batch_size)});
  for (const AttackConfig& cfg : attacks) {
    cfg.validate();
    rows.push_back({cfg.label(), robust_accuracy(net, eval, &cfg, workers, batch_size)});
  }
  return rows;
}

RhoCurve sweep_per_step(const Network<float>& net, const DataSplit& eval, float epsilon,
                        const std::vector<int>& n_grid, std::uint64_t seed,
                        const std::string& classifier_label, int workers, Index batch_size) {
  if (n_grid.empty()) throw ConfigError("sweep_per_step: empty grid");
  if (!std::is_sorted(n_grid.begin(), n_grid.end()))
    throw ConfigError("sweep_per_step: grid must be ascending");
  RhoCurve curve;
  curve.sweep_kind = "per_step";
  curve.classifier_label = classifier_label;
  for (int n : n_grid) {
    AttackConfig cfg{AttackKind::Bim, epsilon, n, n, seed, 1.0f};
    curve.xs.push_back(n);
    curve.error_rates.push_back(1.0 - robust_accuracy(net, eval, &cfg, workers, batch_size));
  }
  curve.attack_label = "BIM(n,n) eps=" + format_float(epsilon);
  const double err_max = curve.error_rates.back();
  if (!(err_max > 0.0))
    throw std::domain_error("sweep_per_step: zero error rate at the maximum grid point");
  for (double e : curve.error_rates) curve.rhos.push_back(rho_ratio(e, err_max));
  return curve;
}

RhoCurve sweep_intermediate(const Network<float>& net, const DataSplit& eval, float epsilon, int n1,
                            int n2, std::uint64_t seed, const std::string& classifier_label,
                            int workers, Index batch_size) {
  if (n2 < 1) throw ConfigError("sweep_intermediate: n2 must be >= 1");
  AttackConfig cfg{AttackKind::Bim, epsilon, n1, n2, seed, 1.0f};
  cfg.validate();

  // correct[i] = matches after i BIM iterations; i = 0 is the untouched input
  std::vector<std::atomic<Index>> correct(static_cast<std::size_t>(n2 + 1));
  for (auto& c : correct) c.store(0);
  for_each_batch(eval, batch_size, workers, [&](std::uint64_t batch_index, const Batch<float>& batch) {
    (void)batch_index;
    correct[0].fetch_add(count_correct(net, batch.images, batch.labels));
    std::vector<Tensor<float>> steps;
    iterative_attack(net, batch, cfg, batch_index, &steps);
    for (int i = 1; i <= n2; ++i)
      correct[static_cast<std::size_t>(i)].fetch_add(
          count_correct(net, steps[static_cast<std::size_t>(i - 1)], batch.labels));
  });

  RhoCurve curve;
  curve.sweep_kind = "intermediate";
  curve.classifier_label = classifier_label;
  curve.attack_label = cfg.label();
  const double n = static_cast<double>(eval.size());
  for (int i = 0; i <= n2; ++i) {
    curve.xs.push_back(i);
    curve.error_rates.push_back(1.0 - static_cast<double>(correct[static_cast<std::size_t>(i)].load()) / n);
  }
  const double err_max = curve.error_rates.back();
  if (!(err_max > 0.0))
    throw std::domain_error("sweep_intermediate: zero error rate at the final iteration");
  for (double e : curve.error_rates) curve.rhos.push_back(rho_ratio(e, err_max));
  return curve;
}

void dump_features(const Network<float>& net, const Tensor<float>& images,
                   const std::vector<int>& labels, const std::vector<int>& adv_flags,
                   const std::string& path) {
  if (net.layers.size() < 2 || net.layers.back().desc.kind != LayerKind::Dense)
    throw ShapeError("dump_features: network has no penultimate layer feeding a dense classifier");
  const Index n = images.shape[0];
  if (static_cast<Index>(labels.size()) != n || static_cast<Index>(adv_flags.size()) != n)
    throw ShapeError("dump_features: labels/adv_flags must match the image count");

  const Index d = net.layers.back().weight.shape[1];
  std::vector<std::string> header;
  for (Index j = 0; j < d; ++j) header.push_back("f" + std::to_string(j));
  header.push_back("label");
  header.push_back("is_adv");

  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(n));
  const Index chunk = 256;
  const Index per = shape_numel(net.input_shape);
  for (Index start = 0; start < n; start += chunk) {
    const Index count = std::min(chunk, n - start);
    Shape s = images.shape;
    s[0] = count;
    Tensor<float> part(s);
    part.data = images.data.segment(start * per, count * per);
    ForwardTrace<float> tr = forward_trace(net, part);
    const Tensor<float>& feats = tr.acts[tr.acts.size() - 2];  // input to the final dense layer
    auto fm = as_matrix(feats, count, d);
    for (Index i = 0; i < count; ++i) {
      std::vector<std::string> row;
      row.reserve(static_cast<std::size_t>(d) + 2);
      for (Index j = 0; j < d; ++j) row.push_back(format_float(fm(i, j)));
      row.push_back(std::to_string(labels[static_cast<std::size_t>(start + i)]));
      row.push_back(std::to_string(adv_flags[static_cast<std::size_t>(start + i)]));
      rows.push_back(std::move(row));
    }
  }
  write_csv(path, header, rows);
}

const std::vector<std::string> kRhoCurveHeader = {"sweep",      "classifier", "attack",
                                                  "x",          "error_rate", "rho"};

std::vector<std::vector<std::string>> rho_curve_rows(const RhoCurve& c) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < c.xs.size(); ++i)
    rows.push_back({c.sweep_kind, c.classifier_label, c.attack_label, format_float(c.xs[i]),
                    format_float(c.error_rates[i]), format_float(c.rhos[i])});
  return rows;
}

}  // namespace adv
