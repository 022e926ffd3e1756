#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "adv/tensor.hpp"

namespace adv {

inline void check_labels(const std::vector<int>& labels, Index batch, Index classes,
                         const char* where) {
  if (static_cast<Index>(labels.size()) != batch)
    throw ShapeError(std::string(where) + ": " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  for (int y : labels)
    if (y < 0 || y >= classes)
      throw std::out_of_range(std::string(where) + ": label " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
}

// Row-wise softmax with max subtraction.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  if (logits.shape.size() != 2) throw ShapeError("softmax expects [B,k] logits, got " + shape_str(logits.shape));
  const Index b = logits.shape[0], k = logits.shape[1];
  Tensor<Scalar> probs(logits.shape);
  auto z = as_matrix(logits, b, k);
  auto p = as_matrix(probs, b, k);
  for (Index i = 0; i < b; ++i) {
    Scalar m = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return probs;
}

// Mean over the batch of -log softmax(logits)[label], in log-sum-exp form so
// confident rows stay finite.
template <typename Scalar>
Scalar cross_entropy(const Tensor<Scalar>& logits, const std::vector<int>& labels) {
  if (logits.shape.size() != 2)
    throw ShapeError("cross_entropy expects [B,k] logits, got " + shape_str(logits.shape));
  const Index b = logits.shape[0], k = logits.shape[1];
  if (b < 1) throw ShapeError("cross_entropy: empty batch");
  check_labels(labels, b, k, "cross_entropy");
  auto z = as_matrix(logits, b, k);
  Scalar total = 0;
  for (Index i = 0; i < b; ++i) {
    Scalar m = z.row(i).maxCoeff();
    Scalar lse = m + std::log((z.row(i).array() - m).exp().sum());
    total += lse - z(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<Scalar>(b);
}

// d(per_example_weight * sum_i CE_i)/dlogits = per_example_weight * (softmax - onehot).
// Weight 1/B gives the mean-loss gradient, 1 the summed-loss gradient.
template <typename Scalar>
Tensor<Scalar> cross_entropy_logit_grad(const Tensor<Scalar>& logits, const std::vector<int>& labels,
                                        Scalar per_example_weight) {
  const Index b = logits.shape[0], k = logits.shape[1];
  check_labels(labels, b, k, "cross_entropy_logit_grad");
  Tensor<Scalar> grad = softmax(logits);
  auto g = as_matrix(grad, b, k);
  for (Index i = 0; i < b; ++i) g(i, labels[static_cast<std::size_t>(i)]) -= Scalar(1);
  grad.data *= per_example_weight;
  return grad;
}

// dL/dlogits given dL/dprobs for softmax rows: dz = p .* (dp - <dp, p>).
template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& probs, const Tensor<Scalar>& dprobs) {
  if (!same_shape(probs, dprobs))
    throw ShapeError("softmax_backward shape mismatch: " + shape_str(probs.shape) + " vs " +
                     shape_str(dprobs.shape));
  const Index b = probs.shape[0], k = probs.shape[1];
  Tensor<Scalar> dz(probs.shape);
  auto p = as_matrix(probs, b, k);
  auto dp = as_matrix(dprobs, b, k);
  auto out = as_matrix(dz, b, k);
  for (Index i = 0; i < b; ++i) {
    Scalar dot = (dp.row(i).array() * p.row(i).array()).sum();
    out.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
  }
  return dz;
}

}  // namespace adv
