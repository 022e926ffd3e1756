#pragma once

#include <cmath>
#include <vector>

#include "adv/loss.hpp"
#include "adv/tensor.hpp"

namespace adv {

// Class centers in prediction space: row m of `centers` is phi_m.
template <typename Scalar>
struct CenterSet {
  MatrixR<Scalar> centers;  // k x k
  Scalar beta = Scalar(0.1);

  Index class_count() const { return centers.rows(); }

  // All centers start at the uniform prediction (1/k, ..., 1/k).
  static CenterSet uniform_init(int k, Scalar beta = Scalar(0.1)) {
    CenterSet c;
    c.centers = MatrixR<Scalar>::Constant(k, k, Scalar(1) / static_cast<Scalar>(k));
    c.beta = beta;
    return c;
  }
};

namespace detail {

template <typename Scalar>
void check_preds(const Tensor<Scalar>& p, const char* where) {
  if (p.shape.size() != 2 || p.shape[0] < 1)
    throw ShapeError(std::string(where) + ": expects nonempty [B,k] predictions, got " + shape_str(p.shape));
}

// Column-centered covariance with divisor max(B-1, 1).
template <typename Scalar>
MatrixR<Scalar> covariance(const Tensor<Scalar>& preds) {
  const Index b = preds.shape[0], k = preds.shape[1];
  auto x = as_matrix(preds, b, k);
  MatrixR<Scalar> centered = x.rowwise() - x.colwise().mean();
  Scalar div = static_cast<Scalar>(b > 1 ? b - 1 : 1);
  return (centered.transpose() * centered) / div;
}

template <typename Scalar>
Scalar sign0(Scalar v) {
  return v > Scalar(0) ? Scalar(1) : (v < Scalar(0) ? Scalar(-1) : Scalar(0));
}

template <typename Scalar>
Scalar softplus(Scalar u) {
  // ln(1 + e^u) without overflow on large |u|
  return u > Scalar(0) ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
}

template <typename Scalar>
Scalar logistic(Scalar u) {
  return u > Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-u))
                       : std::exp(u) / (Scalar(1) + std::exp(u));
}

}  // namespace detail

// (1/k^2) * || Cov(clean) - Cov(adv) ||_1 (entrywise).
template <typename Scalar>
Scalar coral_loss(const Tensor<Scalar>& pred_clean, const Tensor<Scalar>& pred_adv) {
  detail::check_preds(pred_clean, "coral_loss");
  detail::check_preds(pred_adv, "coral_loss");
  const Index k = pred_clean.shape[1];
  if (pred_adv.shape[1] != k)
    throw ShapeError("coral_loss: class-count mismatch, " + std::to_string(k) + " vs " +
                     std::to_string(pred_adv.shape[1]));
  MatrixR<Scalar> diff = detail::covariance(pred_clean) - detail::covariance(pred_adv);
  return diff.array().abs().sum() / static_cast<Scalar>(k * k);
}

// (1/k) * || mean(clean) - mean(adv) ||_1.
template <typename Scalar>
Scalar mmd_loss(const Tensor<Scalar>& pred_clean, const Tensor<Scalar>& pred_adv) {
  detail::check_preds(pred_clean, "mmd_loss");
  detail::check_preds(pred_adv, "mmd_loss");
  const Index k = pred_clean.shape[1];
  if (pred_adv.shape[1] != k)
    throw ShapeError("mmd_loss: class-count mismatch");
  auto c = as_matrix(pred_clean, pred_clean.shape[0], k);
  auto a = as_matrix(pred_adv, pred_adv.shape[0], k);
  return (c.colwise().mean() - a.colwise().mean()).array().abs().sum() / static_cast<Scalar>(k);
}

template <typename Scalar>
Scalar uda_loss(const Tensor<Scalar>& pred_clean, const Tensor<Scalar>& pred_adv) {
  return coral_loss(pred_clean, pred_adv) + mmd_loss(pred_clean, pred_adv);
}

// Supervised part: pull each prediction toward its class center and away from
// the others. preds is the pooled clean+adversarial set.
template <typename Scalar>
Scalar sda_loss(const Tensor<Scalar>& preds, const std::vector<int>& labels,
                const CenterSet<Scalar>& centers) {
  detail::check_preds(preds, "sda_loss");
  const Index n = preds.shape[0], k = preds.shape[1];
  if (k < 2) throw ShapeError("sda_loss: needs k >= 2 classes");
  if (centers.class_count() != k) throw ShapeError("sda_loss: center count mismatch");
  check_labels(labels, n, k, "sda_loss");
  auto p = as_matrix(preds, n, k);
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const Index y = labels[static_cast<std::size_t>(i)];
    Scalar own = (p.row(i) - centers.centers.row(y)).array().abs().sum();
    for (Index m = 0; m < k; ++m) {
      if (m == y) continue;
      Scalar other = (p.row(i) - centers.centers.row(m)).array().abs().sum();
      total += detail::softplus(own - other);
    }
  }
  return total / (static_cast<Scalar>(k - 1) * static_cast<Scalar>(n));
}

// d(sda_loss)/dpreds with the sign(0) = 0 subgradient at the l1 kinks.
// Centers are treated as constants; they move only through update_centers.
template <typename Scalar>
Tensor<Scalar> sda_loss_grad(const Tensor<Scalar>& preds, const std::vector<int>& labels,
                             const CenterSet<Scalar>& centers) {
  const Index n = preds.shape[0], k = preds.shape[1];
  if (k < 2) throw ShapeError("sda_loss_grad: needs k >= 2 classes");
  check_labels(labels, n, k, "sda_loss_grad");
  auto p = as_matrix(preds, n, k);
  Tensor<Scalar> grad(preds.shape);
  auto g = as_matrix(grad, n, k);
  const Scalar scale = Scalar(1) / (static_cast<Scalar>(k - 1) * static_cast<Scalar>(n));
  for (Index i = 0; i < n; ++i) {
    const Index y = labels[static_cast<std::size_t>(i)];
    Scalar own = (p.row(i) - centers.centers.row(y)).array().abs().sum();
    for (Index m = 0; m < k; ++m) {
      if (m == y) continue;
      Scalar other = (p.row(i) - centers.centers.row(m)).array().abs().sum();
      Scalar w = detail::logistic(own - other) * scale;
      for (Index j = 0; j < k; ++j) {
        g(i, j) += w * (detail::sign0(p(i, j) - centers.centers(y, j)) -
                        detail::sign0(p(i, j) - centers.centers(m, j)));
      }
    }
  }
  return grad;
}

// Gradients of uda_loss w.r.t. both prediction batches, accumulated into
// d_clean / d_adv (callers pre-size them to the prediction shapes).
template <typename Scalar>
void uda_loss_grad(const Tensor<Scalar>& pred_clean, const Tensor<Scalar>& pred_adv,
                   Tensor<Scalar>& d_clean, Tensor<Scalar>& d_adv) {
  const Index bc = pred_clean.shape[0], ba = pred_adv.shape[0], k = pred_clean.shape[1];
  if (!same_shape(d_clean, pred_clean) || !same_shape(d_adv, pred_adv))
    throw ShapeError("uda_loss_grad: output tensors must match prediction shapes");
  auto pc = as_matrix(pred_clean, bc, k);
  auto pa = as_matrix(pred_adv, ba, k);
  auto gc = as_matrix(d_clean, bc, k);
  auto ga = as_matrix(d_adv, ba, k);

  // MMD part
  VectorX<Scalar> mean_diff = (pc.colwise().mean() - pa.colwise().mean()).transpose();
  for (Index j = 0; j < k; ++j) {
    Scalar s = detail::sign0(mean_diff[j]) / static_cast<Scalar>(k);
    gc.col(j).array() += s / static_cast<Scalar>(bc);
    ga.col(j).array() -= s / static_cast<Scalar>(ba);
  }

  // CORAL part: with M = sign(S - T)/k^2, dL/dXc = Xc (M + M^T)/div, then the
  // centering projector folds back in as a column-mean subtraction.
  MatrixR<Scalar> sign_m = (detail::covariance(pred_clean) - detail::covariance(pred_adv))
                               .unaryExpr([](Scalar v) { return detail::sign0(v); }) /
                           static_cast<Scalar>(k * k);
  MatrixR<Scalar> msym = sign_m + sign_m.transpose();
  auto accumulate_side = [&](const Eigen::Map<const MatrixR<Scalar>>& x, auto& out, Scalar side) {
    const Index b = x.rows();
    MatrixR<Scalar> centered = x.rowwise() - x.colwise().mean();
    Scalar div = static_cast<Scalar>(b > 1 ? b - 1 : 1);
    MatrixR<Scalar> dxc = (centered * msym) * (side / div);
    out += dxc.rowwise() - dxc.colwise().mean();
  };
  accumulate_side(pc, gc, Scalar(1));
  accumulate_side(pa, ga, Scalar(-1));
}

// phi_m <- phi_m - beta * sum_{x: y=m}(phi_m - C(x)) / (1 + count_m);
// classes absent from the batch keep their centers.
template <typename Scalar>
void update_centers(CenterSet<Scalar>& centers, const Tensor<Scalar>& preds,
                    const std::vector<int>& labels) {
  detail::check_preds(preds, "update_centers");
  const Index n = preds.shape[0], k = preds.shape[1];
  if (centers.class_count() != k) throw ShapeError("update_centers: center count mismatch");
  check_labels(labels, n, k, "update_centers");
  auto p = as_matrix(preds, n, k);
  for (Index m = 0; m < k; ++m) {
    MatrixR<Scalar> sum = MatrixR<Scalar>::Zero(1, k);
    Index count = 0;
    for (Index i = 0; i < n; ++i) {
      if (labels[static_cast<std::size_t>(i)] != m) continue;
      sum.row(0) += centers.centers.row(m) - p.row(i);
      ++count;
    }
    centers.centers.row(m) -= centers.beta * sum.row(0) / static_cast<Scalar>(1 + count);
  }
}

}  // namespace adv
