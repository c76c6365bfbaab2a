#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "labelembed/errors.hpp"
#include "labelembed/labelspace.hpp"
#include "labelembed/net.hpp"

namespace labelembed {

/// A per-sample loss and its gradient with respect to each input.
///
/// Losses over logits or embeddings carry one gradient per input vector.
/// Losses over scalar distances carry a single gradient vector indexed by
/// distance argument, in argument order.
template <typename Scalar>
struct LossValue {
  Scalar value = 0;
  std::vector<Vector<Scalar>> grads;
};

namespace detail {

template <typename Scalar>
void require_non_negative(std::initializer_list<Scalar> ds) {
  for (Scalar d : ds) {
    if (!(d >= Scalar(0))) throw InputError("distances must be non-negative");
  }
}

}  // namespace detail

/// -log softmax(logits)[label], with max-shift stabilization.
/// Gradient: softmax(logits) - one_hot(label).
template <typename Derived>
LossValue<typename Derived::Scalar> softmax_nll(const Eigen::MatrixBase<Derived>& logits, int label) {
  using Scalar = typename Derived::Scalar;
  if (label < 0 || label >= logits.size()) {
    throw InputError("label " + std::to_string(label) + " outside 0.." +
                     std::to_string(logits.size() - 1));
  }
  const Scalar shift = logits.maxCoeff();
  Vector<Scalar> e = (logits.array() - shift).exp().matrix();
  const Scalar sum = e.sum();
  LossValue<Scalar> out;
  out.value = std::log(sum) - (logits(label) - shift);
  Vector<Scalar> g = e / sum;
  g(label) -= Scalar(1);
  out.grads.push_back(std::move(g));
  return out;
}

/// Chain of hinges over distances ordered innermost to outermost:
///   sum_j max(0, d[j-1] - d[j] + margins[j-1]).
/// A hinge with activation exactly 0 counts as inactive.
template <typename Scalar>
LossValue<Scalar> hinge_chain(std::span<const Scalar> distances, std::span<const double> margins) {
  if (margins.empty() || distances.size() != margins.size() + 1) {
    throw InputError("hinge chain needs one more distance than margins");
  }
  for (Scalar d : distances) {
    if (!(d >= Scalar(0))) throw InputError("distances must be non-negative");
  }
  LossValue<Scalar> out;
  Vector<Scalar> g = Vector<Scalar>::Zero(static_cast<Eigen::Index>(distances.size()));
  for (std::size_t j = 1; j < distances.size(); ++j) {
    const Scalar activation = distances[j - 1] - distances[j] + static_cast<Scalar>(margins[j - 1]);
    if (activation > Scalar(0)) {
      out.value = j == 1 ? activation : out.value + activation;
      g(j - 1) += Scalar(1);
      g(j) -= Scalar(1);
    }
  }
  out.grads.push_back(std::move(g));
  return out;
}

/// max(0, d_rp - d_rn + m). Gradient over (d_rp, d_rn).
template <typename Scalar>
LossValue<Scalar> triplet_hinge(Scalar d_rp, Scalar d_rn, double margin) {
  detail::require_non_negative({d_rp, d_rn});
  if (!(margin >= 0.0)) throw ValidationError("triplet margin must be non-negative");
  LossValue<Scalar> out;
  Vector<Scalar> g = Vector<Scalar>::Zero(2);
  const Scalar activation = d_rp - d_rn + static_cast<Scalar>(margin);
  if (activation > Scalar(0)) {
    out.value = activation;
    g << Scalar(1), Scalar(-1);
  }
  out.grads.push_back(std::move(g));
  return out;
}

/// Two generalized triplets of a quadruplet (r, p+, p-, n):
///   max(0, d(r,p+) - d(r,p-) + m1 - m2) + max(0, d(r,p-) - d(r,n) + m2).
/// Gradient over (d_rp_plus, d_rp_minus, d_rn).
template <typename Scalar>
LossValue<Scalar> quadruplet_loss(Scalar d_rp_plus, Scalar d_rp_minus, Scalar d_rn, double m1,
                                  double m2) {
  if (!(m2 > 0.0) || !(m1 > m2)) throw ValidationError("quadruplet margins need m1 > m2 > 0");
  detail::require_non_negative({d_rp_plus, d_rp_minus, d_rn});
  LossValue<Scalar> out;
  Vector<Scalar> g = Vector<Scalar>::Zero(3);
  const Scalar inner = d_rp_plus - d_rp_minus + static_cast<Scalar>(m1 - m2);
  const Scalar outer = d_rp_minus - d_rn + static_cast<Scalar>(m2);
  if (inner > Scalar(0)) {
    out.value = inner;
    g(0) += Scalar(1);
    g(1) -= Scalar(1);
  }
  if (outer > Scalar(0)) {
    out.value = inner > Scalar(0) ? out.value + outer : outer;
    g(1) += Scalar(1);
    g(2) -= Scalar(1);
  }
  out.grads.push_back(std::move(g));
  return out;
}

/// x-level tuplet loss; distances[j] = D(reference, level-j companion),
/// innermost (same fine class) first.
template <typename Scalar>
LossValue<Scalar> tuplet_loss(std::span<const Scalar> distances, const MarginSchedule& schedule) {
  if (distances.size() != static_cast<std::size_t>(schedule.num_levels()) + 1) {
    throw InputError("tuplet needs " + std::to_string(schedule.num_levels() + 1) +
                     " distances, got " + std::to_string(distances.size()));
  }
  const std::vector<double> margins = triplet_margins(schedule);
  return hinge_chain<Scalar>(distances, margins);
}

/// Triplet hinge whose margin shrinks with the attribute overlap of the
/// positive and negative classes.
template <typename Scalar>
LossValue<Scalar> adaptive_triplet(Scalar d_rp, Scalar d_rn, const AttributeTable& table,
                                   ClassId class_p, ClassId class_n, double base_margin) {
  return triplet_hinge(d_rp, d_rn, jaccard_margin(table, class_p, class_n, base_margin));
}

/// lambda_s * e_s + (1 - lambda_s) * e_t
inline double combined_loss(double e_s, double e_t, double lambda_s) {
  if (!(lambda_s >= 0.0 && lambda_s <= 1.0)) throw ValidationError("lambda_s must lie in [0, 1]");
  if (!(e_s >= 0.0) || !(e_t >= 0.0)) throw InputError("loss terms must be non-negative");
  return lambda_s * e_s + (1.0 - lambda_s) * e_t;
}

/// Hinge chain evaluated on embeddings: the reference y_r and companions
/// ordered innermost to outermost. Gradients are returned for the reference
/// first, then each companion.
template <typename Scalar, typename DerivedR, typename DerivedC>
LossValue<Scalar> embedding_hinge_chain(const Eigen::MatrixBase<DerivedR>& y_r,
                                        const Eigen::MatrixBase<DerivedC>& companions,
                                        std::span<const double> margins) {
  const Eigen::Index k = companions.cols();
  std::vector<Scalar> d(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) d[j] = squared_distance(y_r, companions.col(j));
  LossValue<Scalar> chain = hinge_chain<Scalar>(d, margins);

  LossValue<Scalar> out;
  out.value = chain.value;
  out.grads.assign(static_cast<std::size_t>(k) + 1, Vector<Scalar>::Zero(y_r.size()));
  for (Eigen::Index j = 0; j < k; ++j) {
    const Scalar w = chain.grads[0](j);
    if (w == Scalar(0)) continue;
    // dD(r,c)/dr = 2(r - c), dD(r,c)/dc = -2(r - c)
    const Vector<Scalar> diff = Scalar(2) * (y_r - companions.col(j));
    out.grads[0] += w * diff;
    out.grads[j + 1] -= w * diff;
  }
  return out;
}

/// Triplet hinge on unit embeddings with the closed-form gradients
///   d/dy_r = 2(y_n - y_p), d/dy_p = -2(y_r - y_p), d/dy_n = 2(y_r - y_n)
/// when active, zero otherwise.
template <typename DerivedR, typename DerivedP, typename DerivedN>
LossValue<typename DerivedR::Scalar> triplet_embedding_grads(const Eigen::MatrixBase<DerivedR>& y_r,
                                                             const Eigen::MatrixBase<DerivedP>& y_p,
                                                             const Eigen::MatrixBase<DerivedN>& y_n,
                                                             double margin) {
  using Scalar = typename DerivedR::Scalar;
  const Scalar d_rp = squared_distance(y_r, y_p);
  const Scalar d_rn = squared_distance(y_r, y_n);
  LossValue<Scalar> hinge = triplet_hinge(d_rp, d_rn, margin);
  LossValue<Scalar> out;
  out.value = hinge.value;
  if (hinge.grads[0](0) != Scalar(0)) {
    out.grads.push_back(Scalar(2) * (y_n - y_p));
    out.grads.push_back(Scalar(-2) * (y_r - y_p));
    out.grads.push_back(Scalar(2) * (y_r - y_n));
  } else {
    out.grads.assign(3, Vector<Scalar>::Zero(y_r.size()));
  }
  return out;
}

}  // namespace labelembed
