#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "stela/common.hpp"
#include "stela/error.hpp"
#include "stela/kitti_io.hpp"

namespace stela {

struct ClassTable {
  int num_classes = 0;
  Vecd weights;  // per-class, positive
  std::uint16_t ignore_id = kIgnoreId;

  static ClassTable uniform(int num_classes) {
    ClassTable t;
    t.num_classes = num_classes;
    t.weights = Vecd::Ones(num_classes);
    return t;
  }

  void validate() const {
    if (num_classes < 1) throw ConfigError("class table: need at least one class");
    if (weights.size() != num_classes) throw ConfigError("class table: weight count != C");
    for (Eigen::Index c = 0; c < weights.size(); ++c)
      if (!(weights(c) > 0.0) || !std::isfinite(weights(c)))
        throw ConfigError("class table: weights must be finite and > 0");
    if (ignore_id < num_classes) throw ConfigError("class table: ignore id collides with a class");
  }
};

// w_c = 1 / ln(c0 + f_c) over relative frequencies f_c; the usual inverse
// log-frequency scheme.
inline Vecd inverse_log_frequency_weights(const std::vector<std::uint64_t>& class_counts,
                                          double c0 = 1.02) {
  const double total = std::max<double>(
      1.0, std::accumulate(class_counts.begin(), class_counts.end(), std::uint64_t{0}));
  Vecd w(static_cast<Eigen::Index>(class_counts.size()));
  for (std::size_t c = 0; c < class_counts.size(); ++c)
    w(static_cast<Eigen::Index>(c)) = 1.0 / std::log(c0 + class_counts[c] / total);
  return w;
}

struct LossResult {
  double loss = 0.0;
  Matd grad;  // N x C
};

namespace detail {

inline Matd row_softmax(const Matd& logits) {
  Matd p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace detail

// Mean over non-ignore rows of w_y * (-log softmax(logits)[y]); grad is its
// exact derivative in logit space. No valid rows -> loss 0, grad 0.
inline LossResult weighted_cross_entropy(const Matd& logits,
                                         const std::vector<std::uint16_t>& targets,
                                         const ClassTable& table) {
  table.validate();
  if (static_cast<std::size_t>(logits.rows()) != targets.size())
    throw ConfigError("cross_entropy: logits/targets length mismatch");
  if (logits.cols() != table.num_classes)
    throw ConfigError("cross_entropy: logit width != class count");

  LossResult res;
  res.grad = Matd::Zero(logits.rows(), logits.cols());
  Eigen::Index n_valid = 0;
  for (std::size_t i = 0; i < targets.size(); ++i)
    if (targets[i] != table.ignore_id) {
      if (targets[i] >= table.num_classes)
        throw DataError("cross_entropy: target id " + std::to_string(targets[i]) +
                        " out of range");
      ++n_valid;
    }
  if (n_valid == 0) return res;

  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const std::uint16_t y = targets[static_cast<std::size_t>(i)];
    if (y == table.ignore_id) continue;
    const double m = logits.row(i).maxCoeff();
    const Eigen::ArrayXd shifted = logits.row(i).array() - m;
    const double log_denom = std::log(shifted.exp().sum());
    const double w = table.weights(y);
    loss += w * (log_denom - shifted(y));
    // d/dlogits = w/N * (softmax - onehot)
    Eigen::ArrayXd p = (shifted - log_denom).exp();
    res.grad.row(i) = (w / n_valid) * p.matrix().transpose();
    res.grad(i, y) -= w / n_valid;
  }
  res.loss = loss / n_valid;
  return res;
}

// --- Lovasz-softmax -----------------------------------------------------------

namespace detail {

// Gradient of the Jaccard-loss Lovasz extension at a sorted binary ground
// truth vector: jaccard[0], then first differences.
inline Vecd lovasz_extension_grad(const std::vector<std::uint8_t>& gt_sorted) {
  const Eigen::Index n = static_cast<Eigen::Index>(gt_sorted.size());
  Vecd grad(n);
  double gts = 0.0;
  for (std::uint8_t g : gt_sorted) gts += g;
  double cum_gt = 0.0;
  double cum_not = 0.0;
  double prev = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    cum_gt += gt_sorted[static_cast<std::size_t>(j)];
    cum_not += 1.0 - gt_sorted[static_cast<std::size_t>(j)];
    const double intersection = gts - cum_gt;
    const double uni = gts + cum_not;
    const double jaccard = 1.0 - intersection / uni;
    grad(j) = jaccard - prev;
    prev = jaccard;
  }
  return grad;
}

}  // namespace detail

// Present-classes-averaged Lovasz-softmax over probability rows. For each
// class c present among valid targets: errors 1 - p[c] (hits) / p[c]
// (misses), sorted descending with ties broken by original index, dotted
// against the Jaccard extension gradient. Exact analytic gradient in
// probability space via the piecewise-linear structure.
inline LossResult lovasz_softmax(const Matd& probs, const std::vector<std::uint16_t>& targets,
                                 const ClassTable& table) {
  table.validate();
  if (static_cast<std::size_t>(probs.rows()) != targets.size())
    throw ConfigError("lovasz: probs/targets length mismatch");
  if (probs.cols() != table.num_classes)
    throw ConfigError("lovasz: prob width != class count");

  LossResult res;
  res.grad = Matd::Zero(probs.rows(), probs.cols());

  std::vector<Eigen::Index> valid;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == table.ignore_id) continue;
    if (targets[i] >= table.num_classes)
      throw DataError("lovasz: target id " + std::to_string(targets[i]) + " out of range");
    valid.push_back(static_cast<Eigen::Index>(i));
  }
  if (valid.empty()) return res;

  std::vector<int> present;
  {
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(table.num_classes), 0);
    for (Eigen::Index i : valid) seen[targets[static_cast<std::size_t>(i)]] = 1;
    for (int c = 0; c < table.num_classes; ++c)
      if (seen[static_cast<std::size_t>(c)]) present.push_back(c);
  }

  const std::size_t m = valid.size();
  std::vector<double> errors(m);
  std::vector<std::size_t> order(m);
  double loss = 0.0;
  for (int c : present) {
    for (std::size_t r = 0; r < m; ++r) {
      const Eigen::Index i = valid[r];
      const bool hit = targets[static_cast<std::size_t>(i)] == c;
      errors[r] = hit ? 1.0 - probs(i, c) : probs(i, c);
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (errors[a] != errors[b]) return errors[a] > errors[b];
      return a < b;  // deterministic gradients at ties
    });
    std::vector<std::uint8_t> gt_sorted(m);
    for (std::size_t r = 0; r < m; ++r)
      gt_sorted[r] = targets[static_cast<std::size_t>(valid[order[r]])] == c ? 1 : 0;
    const Vecd ext_grad = detail::lovasz_extension_grad(gt_sorted);
    for (std::size_t r = 0; r < m; ++r) {
      const Eigen::Index i = valid[order[r]];
      loss += errors[order[r]] * ext_grad(static_cast<Eigen::Index>(r));
      // de/dp[c] is -1 on hits, +1 on misses.
      const double sign = gt_sorted[r] ? -1.0 : 1.0;
      res.grad(i, c) += sign * ext_grad(static_cast<Eigen::Index>(r));
    }
  }
  res.loss = loss / static_cast<double>(present.size());
  res.grad /= static_cast<double>(present.size());
  return res;
}

// Training loss: cross-entropy plus Lovasz-softmax with unit weights, both
// differentiated down to logit space.
inline LossResult segmentation_loss(const Matd& logits, const std::vector<std::uint16_t>& targets,
                                    const ClassTable& table) {
  LossResult ce = weighted_cross_entropy(logits, targets, table);
  const Matd probs = detail::row_softmax(logits);
  LossResult lov = lovasz_softmax(probs, targets, table);

  LossResult res;
  res.loss = ce.loss + lov.loss;
  res.grad = ce.grad;
  // Chain the Lovasz probability-space gradient through the row softmax.
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double dot = lov.grad.row(i).dot(probs.row(i));
    res.grad.row(i) +=
        probs.row(i).cwiseProduct(lov.grad.row(i) - Eigen::RowVectorXd::Constant(logits.cols(), dot));
  }
  return res;
}

}  // namespace stela
