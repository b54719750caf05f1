#pragma once

#include <cstddef>
#include <vector>

#include "fbn/tensor.hpp"

namespace fbn {

// Learnable connectivity matrix from per-ROI features: each feature row is
// turned into a probability vector and A is the Gram matrix of those rows.
// A is symmetric, positive semidefinite, with entries in (0, 1].
inline Tensor generate_graph(const Tensor& h_e) {
  detail::require(h_e.ndim() == 2, "generate_graph: features must be [v x o]");
  detail::require(h_e.all_finite(), "generate_graph: features must be finite");
  Tensor h_a = softmax_rows(h_e);
  return matmul(h_a, transpose(h_a));
}

// Per-class mean graph and scalar variance over a batch of graphs.
struct GroupStats {
  std::vector<Tensor> mean;          // [v x v] per class; empty tensor when absent
  std::vector<Tensor> variance;      // scalar per class
  std::vector<std::size_t> count;    // members per class

  std::size_t n_classes() const { return count.size(); }

  std::size_t n_present() const {
    std::size_t k = 0;
    for (const std::size_t c : count) k += c > 0 ? 1 : 0;
    return k;
  }
};

inline GroupStats group_statistics(const std::vector<Tensor>& graphs,
                                   const std::vector<int>& labels, std::size_t n_classes) {
  detail::require(!graphs.empty(), "group_statistics: empty batch");
  detail::require(graphs.size() == labels.size(), "group_statistics: label count mismatch");

  GroupStats stats;
  stats.mean.resize(n_classes);
  stats.variance.resize(n_classes);
  stats.count.assign(n_classes, 0);
  for (const int y : labels) {
    detail::require(y >= 0 && static_cast<std::size_t>(y) < n_classes,
                    "group_statistics: label out of range");
    ++stats.count[static_cast<std::size_t>(y)];
  }

  for (std::size_t c = 0; c < n_classes; ++c) {
    if (stats.count[c] == 0) continue;
    Tensor sum;
    bool first = true;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      if (static_cast<std::size_t>(labels[i]) != c) continue;
      sum = first ? graphs[i] : add(sum, graphs[i]);
      first = false;
    }
    const double inv = 1.0 / static_cast<double>(stats.count[c]);
    stats.mean[c] = scale(sum, inv);
    Tensor var = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      if (static_cast<std::size_t>(labels[i]) != c) continue;
      var = add(var, sum_squares(sub(graphs[i], stats.mean[c])));
    }
    stats.variance[c] = scale(var, inv);
  }
  return stats;
}

// Sum of within-class graph variances; zero when every class is internally
// identical. O(n) in the batch size.
inline Tensor loss_inner(const GroupStats& stats) {
  Tensor out = Tensor::scalar(0.0);
  for (std::size_t c = 0; c < stats.n_classes(); ++c)
    if (stats.count[c] > 0) out = add(out, stats.variance[c]);
  return out;
}

// Negated separation of class means, summed over ordered class pairs; always
// <= 0, and equal to the O(n^2) pairwise form of the same quantity.
inline Tensor loss_intra(const GroupStats& stats) {
  detail::require(stats.n_present() >= 2, "loss_intra: needs at least two classes present");
  Tensor out = Tensor::scalar(0.0);
  for (std::size_t a = 0; a < stats.n_classes(); ++a) {
    if (stats.count[a] == 0) continue;
    for (std::size_t b = 0; b < stats.n_classes(); ++b) {
      if (stats.count[b] == 0 || a == b) continue;
      out = sub(out, sum_squares(sub(stats.mean[a], stats.mean[b])));
    }
  }
  return out;
}

// Mean absolute edge weight: (1 / (n v v)) sum_i ||vec(A_i)||_1.
inline Tensor loss_sparsity(const std::vector<Tensor>& graphs) {
  detail::require(!graphs.empty(), "loss_sparsity: empty batch");
  Tensor out = Tensor::scalar(0.0);
  for (const Tensor& g : graphs) out = add(out, l1_norm(g));
  const double denom = static_cast<double>(graphs.size()) *
                       static_cast<double>(graphs[0].size());
  return scale(out, 1.0 / denom);
}

}  // namespace fbn
