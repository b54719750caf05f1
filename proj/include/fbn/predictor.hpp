#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fbn/csv.hpp"
#include "fbn/encoder.hpp"
#include "fbn/graphgen.hpp"
#include "fbn/nn.hpp"
#include "fbn/prng.hpp"
#include "fbn/tensor.hpp"

#include "json.hpp"

namespace fbn {

struct PredictorConfig {
  int gcn_layers = 3;
  int hidden = 16;       // GCN layer width d
  int head_hidden = 16;  // hidden width of the output MLP
  int n_classes = 2;
};

struct PredictorParams {
  PredictorConfig cfg;
  std::vector<Tensor> gcn_w;  // [f x d], then [d x d]
  Tensor bn_gamma, bn_beta;
  BatchNormState bn_state;
  Tensor head_w1, head_b1, head_w2, head_b2;

  static PredictorParams init(const PredictorConfig& cfg, std::size_t feature_dim, Prng& rng) {
    PredictorParams p;
    p.cfg = cfg;
    const std::size_t d = static_cast<std::size_t>(cfg.hidden);
    const std::size_t hh = static_cast<std::size_t>(cfg.head_hidden);
    const std::size_t nc = static_cast<std::size_t>(cfg.n_classes);
    std::size_t in = feature_dim;
    for (int l = 0; l < cfg.gcn_layers; ++l) {
      p.gcn_w.push_back(xavier_uniform({in, d}, in, d, rng));
      in = d;
    }
    p.bn_gamma = Tensor::full({d}, 1.0);
    p.bn_gamma.set_requires_grad(true);
    p.bn_beta = zeros_param({d});
    p.bn_state = BatchNormState(d);
    p.head_w1 = xavier_uniform({d, hh}, d, hh, rng);
    p.head_b1 = zeros_param({hh});
    p.head_w2 = xavier_uniform({hh, nc}, hh, nc, rng);
    p.head_b2 = zeros_param({nc});
    return p;
  }

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t l = 0; l < gcn_w.size(); ++l)
      out.emplace_back(prefix + ".gcn" + std::to_string(l + 1) + ".w", gcn_w[l]);
    out.emplace_back(prefix + ".bn.gamma", bn_gamma);
    out.emplace_back(prefix + ".bn.beta", bn_beta);
    out.emplace_back(prefix + ".head.w1", head_w1);
    out.emplace_back(prefix + ".head.b1", head_b1);
    out.emplace_back(prefix + ".head.w2", head_w2);
    out.emplace_back(prefix + ".head.b2", head_b2);
    return out;
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named_params("p")) out.push_back(t);
    return out;
  }
};

// k rounds of h <- ReLU(A h W) with the adjacency applied raw, then sum
// pooling over nodes; returns the [1 x d] graph embedding.
inline Tensor gcn_embed(const Tensor& adjacency, const Tensor& features,
                        const PredictorParams& p) {
  detail::require(adjacency.ndim() == 2 && adjacency.rows() == adjacency.cols(),
                  "gcn_embed: adjacency must be square");
  detail::require(features.ndim() == 2 && features.rows() == adjacency.rows(),
                  "gcn_embed: feature rows must match node count");
  Tensor h = features;
  for (const Tensor& w : p.gcn_w) h = relu(matmul(matmul(adjacency, h), w));
  return sum_over_rows(h);
}

// Full predictor over a batch: per-graph embeddings, batch normalization of
// the pooled embeddings, and the MLP head. Returns [B x |C|] logits.
inline Tensor gcn_forward_batch(const std::vector<Tensor>& adjacencies,
                                const std::vector<Tensor>& features, PredictorParams& p,
                                Mode mode) {
  detail::require(!adjacencies.empty() && adjacencies.size() == features.size(),
                  "gcn_forward_batch: batch mismatch");
  std::vector<Tensor> embeddings;
  embeddings.reserve(adjacencies.size());
  for (std::size_t i = 0; i < adjacencies.size(); ++i)
    embeddings.push_back(gcn_embed(adjacencies[i], features[i], p));
  Tensor pooled = stack_rows(embeddings);
  Tensor normed = batchnorm_1d(pooled, p.bn_gamma, p.bn_beta, p.bn_state, mode);
  Tensor hidden = relu(add_rowvec(matmul(normed, p.head_w1), p.head_b1));
  return add_rowvec(matmul(hidden, p.head_w2), p.head_b2);
}

// Single-sample forward; train mode rejects the size-1 batch at the
// batch-normalization stage, so this is effectively an eval-path helper.
inline Tensor gcn_forward(const Tensor& adjacency, const Tensor& features, PredictorParams& p,
                          Mode mode) {
  std::vector<Tensor> a{adjacency}, f{features};
  return gcn_forward_batch(a, f, p, mode);
}

struct LossWeights {
  double alpha = 1e-3;
  double beta = 1e-3;
  double gamma = 1e-4;
};

struct LossBreakdown {
  double ce = 0.0;
  double inner = 0.0;
  double intra = 0.0;
  double sparsity = 0.0;
  double total = 0.0;
};

// Four-term objective: cross entropy plus weighted group-inner, group-intra
// and sparsity regularizers. The component values are always reported even
// when a weight is zero; a batch with a single class present contributes a
// zero intra term.
inline std::pair<Tensor, LossBreakdown> total_loss(const Tensor& logits,
                                                   const std::vector<int>& labels,
                                                   const std::vector<Tensor>& graphs,
                                                   const LossWeights& w, std::size_t n_classes) {
  Tensor ce = cross_entropy_logits(logits, labels);
  GroupStats stats = group_statistics(graphs, labels, n_classes);
  Tensor inner = loss_inner(stats);
  Tensor intra = stats.n_present() >= 2 ? loss_intra(stats) : Tensor::scalar(0.0);
  Tensor sparsity = loss_sparsity(graphs);

  Tensor total = add(ce, add(scale(inner, w.alpha), add(scale(intra, w.beta),
                                                        scale(sparsity, w.gamma))));
  LossBreakdown breakdown;
  breakdown.ce = ce.item();
  breakdown.inner = inner.item();
  breakdown.intra = intra.item();
  breakdown.sparsity = sparsity.item();
  breakdown.total = total.item();
  return {total, breakdown};
}

// ---------------------------------------------------------------------------
// checkpoints: one CSV per named tensor plus a JSON shape manifest

inline void save_checkpoint(const std::filesystem::path& dir,
                            const std::vector<std::pair<std::string, Tensor>>& named) {
  ensure_dir(dir);
  nlohmann::json shapes = nlohmann::json::object();
  for (const auto& [name, tensor] : named) {
    shapes[name] = tensor.shape();
    const std::size_t cols = tensor.ndim() >= 1 ? tensor.shape().back() : 1;
    const std::size_t rows = tensor.size() / cols;
    write_matrix_csv(dir / (name + ".csv"), reshape(tensor.detach(), {rows, cols}));
  }
  write_file(dir / "shapes.json", shapes.dump(2) + "\n");
}

inline std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& dir) {
  const auto shapes_path = dir / "shapes.json";
  if (!std::filesystem::exists(shapes_path))
    throw data_error("missing checkpoint manifest " + shapes_path.string());
  nlohmann::json shapes;
  try {
    shapes = nlohmann::json::parse(read_file(shapes_path));
  } catch (const nlohmann::json::exception& e) {
    throw data_error("cannot parse " + shapes_path.string() + ": " + e.what());
  }
  std::map<std::string, Tensor> out;
  for (const auto& [name, shape_json] : shapes.items()) {
    const auto shape = shape_json.get<std::vector<std::size_t>>();
    Tensor flat = read_matrix_csv(dir / (name + ".csv"));
    std::size_t expect = 1;
    for (const std::size_t d : shape) expect *= d;
    if (flat.size() != expect)
      throw data_error("checkpoint tensor '" + name + "' disagrees with manifest shape");
    out.emplace(name, Tensor::from(shape, flat.values()));
  }
  return out;
}

}  // namespace fbn
