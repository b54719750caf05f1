#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fbn/nn.hpp"
#include "fbn/prng.hpp"
#include "fbn/tensor.hpp"

namespace fbn {

enum class EncoderVariant { kCnn, kGru };

enum class WindowAggregate { kMean, kLast };

inline EncoderVariant parse_encoder_variant(const std::string& s) {
  if (s == "cnn") return EncoderVariant::kCnn;
  if (s == "gru") return EncoderVariant::kGru;
  throw usage_error("unknown encoder variant '" + s + "' (expected cnn|gru)");
}

// Per-ROI feature extractor configuration. Weights are shared across ROIs,
// which makes both variants ROI-permutation equivariant.
struct EncoderConfig {
  EncoderVariant variant = EncoderVariant::kCnn;
  int out_dim = 8;      // o, feature size per ROI
  int mlp_hidden = 32;  // hidden width of the output MLP
  double out_gain = 1.0;  // init gain on the MLP output layer; larger values
                          // sharpen the feature softmax from the first step

  // cnn: stacked valid convolutions with ReLU, then non-overlapping max pool
  std::vector<int> cnn_channels = {32, 32, 16};
  int cnn_kernel = 16;
  int cnn_pool = 4;

  // gru: series cut into windows of length `gru_window` (tau); a stacked
  // bidirectional GRU with hidden size tau per direction encodes each window
  int gru_window = 16;
  int gru_layers = 3;
  WindowAggregate gru_aggregate = WindowAggregate::kMean;
};

// Sequence length after the convolution stack and pooling.
inline std::size_t cnn_pooled_len(const EncoderConfig& cfg, std::size_t t) {
  std::size_t len = t;
  for (std::size_t u = 0; u < cfg.cnn_channels.size(); ++u) {
    detail::require(len >= static_cast<std::size_t>(cfg.cnn_kernel),
                    "cnn encoder: series too short for convolution stack");
    len = len - static_cast<std::size_t>(cfg.cnn_kernel) + 1;
  }
  detail::require(len >= static_cast<std::size_t>(cfg.cnn_pool),
                  "cnn encoder: series too short for pooling");
  return len / static_cast<std::size_t>(cfg.cnn_pool);
}

// Flattened per-ROI feature width entering the output MLP.
inline std::size_t cnn_flat_dim(const EncoderConfig& cfg, std::size_t t) {
  return static_cast<std::size_t>(cfg.cnn_channels.back()) * cnn_pooled_len(cfg, t);
}

inline std::size_t gru_window_count(const EncoderConfig& cfg, std::size_t t) {
  detail::require(t >= static_cast<std::size_t>(cfg.gru_window),
                  "gru encoder: series shorter than window");
  const std::size_t tau = static_cast<std::size_t>(cfg.gru_window);
  return (t + tau - 1) / tau;  // final partial window is zero-padded
}

struct GruDirectionParams {
  Tensor w_ih, w_hh, b_ih, b_hh;
};

struct EncoderParams {
  EncoderConfig cfg;
  std::size_t series_len = 0;  // t the parameters were sized for

  std::vector<Tensor> conv_w;  // [cout, cin, k]
  std::vector<Tensor> conv_b;  // [cout]

  std::vector<std::array<GruDirectionParams, 2>> gru;  // [layer][0=fwd, 1=bwd]

  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  static EncoderParams init(const EncoderConfig& cfg, std::size_t t, Prng& rng);

  std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
  std::vector<Tensor> params() const;
};

inline Tensor xavier_uniform(std::vector<std::size_t> shape, std::size_t fan_in,
                             std::size_t fan_out, Prng& rng, bool trainable = true) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  if (trainable) t.set_requires_grad(true);
  return t;
}

inline Tensor zeros_param(std::vector<std::size_t> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

inline EncoderParams EncoderParams::init(const EncoderConfig& cfg, std::size_t t, Prng& rng) {
  EncoderParams p;
  p.cfg = cfg;
  p.series_len = t;
  const std::size_t o = static_cast<std::size_t>(cfg.out_dim);
  const std::size_t hidden = static_cast<std::size_t>(cfg.mlp_hidden);
  detail::require(cfg.out_dim >= 1, "encoder: out_dim must be >= 1");

  std::size_t mlp_in = 0;
  if (cfg.variant == EncoderVariant::kCnn) {
    std::size_t cin = 1;
    for (const int cout : cfg.cnn_channels) {
      const std::size_t co = static_cast<std::size_t>(cout);
      const std::size_t k = static_cast<std::size_t>(cfg.cnn_kernel);
      p.conv_w.push_back(xavier_uniform({co, cin, k}, cin * k, co * k, rng));
      p.conv_b.push_back(zeros_param({co}));
      cin = co;
    }
    mlp_in = cnn_flat_dim(cfg, t);
  } else {
    const std::size_t h = static_cast<std::size_t>(cfg.gru_window);
    std::size_t in = 1;
    for (int l = 0; l < cfg.gru_layers; ++l) {
      std::array<GruDirectionParams, 2> layer;
      for (auto& dir : layer) {
        dir.w_ih = xavier_uniform({3 * h, in}, in, 3 * h, rng);
        dir.w_hh = xavier_uniform({3 * h, h}, h, 3 * h, rng);
        dir.b_ih = zeros_param({3 * h});
        dir.b_hh = zeros_param({3 * h});
      }
      p.gru.push_back(std::move(layer));
      in = 2 * h;
    }
    mlp_in = 2 * h;
    gru_window_count(cfg, t);  // validates t >= tau
  }

  p.mlp_w1 = xavier_uniform({mlp_in, hidden}, mlp_in, hidden, rng);
  p.mlp_b1 = zeros_param({hidden});
  p.mlp_w2 = xavier_uniform({hidden, o}, hidden, o, rng);
  if (cfg.out_gain != 1.0)
    for (double& v : p.mlp_w2.values()) v *= cfg.out_gain;
  p.mlp_b2 = zeros_param({o});
  return p;
}

inline std::vector<std::pair<std::string, Tensor>> EncoderParams::named_params(
    const std::string& prefix) const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < conv_w.size(); ++i) {
    out.emplace_back(prefix + ".conv" + std::to_string(i + 1) + ".w", conv_w[i]);
    out.emplace_back(prefix + ".conv" + std::to_string(i + 1) + ".b", conv_b[i]);
  }
  for (std::size_t l = 0; l < gru.size(); ++l) {
    const std::array<std::string, 2> dir_name = {"fwd", "bwd"};
    for (std::size_t d = 0; d < 2; ++d) {
      const std::string base = prefix + ".gru" + std::to_string(l + 1) + "." + dir_name[d];
      out.emplace_back(base + ".w_ih", gru[l][d].w_ih);
      out.emplace_back(base + ".w_hh", gru[l][d].w_hh);
      out.emplace_back(base + ".b_ih", gru[l][d].b_ih);
      out.emplace_back(base + ".b_hh", gru[l][d].b_hh);
    }
  }
  out.emplace_back(prefix + ".mlp.w1", mlp_w1);
  out.emplace_back(prefix + ".mlp.b1", mlp_b1);
  out.emplace_back(prefix + ".mlp.w2", mlp_w2);
  out.emplace_back(prefix + ".mlp.b2", mlp_b2);
  return out;
}

inline std::vector<Tensor> EncoderParams::params() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named_params("e")) out.push_back(t);
  return out;
}

namespace detail {

inline Tensor encoder_mlp(const Tensor& x, const EncoderParams& p) {
  Tensor hidden = relu(add_rowvec(matmul(x, p.mlp_w1), p.mlp_b1));
  return add_rowvec(matmul(hidden, p.mlp_w2), p.mlp_b2);
}

// [rows x 1-channel x t] batch holding every ROI series of every sample.
inline Tensor flatten_series(const std::vector<const Tensor*>& xs) {
  const std::size_t v = xs[0]->rows(), t = xs[0]->cols();
  std::vector<double> flat;
  flat.reserve(xs.size() * v * t);
  for (const Tensor* x : xs) {
    require(x->rows() == v && x->cols() == t, "encoder: samples must share v and t");
    flat.insert(flat.end(), x->values().begin(), x->values().end());
  }
  return Tensor::from({xs.size() * v, 1, t}, std::move(flat));
}

inline Tensor cnn_encode_batch(const std::vector<const Tensor*>& xs, const EncoderParams& p) {
  const std::size_t rows = xs.size() * xs[0]->rows();
  Tensor h = flatten_series(xs);
  for (std::size_t u = 0; u < p.conv_w.size(); ++u)
    h = relu(conv1d_valid(h, p.conv_w[u], p.conv_b[u]));
  h = maxpool1d(h, static_cast<std::size_t>(p.cfg.cnn_pool));
  h = reshape(h, {rows, h.dim(1) * h.dim(2)});
  return encoder_mlp(h, p);
}

inline Tensor gru_encode_batch(const std::vector<const Tensor*>& xs, const EncoderParams& p) {
  const std::size_t v = xs[0]->rows(), t = xs[0]->cols();
  const std::size_t tau = static_cast<std::size_t>(p.cfg.gru_window);
  const std::size_t z = gru_window_count(p.cfg, t);
  const std::size_t n_seq = xs.size() * v * z;

  // [tau, n_seq, 1] with the trailing partial window zero-padded
  std::vector<double> flat(tau * n_seq, 0.0);
  for (std::size_t b = 0; b < xs.size(); ++b) {
    const Tensor& x = *xs[b];
    for (std::size_t r = 0; r < v; ++r)
      for (std::size_t w = 0; w < z; ++w) {
        const std::size_t seq = (b * v + r) * z + w;
        for (std::size_t s = 0; s < tau; ++s) {
          const std::size_t col = w * tau + s;
          if (col < t) flat[s * n_seq + seq] = x.at(r, col);
        }
      }
  }
  Tensor h = Tensor::from({tau, n_seq, 1}, std::move(flat));

  Tensor fwd_out, bwd_out;
  for (std::size_t l = 0; l < p.gru.size(); ++l) {
    const auto& fw = p.gru[l][0];
    const auto& bw = p.gru[l][1];
    fwd_out = gru_layer(h, fw.w_ih, fw.w_hh, fw.b_ih, fw.b_hh);
    bwd_out = gru_layer(h, bw.w_ih, bw.w_hh, bw.b_ih, bw.b_hh, /*time_reversed=*/true);
    if (l + 1 < p.gru.size()) h = concat_feat(fwd_out, bwd_out);
  }
  const std::size_t hdim = fwd_out.dim(2);
  // per-window code: final forward state next to final backward state (2 tau)
  Tensor last_f = timestep(fwd_out, tau - 1);
  Tensor first_b = timestep(bwd_out, 0);
  Tensor window_code = reshape(concat_feat(reshape(last_f, {1, n_seq, hdim}),
                                           reshape(first_b, {1, n_seq, hdim})),
                               {n_seq, 2 * hdim});
  Tensor per_roi = p.cfg.gru_aggregate == WindowAggregate::kMean
                       ? group_mean_rows(window_code, z)
                       : group_last_rows(window_code, z);
  return encoder_mlp(per_roi, p);
}

}  // namespace detail

// Encodes a batch of samples; returns [B * v x o] with rows grouped by sample.
inline Tensor encode_batch(const std::vector<const Tensor*>& xs, const EncoderParams& p) {
  detail::require(!xs.empty(), "encode_batch: empty batch");
  return p.cfg.variant == EncoderVariant::kCnn ? detail::cnn_encode_batch(xs, p)
                                               : detail::gru_encode_batch(xs, p);
}

// Per-ROI features h_e [v x o] for one sample.
inline Tensor cnn_encode(const Tensor& x, const EncoderParams& p) {
  detail::require(p.cfg.variant == EncoderVariant::kCnn, "cnn_encode: params are not cnn");
  return detail::cnn_encode_batch({&x}, p);
}

inline Tensor gru_encode(const Tensor& x, const EncoderParams& p) {
  detail::require(p.cfg.variant == EncoderVariant::kGru, "gru_encode: params are not gru");
  return detail::gru_encode_batch({&x}, p);
}

inline Tensor encode(const Tensor& x, const EncoderParams& p) { return encode_batch({&x}, p); }

}  // namespace fbn
