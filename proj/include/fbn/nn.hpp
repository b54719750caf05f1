#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <limits>
#include <memory>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "fbn/tensor.hpp"

namespace fbn {

// ---------------------------------------------------------------------------
// 1-D convolution, valid padding, stride 1.
//
// x: [N, cin, L] (or [cin, L] for a single sequence)
// w: [cout, cin, k], b: [cout]
// y: [N, cout, L-k+1]

inline Tensor conv1d_valid(const Tensor& x, const Tensor& w, const Tensor& b) {
  const bool batched = x.ndim() == 3;
  detail::require(batched || x.ndim() == 2, "conv1d_valid: input must be [N,cin,L] or [cin,L]");
  detail::require(w.ndim() == 3, "conv1d_valid: kernels must be [cout,cin,k]");
  const std::size_t n = batched ? x.dim(0) : 1;
  const std::size_t cin = batched ? x.dim(1) : x.dim(0);
  const std::size_t len = batched ? x.dim(2) : x.dim(1);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  detail::require(w.dim(1) == cin, "conv1d_valid: channel mismatch");
  detail::require(b.size() == cout, "conv1d_valid: bias length mismatch");
  detail::require(len >= k, "conv1d_valid: sequence shorter than kernel");
  const std::size_t lo = len - k + 1;

  Tensor out = batched ? Tensor::zeros({n, cout, lo}) : Tensor::zeros({cout, lo});
  const double* xv = x.data();
  const double* wv = w.data();
  double* yv = out.data();
  for (std::size_t s = 0; s < n; ++s) {
    const double* xs = xv + s * cin * len;
    double* ys = yv + s * cout * lo;
    for (std::size_t co = 0; co < cout; ++co) {
      double* yrow = ys + co * lo;
      const double bias = b.values()[co];
      for (std::size_t p = 0; p < lo; ++p) yrow[p] = bias;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* xrow = xs + ci * len;
        const double* wrow = wv + (co * cin + ci) * k;
        for (std::size_t q = 0; q < k; ++q) {
          const double wq = wrow[q];
          const double* xq = xrow + q;
          for (std::size_t p = 0; p < lo; ++p) yrow[p] += wq * xq[p];
        }
      }
    }
  }

  if (detail::track(x) || detail::track(w) || detail::track(b)) {
    auto xn = x.node(), wn = w.node(), bn = b.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {xn, wn, bn}, [xn, wn, bn, on, n, cin, len, cout, k, lo]() {
      const double* gy = on->grad.data();
      for (std::size_t s = 0; s < n; ++s) {
        const double* gys = gy + s * cout * lo;
        const double* xs = xn->values.data() + s * cin * len;
        for (std::size_t co = 0; co < cout; ++co) {
          const double* gyrow = gys + co * lo;
          if (bn->requires_grad) {
            bn->ensure_grad();
            double acc = 0.0;
            for (std::size_t p = 0; p < lo; ++p) acc += gyrow[p];
            bn->grad[co] += acc;
          }
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* xrow = xs + ci * len;
            const double* wrow = wn->values.data() + (co * cin + ci) * k;
            if (xn->requires_grad) {
              xn->ensure_grad();
              double* gxrow = xn->grad.data() + (s * cin + ci) * len;
              for (std::size_t q = 0; q < k; ++q) {
                const double wq = wrow[q];
                double* gxq = gxrow + q;
                for (std::size_t p = 0; p < lo; ++p) gxq[p] += wq * gyrow[p];
              }
            }
            if (wn->requires_grad) {
              wn->ensure_grad();
              double* gwrow = wn->grad.data() + (co * cin + ci) * k;
              for (std::size_t q = 0; q < k; ++q) {
                const double* xq = xrow + q;
                double acc = 0.0;
                for (std::size_t p = 0; p < lo; ++p) acc += xq[p] * gyrow[p];
                gwrow[q] += acc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Non-overlapping max pooling along the last axis; trailing remainder is
// dropped; gradient routes to the first maximal element of each window.

inline Tensor maxpool1d(const Tensor& x, std::size_t k) {
  const bool batched = x.ndim() == 3;
  detail::require(batched || x.ndim() == 2, "maxpool1d: input must be [N,c,L] or [c,L]");
  detail::require(k >= 1, "maxpool1d: window must be >= 1");
  const std::size_t rows = batched ? x.dim(0) * x.dim(1) : x.dim(0);
  const std::size_t len = batched ? x.dim(2) : x.dim(1);
  detail::require(len >= k, "maxpool1d: sequence shorter than window");
  const std::size_t lo = len / k;

  Tensor out = batched ? Tensor::zeros({x.dim(0), x.dim(1), lo}) : Tensor::zeros({x.dim(0), lo});
  std::vector<std::size_t> argmax(rows * lo);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * len;
    double* yr = out.data() + r * lo;
    for (std::size_t p = 0; p < lo; ++p) {
      std::size_t best = p * k;
      double mx = xr[best];
      for (std::size_t q = 1; q < k; ++q) {
        if (xr[p * k + q] > mx) {
          mx = xr[p * k + q];
          best = p * k + q;
        }
      }
      yr[p] = mx;
      argmax[r * lo + p] = best;
    }
  }

  if (detail::track(x)) {
    auto xn = x.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {xn}, [xn, on, rows, len, lo, argmax = std::move(argmax)]() {
      xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t p = 0; p < lo; ++p)
          xn->grad[r * len + argmax[r * lo + p]] += on->grad[r * lo + p];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// BatchNorm over the batch axis of a [B x d] matrix.

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;  // the normalization (biased) variance
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t d = 0)
      : running_mean(d, 0.0), running_var(d, 1.0) {}
};

enum class Mode { kTrain, kEval };

inline Tensor batchnorm_1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                           BatchNormState& state, Mode mode) {
  detail::require(x.ndim() == 2, "batchnorm_1d: input must be [B x d]");
  const std::size_t b = x.rows(), d = x.cols();
  detail::require(gamma.size() == d && beta.size() == d, "batchnorm_1d: affine size mismatch");
  detail::require(state.running_mean.size() == d, "batchnorm_1d: state size mismatch");
  detail::require(b >= 1, "batchnorm_1d: empty batch");
  if (mode == Mode::kTrain) detail::require(b >= 2, "batchnorm_1d: train mode needs batch >= 2");

  std::vector<double> mean(d, 0.0), var(d, 0.0);
  if (mode == Mode::kTrain) {
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += x.values()[i * d + j];
    for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = x.values()[i * d + j] - mean[j];
        var[j] += c * c;
      }
    for (std::size_t j = 0; j < d; ++j) var[j] /= static_cast<double>(b);
    const double m = state.momentum;
    for (std::size_t j = 0; j < d; ++j) {
      state.running_mean[j] = (1.0 - m) * state.running_mean[j] + m * mean[j];
      state.running_var[j] = (1.0 - m) * state.running_var[j] + m * var[j];
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  std::vector<double> invstd(d), xhat(b * d);
  for (std::size_t j = 0; j < d; ++j) invstd[j] = 1.0 / std::sqrt(var[j] + state.eps);
  Tensor out = Tensor::zeros({b, d});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (x.values()[i * d + j] - mean[j]) * invstd[j];
      xhat[i * d + j] = xh;
      out.values()[i * d + j] = gamma.values()[j] * xh + beta.values()[j];
    }

  if (detail::track(x) || detail::track(gamma) || detail::track(beta)) {
    auto xn = x.node(), gn = gamma.node(), btn = beta.node();
    TensorNode* on = out.node().get();
    const bool batch_stats = mode == Mode::kTrain;
    detail::attach(out, {xn, gn, btn},
                   [xn, gn, btn, on, b, d, batch_stats, invstd = std::move(invstd),
                    xhat = std::move(xhat)]() {
                     const double* gy = on->grad.data();
                     if (btn->requires_grad) {
                       btn->ensure_grad();
                       for (std::size_t i = 0; i < b; ++i)
                         for (std::size_t j = 0; j < d; ++j) btn->grad[j] += gy[i * d + j];
                     }
                     if (gn->requires_grad) {
                       gn->ensure_grad();
                       for (std::size_t i = 0; i < b; ++i)
                         for (std::size_t j = 0; j < d; ++j)
                           gn->grad[j] += gy[i * d + j] * xhat[i * d + j];
                     }
                     if (xn->requires_grad) {
                       xn->ensure_grad();
                       if (batch_stats) {
                         // dL/dx through batch statistics
                         std::vector<double> sum_gy(d, 0.0), sum_gyxh(d, 0.0);
                         for (std::size_t i = 0; i < b; ++i)
                           for (std::size_t j = 0; j < d; ++j) {
                             sum_gy[j] += gy[i * d + j];
                             sum_gyxh[j] += gy[i * d + j] * xhat[i * d + j];
                           }
                         const double invb = 1.0 / static_cast<double>(b);
                         for (std::size_t i = 0; i < b; ++i)
                           for (std::size_t j = 0; j < d; ++j) {
                             const double g = gn->values[j] * invstd[j];
                             xn->grad[i * d + j] +=
                                 g * (gy[i * d + j] - invb * sum_gy[j] -
                                      xhat[i * d + j] * invb * sum_gyxh[j]);
                           }
                       } else {
                         for (std::size_t i = 0; i < b; ++i)
                           for (std::size_t j = 0; j < d; ++j)
                             xn->grad[i * d + j] += gy[i * d + j] * gn->values[j] * invstd[j];
                       }
                     }
                   });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mean cross entropy from logits, log-sum-exp form.

inline Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels) {
  detail::require(logits.ndim() == 2, "cross_entropy_logits: logits must be [B x C]");
  const std::size_t b = logits.rows(), c = logits.cols();
  detail::require(labels.size() == b, "cross_entropy_logits: label count mismatch");
  for (const int y : labels)
    detail::require(y >= 0 && static_cast<std::size_t>(y) < c,
                    "cross_entropy_logits: label out of range");

  std::vector<double> probs(b * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* z = logits.data() + i * c;
    double mx = z[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(z[j] - lse);
    loss -= z[labels[i]] - lse;
  }
  Tensor out = Tensor::scalar(loss / static_cast<double>(b));

  if (detail::track(logits)) {
    auto ln = logits.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {ln}, [ln, on, b, c, labels, probs = std::move(probs)]() {
      ln->ensure_grad();
      const double g = on->grad[0] / static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const double onehot = static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0;
          ln->grad[i * c + j] += g * (probs[i * c + j] - onehot);
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Single-direction GRU layer over a full sequence, fused forward/backward.
//
// x:    [T, N, in]
// w_ih: [3h, in], w_hh: [3h, h], b_ih: [3h], b_hh: [3h]  (gate order r, z, n)
// out:  [T, N, h], initial hidden state is zero.
//
// r_t = sigmoid(x_t Wr^T + br + h_{t-1} Ur^T + cr)
// z_t = sigmoid(x_t Wz^T + bz + h_{t-1} Uz^T + cz)
// n_t = tanh(x_t Wn^T + bn + r_t .* (h_{t-1} Un^T + cn))
// h_t = (1 - z_t) .* n_t + z_t .* h_{t-1}

inline Tensor gru_layer(const Tensor& x, const Tensor& w_ih, const Tensor& w_hh,
                        const Tensor& b_ih, const Tensor& b_hh, bool time_reversed = false) {
  detail::require(x.ndim() == 3, "gru_layer: input must be [T, N, in]");
  detail::require(w_ih.ndim() == 2 && w_hh.ndim() == 2, "gru_layer: weights must be 2-D");
  const std::size_t t = x.dim(0), n = x.dim(1), in = x.dim(2);
  const std::size_t h = w_hh.cols();
  detail::require(w_ih.rows() == 3 * h && w_hh.rows() == 3 * h, "gru_layer: gate rows must be 3h");
  detail::require(w_ih.cols() == in, "gru_layer: input width mismatch");
  detail::require(b_ih.size() == 3 * h && b_hh.size() == 3 * h, "gru_layer: bias size mismatch");
  detail::require(t >= 1 && n >= 1, "gru_layer: empty sequence");

  // Large per-call buffers are fully overwritten, so they are allocated
  // uninitialized; glibc is told once to keep big chunks heap-resident
  // instead of returning them to the kernel between training steps.
#if defined(__GLIBC__)
  static const bool malloc_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
    return true;
  }();
  (void)malloc_tuned;
#endif

  const bool tracked = grad_mode_flag() &&
                       (x.requires_grad() || w_ih.requires_grad() || w_hh.requires_grad() ||
                        b_ih.requires_grad() || b_hh.requires_grad());

  // Saved activations for the backward pass; evaluation passes skip them and
  // reuse one step-sized scratch block instead. The output tensor itself is
  // the h_1..h_T history, so no separate state buffer is kept.
  const std::size_t save_len = tracked ? t * n * h : n * h;
  auto gate_r = std::shared_ptr<double[]>(new double[save_len]);
  auto gate_z = std::shared_ptr<double[]>(new double[save_len]);
  auto gate_n = std::shared_ptr<double[]>(new double[save_len]);
  auto hidden_n = std::shared_ptr<double[]>(new double[save_len]);  // h_{t-1} Un^T + cn

  // transposed weights so the inner gemm loops run over contiguous gate rows
  std::vector<double> w_ih_t(in * 3 * h), w_hh_t(h * 3 * h);
  for (std::size_t r = 0; r < 3 * h; ++r) {
    for (std::size_t c = 0; c < in; ++c) w_ih_t[c * 3 * h + r] = w_ih.values()[r * in + c];
    for (std::size_t c = 0; c < h; ++c) w_hh_t[c * 3 * h + r] = w_hh.values()[r * h + c];
  }

  // Input-side gate pre-activations in physical (storage) time order.
  std::unique_ptr<double[]> gi_all(new double[t * n * 3 * h]);
  for (std::size_t row = 0; row < t * n; ++row)
    std::copy(b_ih.values().begin(), b_ih.values().end(), gi_all.get() + row * 3 * h);
  detail::gemm_nn(x.data(), w_ih_t.data(), gi_all.get(), t * n, in, 3 * h);

  // `time_reversed` runs the recurrence from the last timestep to the first
  // while reading and writing storage in place, which is what a backward
  // direction of a bi-GRU needs without materialized reversal copies.
  Tensor out = Tensor::zeros({t, n, h});
  std::vector<double> h0(n * h, 0.0);  // eval-mode ping-pong scratch lives here too
  std::unique_ptr<double[]> eval_state(tracked ? nullptr : new double[n * h]);
  std::unique_ptr<double[]> gh_buf(new double[n * 3 * h]);
  double* const gh_data = gh_buf.get();
  for (std::size_t s = 0; s < t; ++s) {
    const std::size_t sp = time_reversed ? t - 1 - s : s;  // physical index
    const std::size_t sp_prev = time_reversed ? sp + 1 : sp - 1;
    const std::size_t s_save = tracked ? s : 0;
    const double* hprev;
    if (s == 0) {
      hprev = h0.data();
    } else if (tracked) {
      hprev = out.data() + sp_prev * n * h;
    } else {
      hprev = eval_state.get();
    }
    for (std::size_t i = 0; i < n; ++i)
      std::copy(b_hh.values().begin(), b_hh.values().end(), gh_data + i * 3 * h);
    detail::gemm_nn(hprev, w_hh_t.data(), gh_data, n, h, 3 * h);
    const double* gi = gi_all.get() + sp * n * 3 * h;
    double* ys = out.data() + sp * n * h;
    for (std::size_t i = 0; i < n; ++i) {
      const double* gir = gi + i * 3 * h;
      const double* ghr = gh_data + i * 3 * h;
      double* gr = gate_r.get() + (s_save * n + i) * h;
      double* gz = gate_z.get() + (s_save * n + i) * h;
      double* gn = gate_n.get() + (s_save * n + i) * h;
      double* ghn = hidden_n.get() + (s_save * n + i) * h;
      const double* hp = hprev + i * h;
      double* yo = ys + i * h;
      for (std::size_t j = 0; j < h; ++j) {
        const double r = detail::fast_sigmoid(gir[j] + ghr[j]);
        const double z = detail::fast_sigmoid(gir[h + j] + ghr[h + j]);
        const double hn = ghr[2 * h + j];
        const double cand = detail::fast_tanh(gir[2 * h + j] + r * hn);
        gr[j] = r;
        gz[j] = z;
        gn[j] = cand;
        ghn[j] = hn;
        yo[j] = (1.0 - z) * cand + z * hp[j];
      }
    }
    if (!tracked) std::copy(ys, ys + n * h, eval_state.get());
  }

  if (detail::track(x) || detail::track(w_ih) || detail::track(w_hh) || detail::track(b_ih) ||
      detail::track(b_hh)) {
    auto xn = x.node(), win = w_ih.node(), whn = w_hh.node(), bin = b_ih.node(),
         bhn = b_hh.node();
    TensorNode* on = out.node().get();
    detail::attach(
        out, {xn, win, whn, bin, bhn},
        [xn, win, whn, bin, bhn, on, t, n, in, h, gate_r, gate_z, gate_n, hidden_n,
         time_reversed]() {
          const bool need_x = xn->requires_grad;
          const bool need_wi = win->requires_grad, need_wh = whn->requires_grad;
          const bool need_bi = bin->requires_grad, need_bh = bhn->requires_grad;
          if (need_x) xn->ensure_grad();
          if (need_wi) win->ensure_grad();
          if (need_wh) whn->ensure_grad();
          if (need_bi) bin->ensure_grad();
          if (need_bh) bhn->ensure_grad();

          std::vector<double> dh(n * h, 0.0);  // gradient w.r.t. h_t
          std::unique_ptr<double[]> gpre_i(new double[t * n * 3 * h]);  // input-side grads
          std::unique_ptr<double[]> gpre_h(new double[t * n * 3 * h]);  // hidden-side grads
          const std::vector<double> zeros_row(n * h, 0.0);
          std::vector<double> dh_prev(n * h);
          for (std::size_t s = t; s-- > 0;) {
            const std::size_t sp = time_reversed ? t - 1 - s : s;  // physical index
            const std::size_t sp_prev = time_reversed ? sp + 1 : sp - 1;
            const double* gy = on->grad.data() + sp * n * h;
            const double* hprev =
                s == 0 ? zeros_row.data() : on->values.data() + sp_prev * n * h;
            double* gpi = gpre_i.get() + sp * n * 3 * h;  // physical, pairs with x
            // stored so block k >= 1 pairs with the state history at block k
            const std::size_t sh = time_reversed ? (s == 0 ? 0 : t - s) : s;
            double* gph = gpre_h.get() + sh * n * 3 * h;
            for (std::size_t i = 0; i < n; ++i) {
              const double* gr_s = gate_r.get() + (s * n + i) * h;
              const double* gz_s = gate_z.get() + (s * n + i) * h;
              const double* gn_s = gate_n.get() + (s * n + i) * h;
              const double* ghn_s = hidden_n.get() + (s * n + i) * h;
              const double* hp = hprev + i * h;
              const double* dhr = dh.data() + i * h;
              const double* gyr = gy + i * h;
              double* gpi_r = gpi + i * 3 * h;
              double* gph_r = gph + i * 3 * h;
              double* dhp = dh_prev.data() + i * h;
              for (std::size_t j = 0; j < h; ++j) {
                const double d = dhr[j] + gyr[j];
                const double r = gr_s[j], z = gz_s[j];
                const double cand = gn_s[j], hn = ghn_s[j];
                const double gz = d * (hp[j] - cand) * z * (1.0 - z);
                const double gn = d * (1.0 - z) * (1.0 - cand * cand);
                const double gr = gn * hn * r * (1.0 - r);
                gpi_r[j] = gr;
                gpi_r[h + j] = gz;
                gpi_r[2 * h + j] = gn;
                gph_r[j] = gr;
                gph_r[h + j] = gz;
                gph_r[2 * h + j] = gn * r;
                dhp[j] = d * z;
              }
            }
            // dh_{t-1} = d .* z + gpre_h(s) * W_hh
            std::fill(dh.begin(), dh.end(), 0.0);
            detail::gemm_nn(gph, whn->values.data(), dh.data(), n, 3 * h, h);
            for (std::size_t i = 0; i < n * h; ++i) dh[i] += dh_prev[i];
          }
          // weight, bias and input gradients batched over all timesteps
          if (need_bi)
            for (std::size_t row = 0; row < t * n; ++row)
              for (std::size_t j = 0; j < 3 * h; ++j) bin->grad[j] += gpre_i[row * 3 * h + j];
          if (need_bh)
            for (std::size_t row = 0; row < t * n; ++row)
              for (std::size_t j = 0; j < 3 * h; ++j) bhn->grad[j] += gpre_h[row * 3 * h + j];
          if (need_wi)
            detail::gemm_tn(gpre_i.get(), xn->values.data(), win->grad.data(), t * n, 3 * h, in);
          if (need_wh) {
            // logical step 0 has a zero previous state and contributes
            // nothing; the remaining steps pair with the output history
            if (t > 1) {
              const double* history = time_reversed ? on->values.data() + n * h
                                                    : on->values.data();
              detail::gemm_tn(gpre_h.get() + n * 3 * h, history, whn->grad.data(),
                              (t - 1) * n, 3 * h, h);
            }
          }
          if (need_x)
            detail::gemm_nn(gpre_i.get(), win->values.data(), xn->grad.data(), t * n, 3 * h, in);
        });
  }
  return out;
}

}  // namespace fbn
