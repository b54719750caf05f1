#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <limits>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "fbn/common.hpp"

namespace fbn {

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Branch-free exp with a degree-10 polynomial on [-ln2/2, ln2/2] and an
// exponent rebuild through the IEEE-754 bit layout. Relative error stays a
// few ulps, the loop bodies auto-vectorize, and results are bit-stable
// across libm versions. Arguments far outside the finite range clamp.
inline double fast_exp(double x) {
  constexpr double kLog2e = 1.4426950408889634074;
  constexpr double kLn2Hi = 6.93145751953125e-1;
  constexpr double kLn2Lo = 1.42860682030941723212e-6;
  // arithmetic clamp keeps the loop free of control flow so it vectorizes
  x = 0.5 * (x + 708.0 - std::fabs(x - 708.0));  // min(x, 708)
  x = 0.5 * (x - 708.0 + std::fabs(x + 708.0));  // max(x, -708)
  // round to nearest even via the 2^52 shifter; keeps the loop vectorizable
  constexpr double kShifter = 6755399441055744.0;  // 1.5 * 2^52
  const double fn = (x * kLog2e + kShifter) - kShifter;
  const double r = (x - fn * kLn2Hi) - fn * kLn2Lo;
  // Taylor/Horner for e^r, |r| <= 0.3466; degree 10 reaches ~1 ulp
  double p = 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  const long long biased = static_cast<long long>(fn) + 1023;
  std::uint64_t bits = static_cast<std::uint64_t>(biased) << 52;
  double scale;
  std::memcpy(&scale, &bits, sizeof(scale));
  return p * scale;
}

inline double fast_sigmoid(double x) { return 1.0 / (1.0 + fast_exp(-x)); }

// tanh via the exp identity; exactly 0 at 0.
inline double fast_tanh(double x) {
  const double e = fast_exp(-2.0 * std::fabs(x));
  const double t = (1.0 - e) / (1.0 + e);
  return x < 0.0 ? -t : t;
}

// C[m x p] += A[m x k] * B[k x p]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * p;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = arow[l];
      if (av == 0.0) continue;
      const double* brow = b + l * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += A[m x p] * B[k x p]^T   (dot products of rows)
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t p,
                    std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * p;
    double* crow = c + i * k;
    for (std::size_t j = 0; j < k; ++j) {
      const double* brow = b + j * p;
      double acc = 0.0;
      for (std::size_t l = 0; l < p; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

// C[k x p] += A[m x k]^T * B[m x p]   (sum of rank-1 row outer products)
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t p) {
  for (std::size_t l = 0; l < m; ++l) {
    const double* arow = a + l * k;
    const double* brow = b + l * p;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// Thread-local switch for building the backward graph; evaluation passes
// run with it off to skip node bookkeeping.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool previous;
  NoGradGuard() : previous(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = previous; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;

  std::size_t size() const { return values.size(); }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

// Dense row-major 64-bit tensor participating in a dynamically built
// reverse-mode graph. Value-semantic handle to a shared node.
class Tensor {
 public:
  Tensor() : node_(std::make_shared<TensorNode>()) {}

  static Tensor zeros(std::vector<std::size_t> shape) {
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->values.assign(t.count(t.node_->shape), 0.0);
    return t;
  }

  static Tensor full(std::vector<std::size_t> shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.node_->values.begin(), t.node_->values.end(), value);
    return t;
  }

  static Tensor scalar(double value) { return full({1}, value); }

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values) {
    Tensor t;
    const std::size_t n = t.count(shape);
    detail::require(values.size() == n, "Tensor::from: values length must equal product of shape");
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return node_->shape; }

  std::size_t ndim() const { return node_->shape.size(); }

  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  std::size_t size() const { return node_->values.size(); }

  std::size_t rows() const {
    detail::require(ndim() == 2, "rows(): tensor is not 2-D");
    return node_->shape[0];
  }

  std::size_t cols() const {
    detail::require(ndim() == 2, "cols(): tensor is not 2-D");
    return node_->shape[1];
  }

  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }

  double* data() { return node_->values.data(); }
  const double* data() const { return node_->values.data(); }

  double at(std::size_t r, std::size_t c) const {
    detail::require(ndim() == 2 && r < rows() && c < cols(), "at(): index out of range");
    return node_->values[r * cols() + c];
  }

  double& at(std::size_t r, std::size_t c) {
    detail::require(ndim() == 2 && r < rows() && c < cols(), "at(): index out of range");
    return node_->values[r * cols() + c];
  }

  double item() const {
    detail::require(size() == 1, "item(): tensor is not scalar");
    return node_->values[0];
  }

  bool requires_grad() const { return node_->requires_grad; }

  // Marks a leaf as trainable. Interior nodes derive their flag from parents.
  Tensor& set_requires_grad(bool flag) {
    detail::require(node_->is_leaf, "set_requires_grad: only leaf tensors may be re-flagged");
    node_->requires_grad = flag;
    return *this;
  }

  const std::vector<double>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }

  bool all_finite() const {
    for (const double v : node_->values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  // Leaf copy that shares no graph history.
  Tensor detach() const { return from(node_->shape, node_->values); }

  std::shared_ptr<TensorNode>& node() { return node_; }
  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::size_t count(const std::vector<std::size_t>& shape) const {
    std::size_t n = 1;
    for (const std::size_t d : shape) n *= d;
    return n;
  }

  std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline bool track(const Tensor& a) { return grad_mode_flag() && a.requires_grad(); }

inline void attach(Tensor& out, std::vector<std::shared_ptr<TensorNode>> parents,
                   std::function<void()> backprop) {
  TensorNode* n = out.node().get();
  n->requires_grad = true;
  n->is_leaf = false;
  n->parents = std::move(parents);
  n->backprop = std::move(backprop);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] + b.values()[i];
  if (detail::track(a) || detail::track(b)) {
    auto an = a.node(), bn = b.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an, bn}, [an, bn, on]() {
      const std::size_t n = on->size();
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] - b.values()[i];
  if (detail::track(a) || detail::track(b)) {
    auto an = a.node(), bn = b.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an, bn}, [an, bn, on]() {
      const std::size_t n = on->size();
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] -= on->grad[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
  if (detail::track(a) || detail::track(b)) {
    auto an = a.node(), bn = b.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an, bn}, [an, bn, on]() {
      const std::size_t n = on->size();
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->values[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->values[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * s;
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on, s]() {
      an->ensure_grad();
      const std::size_t n = on->size();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * s;
    });
  }
  return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// Broadcasts a length-c (or 1 x c) bias across the rows of a [r x c] matrix.
inline Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
  detail::require(a.ndim() == 2, "add_rowvec: matrix must be 2-D");
  const std::size_t r = a.rows(), c = a.cols();
  detail::require(bias.size() == c, "add_rowvec: bias length must equal column count");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out.values()[i * c + j] = a.values()[i * c + j] + bias.values()[j];
  if (detail::track(a) || detail::track(bias)) {
    auto an = a.node(), bn = bias.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an, bn}, [an, bn, on, r, c]() {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < r * c; ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) bn->grad[j] += on->grad[i * c + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.ndim() == 2 && b.ndim() == 2, "matmul: inputs must be 2-D");
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions disagree");
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  Tensor out = Tensor::zeros({m, p});
  detail::gemm_nn(a.data(), b.data(), out.data(), m, k, p);
  if (detail::track(a) || detail::track(b)) {
    auto an = a.node(), bn = b.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an, bn}, [an, bn, on, m, k, p]() {
      if (an->requires_grad) {
        an->ensure_grad();
        detail::gemm_nt(on->grad.data(), bn->values.data(), an->grad.data(), m, p, k);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        detail::gemm_tn(an->values.data(), on->grad.data(), bn->grad.data(), m, k, p);
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require(a.ndim() == 2, "transpose: input must be 2-D");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.values()[j * r + i] = a.values()[i * c + j];
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on, r, c]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += on->grad[j * r + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// activations

enum class Act { kRelu, kTanh, kSigmoid };

inline Tensor activation(const Tensor& a, Act kind) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  switch (kind) {
    case Act::kRelu:
      for (std::size_t i = 0; i < n; ++i) {
        const double v = a.values()[i];
        out.values()[i] = v > 0.0 ? v : 0.0;
      }
      break;
    case Act::kTanh:
      for (std::size_t i = 0; i < n; ++i) out.values()[i] = detail::fast_tanh(a.values()[i]);
      break;
    case Act::kSigmoid:
      for (std::size_t i = 0; i < n; ++i) out.values()[i] = detail::fast_sigmoid(a.values()[i]);
      break;
  }
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on, kind]() {
      an->ensure_grad();
      const std::size_t n = on->size();
      switch (kind) {
        case Act::kRelu:
          // subgradient 0 at the kink
          for (std::size_t i = 0; i < n; ++i)
            an->grad[i] += an->values[i] > 0.0 ? on->grad[i] : 0.0;
          break;
        case Act::kTanh:
          for (std::size_t i = 0; i < n; ++i) {
            const double y = on->values[i];
            an->grad[i] += on->grad[i] * (1.0 - y * y);
          }
          break;
        case Act::kSigmoid:
          for (std::size_t i = 0; i < n; ++i) {
            const double y = on->values[i];
            an->grad[i] += on->grad[i] * y * (1.0 - y);
          }
          break;
      }
    });
  }
  return out;
}

inline Tensor relu(const Tensor& a) { return activation(a, Act::kRelu); }
inline Tensor tanh_act(const Tensor& a) { return activation(a, Act::kTanh); }
inline Tensor sigmoid_act(const Tensor& a) { return activation(a, Act::kSigmoid); }

// Per-row softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& a) {
  detail::require(a.ndim() == 2, "softmax_rows: input must be 2-D");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = a.data() + i * c;
    double* y = out.data() + i * c;
    double mx = x[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = detail::fast_exp(x[j] - mx);
      sum += y[j];
    }
    for (std::size_t j = 0; j < c; ++j) y[j] /= sum;
  }
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on, r, c]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < r; ++i) {
        const double* y = on->values.data() + i * c;
        const double* gy = on->grad.data() + i * c;
        double* gx = an->grad.data() + i * c;
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < c; ++j) gx[j] += (gy[j] - dot) * y[j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (const double v : a.values()) s += v;
  Tensor out = Tensor::scalar(s);
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on]() {
      an->ensure_grad();
      const double g = on->grad[0];
      for (double& gi : an->grad) gi += g;
    });
  }
  return out;
}

inline Tensor mean_all(const Tensor& a) {
  detail::require(a.size() > 0, "mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

inline Tensor sum_squares(const Tensor& a) {
  double s = 0.0;
  for (const double v : a.values()) s += v * v;
  Tensor out = Tensor::scalar(s);
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on]() {
      an->ensure_grad();
      const double g = on->grad[0];
      const std::size_t n = an->values.size();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += 2.0 * g * an->values[i];
    });
  }
  return out;
}

inline Tensor l1_norm(const Tensor& a) {
  double s = 0.0;
  for (const double v : a.values()) s += std::fabs(v);
  Tensor out = Tensor::scalar(s);
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on]() {
      an->ensure_grad();
      const double g = on->grad[0];
      const std::size_t n = an->values.size();
      for (std::size_t i = 0; i < n; ++i) {
        const double v = an->values[i];
        an->grad[i] += g * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
      }
    });
  }
  return out;
}

// Column sums: [r x c] -> [1 x c].
inline Tensor sum_over_rows(const Tensor& a) {
  detail::require(a.ndim() == 2, "sum_over_rows: input must be 2-D");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros({1, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.values()[j] += a.values()[i * c + j];
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on, r, c]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += on->grad[j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape surgery

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> new_shape) {
  std::size_t n = 1;
  for (const std::size_t d : new_shape) n *= d;
  detail::require(n == a.size(), "reshape: element count must be preserved");
  Tensor out = Tensor::from(std::move(new_shape), a.values());
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on]() {
      an->ensure_grad();
      const std::size_t n = on->size();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

// Rows [r0, r1) of a 2-D tensor.
inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  detail::require(a.ndim() == 2, "slice_rows: input must be 2-D");
  detail::require(r0 < r1 && r1 <= a.rows(), "slice_rows: range out of bounds");
  const std::size_t c = a.cols();
  Tensor out = Tensor::zeros({r1 - r0, c});
  std::copy(a.data() + r0 * c, a.data() + r1 * c, out.data());
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on, r0, c]() {
      an->ensure_grad();
      const std::size_t n = on->size();
      for (std::size_t i = 0; i < n; ++i) an->grad[r0 * c + i] += on->grad[i];
    });
  }
  return out;
}

// Vertical concatenation of 2-D tensors with equal column counts.
inline Tensor stack_rows(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "stack_rows: empty input");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    detail::require(p.ndim() == 2 && p.cols() == c, "stack_rows: column mismatch");
    total += p.rows();
  }
  Tensor out = Tensor::zeros({total, c});
  std::size_t row = 0;
  bool any = false;
  for (const Tensor& p : parts) {
    std::copy(p.data(), p.data() + p.size(), out.data() + row * c);
    row += p.rows();
    any = any || detail::track(p);
  }
  if (any) {
    std::vector<std::shared_ptr<TensorNode>> parents;
    parents.reserve(parts.size());
    for (const Tensor& p : parts) parents.push_back(p.node());
    TensorNode* on = out.node().get();
    detail::attach(out, parents, [on]() {
      std::size_t offset = 0;
      for (const auto& pn : on->parents) {
        const std::size_t n = pn->size();
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) pn->grad[i] += on->grad[offset + i];
        }
        offset += n;
      }
    });
  }
  return out;
}

// Reverses the leading (time) axis of a [T, N, C] tensor.
inline Tensor reverse_time(const Tensor& a) {
  detail::require(a.ndim() == 3, "reverse_time: input must be 3-D");
  const std::size_t t = a.dim(0), block = a.dim(1) * a.dim(2);
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t s = 0; s < t; ++s)
    std::copy(a.data() + s * block, a.data() + (s + 1) * block, out.data() + (t - 1 - s) * block);
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on, t, block]() {
      an->ensure_grad();
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t i = 0; i < block; ++i)
          an->grad[s * block + i] += on->grad[(t - 1 - s) * block + i];
    });
  }
  return out;
}

// [T, N, C] -> [N, C] at time index s.
inline Tensor timestep(const Tensor& a, std::size_t s) {
  detail::require(a.ndim() == 3, "timestep: input must be 3-D");
  detail::require(s < a.dim(0), "timestep: index out of range");
  const std::size_t block = a.dim(1) * a.dim(2);
  Tensor out = Tensor::zeros({a.dim(1), a.dim(2)});
  std::copy(a.data() + s * block, a.data() + (s + 1) * block, out.data());
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on, s, block]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < block; ++i) an->grad[s * block + i] += on->grad[i];
    });
  }
  return out;
}

// Concatenates two [T, N, C?] tensors along the feature axis.
inline Tensor concat_feat(const Tensor& a, const Tensor& b) {
  detail::require(a.ndim() == 3 && b.ndim() == 3, "concat_feat: inputs must be 3-D");
  detail::require(a.dim(0) == b.dim(0) && a.dim(1) == b.dim(1), "concat_feat: T/N mismatch");
  const std::size_t t = a.dim(0), n = a.dim(1), ca = a.dim(2), cb = b.dim(2);
  Tensor out = Tensor::zeros({t, n, ca + cb});
  for (std::size_t s = 0; s < t * n; ++s) {
    std::copy(a.data() + s * ca, a.data() + (s + 1) * ca, out.data() + s * (ca + cb));
    std::copy(b.data() + s * cb, b.data() + (s + 1) * cb, out.data() + s * (ca + cb) + ca);
  }
  if (detail::track(a) || detail::track(b)) {
    auto an = a.node(), bn = b.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an, bn}, [an, bn, on, t, n, ca, cb]() {
      const std::size_t rows = t * n;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t s = 0; s < rows; ++s)
          for (std::size_t j = 0; j < ca; ++j)
            an->grad[s * ca + j] += on->grad[s * (ca + cb) + j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t s = 0; s < rows; ++s)
          for (std::size_t j = 0; j < cb; ++j)
            bn->grad[s * cb + j] += on->grad[s * (ca + cb) + ca + j];
      }
    });
  }
  return out;
}

// Means of consecutive row groups: [R x C] with R = G * group -> [G x C].
inline Tensor group_mean_rows(const Tensor& a, std::size_t group) {
  detail::require(a.ndim() == 2, "group_mean_rows: input must be 2-D");
  detail::require(group >= 1 && a.rows() % group == 0, "group_mean_rows: rows not divisible");
  const std::size_t g = a.rows() / group, c = a.cols();
  const double inv = 1.0 / static_cast<double>(group);
  Tensor out = Tensor::zeros({g, c});
  for (std::size_t i = 0; i < g; ++i)
    for (std::size_t w = 0; w < group; ++w)
      for (std::size_t j = 0; j < c; ++j)
        out.values()[i * c + j] += a.values()[(i * group + w) * c + j] * inv;
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on, g, c, group, inv]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < g; ++i)
        for (std::size_t w = 0; w < group; ++w)
          for (std::size_t j = 0; j < c; ++j)
            an->grad[(i * group + w) * c + j] += on->grad[i * c + j] * inv;
    });
  }
  return out;
}

// Last row of each consecutive group: [R x C] with R = G * group -> [G x C].
inline Tensor group_last_rows(const Tensor& a, std::size_t group) {
  detail::require(a.ndim() == 2, "group_last_rows: input must be 2-D");
  detail::require(group >= 1 && a.rows() % group == 0, "group_last_rows: rows not divisible");
  const std::size_t g = a.rows() / group, c = a.cols();
  Tensor out = Tensor::zeros({g, c});
  for (std::size_t i = 0; i < g; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out.values()[i * c + j] = a.values()[(i * group + group - 1) * c + j];
  if (detail::track(a)) {
    auto an = a.node();
    TensorNode* on = out.node().get();
    detail::attach(out, {an}, [an, on, g, c, group]() {
      an->ensure_grad();
      for (std::size_t i = 0; i < g; ++i)
        for (std::size_t j = 0; j < c; ++j)
          an->grad[(i * group + group - 1) * c + j] += on->grad[i * c + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reverse-mode accumulation

// Accumulates d(root)/d(leaf) into every tracked leaf's grad. Interior
// gradients are reset on each call, leaf gradients accumulate across calls.
inline void backward(const Tensor& root) {
  detail::require(root.size() == 1, "backward: root must be scalar");
  if (!root.requires_grad()) return;  // constant graph, nothing to do

  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (TensorNode* node : order) {
    if (!node->is_leaf) node->grad.assign(node->values.size(), 0.0);
    node->ensure_grad();
  }
  root.node()->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop();
  }
}

}  // namespace fbn
