#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fbn/tensor.hpp"

namespace fbn {

struct AdamConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Classic Adam with bias correction; weight decay enters as an L2 term added
// to the gradient before the moment updates.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k];
      const std::vector<double>& g = p.grad();
      detail::require(g.size() == p.size() && m_[k].size() == p.size(),
                      "Adam::step: parameter/accumulator shape mismatch");
      double* values = p.data();
      double* m = m_[k].data();
      double* v = v_[k].data();
      const std::size_t n = p.size();
      for (std::size_t i = 0; i < n; ++i) {
        const double grad = g[i] + cfg_.weight_decay * values[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * grad;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * grad * grad;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        values[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  long step_count() const { return step_count_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long step_count_ = 0;
};

}  // namespace fbn
