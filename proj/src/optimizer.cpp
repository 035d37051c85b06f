#include "rppg/optimizer.hpp"

#include <cmath>

#include "rppg/error.hpp"

namespace rppg {

AdamW::AdamW(double lr_, double weight_decay_, double beta1, double beta2, double eps)
    : lr(lr_), weight_decay(weight_decay_), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) throw Error("AdamW: lr and decay must be >= 0");
}

std::size_t AdamW::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw Error("AdamW: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  if (m_.size() != params.size()) throw Error("AdamW: parameter set changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (g.shape() != p.shape()) throw Error("AdamW: gradient shape mismatch");
    if (!g.all_finite()) {
      ++skipped;
      continue;
    }
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      p[k] -= lr * weight_decay * p[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
  return skipped;
}

}  // namespace rppg
