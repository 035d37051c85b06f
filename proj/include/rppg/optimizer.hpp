#pragma once

#include <cstddef>
#include <vector>

#include "rppg/tensor.hpp"

namespace rppg {

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);

  /// Updates `params` in place. A parameter whose gradient has a non-finite
  /// entry is left untouched (moments included); returns how many were skipped.
  std::size_t step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

  std::size_t steps() const noexcept { return t_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }

  double lr = 0.0;
  double weight_decay = 0.0;

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace rppg
