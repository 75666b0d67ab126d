#pragma once

#include <vector>

#include "amplify/tensor.hpp"

namespace amplify {

/// AdamW with decoupled weight decay: the decay term is applied to the
/// parameter directly and never enters the moment estimates. Moments are
/// bias-corrected. State starts at zero with step counter 0; callers zero
/// gradients between steps.
class AdamW {
 public:
  AdamW(std::vector<Parameter>& params, double lr, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.01);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  int64_t step_count() const { return step_; }

  /// One update over all parameters. A parameter whose grad buffer is
  /// unpopulated is treated as having zero gradient (decay still applies).
  void step();

 private:
  std::vector<Parameter>* params_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  int64_t step_ = 0;
  std::vector<std::vector<Real>> m_, v_;
};

}  // namespace amplify
