#include "amplify/optim.hpp"

#include <cmath>

namespace amplify {

AdamW::AdamW(std::vector<Parameter>& params, double lr, double beta1,
             double beta2, double eps, double weight_decay)
    : params_(&params),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Parameter& p : params) {
    m_.emplace_back(p.tensor.size(), Real(0));
    v_.emplace_back(p.tensor.size(), Real(0));
  }
}

void AdamW::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (size_t pi = 0; pi < params_->size(); ++pi) {
    Parameter& p = (*params_)[pi];
    auto data = p.tensor.mutable_data();
    const bool has_grad = p.tensor.has_grad();
    auto grad = p.tensor.grad();
    Real* m = m_[pi].data();
    Real* v = v_[pi].data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
      const double mi = beta1_ * m[i] + (1.0 - beta1_) * g;
      const double vi = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps_) +
                            weight_decay_ * static_cast<double>(data[i]);
      data[i] = static_cast<Real>(data[i] - lr_ * update);
    }
  }
}

}  // namespace amplify
