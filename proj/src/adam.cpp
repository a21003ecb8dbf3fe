#include "ganimc/adam.hpp"

#include <cmath>

#include "ganimc/error.hpp"

namespace ganimc {

Adam::Adam(std::vector<TensorPtr> params, AdamConfig cfg)
    : cfg_(cfg), params_(std::move(params)) {
  if (!(cfg_.lr > 0.0f)) throw ContractError("adam: lr must be positive");
  if (!(cfg_.beta1 >= 0.0f && cfg_.beta1 < 1.0f) ||
      !(cfg_.beta2 >= 0.0f && cfg_.beta2 < 1.0f)) {
    throw ContractError("adam: betas must lie in [0,1)");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    if (!p) throw ContractError("adam: null parameter");
    if (!p->requires_grad) {
      throw ContractError("adam: parameter with shape " + shape_str(p->shape) +
                          " does not require gradients");
    }
    m_.emplace_back(p->data.size(), 0.0f);
    v_.emplace_back(p->data.size(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = *params_[pi];
    auto& m = m_[pi];
    auto& v = v_[pi];
    const size_t n = p.data.size();
    const bool has_g = p.has_grad();
    for (size_t i = 0; i < n; ++i) {
      const float g = has_g ? p.grad[i] : 0.0f;
      m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * g * g;
      const float mhat = static_cast<float>(m[i] / bc1);
      const float vhat = static_cast<float>(v[i] / bc2);
      p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (const auto& p : params_) p->zero_grad();
}

void Adam::set_steps(int64_t t) {
  if (t < 0) throw ContractError("adam: negative step counter");
  t_ = t;
}

}  // namespace ganimc
