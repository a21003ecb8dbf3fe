#pragma once

#include <cstdint>
#include <vector>

#include "ganimc/tensor.hpp"

namespace ganimc {

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// Adam with bias correction. Holds first/second moment buffers per parameter;
/// step() consumes the gradients currently in the parameter tensors.
class Adam {
public:
  Adam(std::vector<TensorPtr> params, AdamConfig cfg);

  void step();
  void zero_grad();

  void set_lr(float lr) { cfg_.lr = lr; }
  float lr() const { return cfg_.lr; }
  int64_t steps() const { return t_; }

  const std::vector<TensorPtr>& params() const { return params_; }

  // Moment buffers and step counter, exposed for checkpointing.
  std::vector<std::vector<float>>& moment1() { return m_; }
  std::vector<std::vector<float>>& moment2() { return v_; }
  void set_steps(int64_t t);

private:
  AdamConfig cfg_;
  std::vector<TensorPtr> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  int64_t t_ = 0;
};

}  // namespace ganimc
