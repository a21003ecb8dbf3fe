#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace ganimc {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major float32 tensor. 4-D tensors are laid out N,C,H,W.
///
/// A tensor is also a node in the autodiff graph: ops set `parents` and
/// `backward_fn`, and backward() runs the recorded functions in reverse
/// topological order. Leaf tensors with requires_grad=true are the
/// trainable parameters; their `grad` buffers accumulate across backward
/// calls until the caller zeroes them.
class Tensor {
public:
  std::vector<int> shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until ensure_grad(); same extent as data
  bool requires_grad = false;

  std::vector<TensorPtr> parents;
  std::function<void()> backward_fn;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, bool rg = false);

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int64_t numel() const;

  void ensure_grad();
  void zero_grad();
  bool has_grad() const { return !grad.empty(); }
  bool all_finite() const;

  /// Value of a single-element tensor.
  float item() const;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);
bool same_shape(const Tensor& a, const Tensor& b);

TensorPtr make_tensor(std::vector<int> shape, bool requires_grad = false);
TensorPtr make_tensor(std::vector<int> shape, const std::vector<float>& values,
                      bool requires_grad = false);
TensorPtr full_tensor(std::vector<int> shape, float value);
TensorPtr scalar_tensor(float value);

/// Copy of the values with no graph edge; gradients stop here.
TensorPtr detach(const TensorPtr& t);

/// Reverse-mode sweep from a scalar loss. Every reachable tensor with
/// requires_grad receives its gradient contribution (accumulated, not
/// overwritten). Throws ContractError if the loss is not a single element.
void backward(const TensorPtr& loss);

/// Throws NumericError naming `what` if any element is NaN/Inf.
void assert_finite(const Tensor& t, const std::string& what);

std::mt19937 make_rng(uint64_t seed);
void fill_normal(Tensor& t, std::mt19937& rng, float stddev);

}  // namespace ganimc
