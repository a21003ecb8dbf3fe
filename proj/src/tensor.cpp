#include "ganimc/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "ganimc/error.hpp"

namespace ganimc {

Tensor::Tensor(std::vector<int> s, bool rg) : shape(std::move(s)), requires_grad(rg) {
  for (int e : shape) {
    if (e < 1) throw ShapeError("tensor extent must be >= 1, got " + shape_str(shape));
  }
  data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
}

void Tensor::zero_grad() {
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
}

bool Tensor::all_finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

float Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() requires a single-element tensor, got shape " +
                        shape_str(shape));
  }
  return data[0];
}

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

TensorPtr make_tensor(std::vector<int> shape, bool requires_grad) {
  return std::make_shared<Tensor>(std::move(shape), requires_grad);
}

TensorPtr make_tensor(std::vector<int> shape, const std::vector<float>& values,
                      bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape), requires_grad);
  if (values.size() != t->data.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(t->shape));
  }
  t->data = values;
  return t;
}

TensorPtr full_tensor(std::vector<int> shape, float value) {
  auto t = std::make_shared<Tensor>(std::move(shape));
  std::fill(t->data.begin(), t->data.end(), value);
  return t;
}

TensorPtr scalar_tensor(float value) { return full_tensor({1}, value); }

TensorPtr detach(const TensorPtr& t) {
  auto out = std::make_shared<Tensor>(t->shape);
  out->data = t->data;
  return out;
}

void backward(const TensorPtr& loss) {
  if (!loss) throw ContractError("backward: null loss");
  if (loss->numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_str(loss->shape));
  }
  if (!loss->requires_grad) return;  // nothing trainable upstream

  // Post-order DFS; the reversed order is a valid reverse-topological sweep.
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> seen;
  std::vector<std::pair<Tensor*, size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor* p = node->parents[next].get();
      ++next;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss->ensure_grad();
  loss->grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
}

void assert_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError("non-finite values in " + what);
}

std::mt19937 make_rng(uint64_t seed) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)};
  return std::mt19937(seq);
}

void fill_normal(Tensor& t, std::mt19937& rng, float stddev) {
  std::normal_distribution<float> dist(0.0f, stddev);
  for (float& v : t.data) v = dist(rng);
}

}  // namespace ganimc
