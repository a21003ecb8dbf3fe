#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ganimc/tensor.hpp"

namespace ganimc {

/// The two feature maps produced by one extractor pass: `low` from the shallow
/// tap (128 channels, input/2 spatial) and `high` from the deep tap
/// (512 channels, input/16 spatial).
struct FeatureTaps {
  TensorPtr low;
  TensorPtr high;
};

/// Frozen convolutional feature extractor used by the content losses. Sixteen
/// 3x3 conv+ReLU layers in five blocks (64,64 | 128,128 | 256x4 | 512x4 |
/// 512x4) with 2x2 max pooling between blocks. Weights are never optimized;
/// gradients flow only to the input.
class FeatureExtractor {
 public:
  /// Random He-initialized weights, reproducible from the seed.
  static FeatureExtractor seeded(uint64_t seed);

  /// Loads weights from a checkpoint holding tensors named
  /// "block<b>.<i>.weight" / "block<b>.<i>.bias" (b in 1..5, i the 0-based
  /// conv index within its block) and optionally "input_mean" (3 values
  /// subtracted per channel before the first conv). Missing or wrong-shaped
  /// entries raise ImportError listing every offender.
  static FeatureExtractor import_from(const std::string& checkpoint_path);

  /// Runs the stack on NCHW images with 3 channels, values in [0,1] and both
  /// spatial extents divisible by 16. Differentiable with respect to `images`
  /// when it requires gradients.
  FeatureTaps extract(const TensorPtr& images) const;

  const std::vector<TensorPtr>& conv_weights() const { return weights_; }
  const std::vector<TensorPtr>& conv_biases() const { return biases_; }
  const std::vector<float>& input_mean() const { return input_mean_; }

  static const std::vector<int>& channel_plan();

 private:
  FeatureExtractor() = default;
  std::vector<TensorPtr> weights_;
  std::vector<TensorPtr> biases_;
  std::vector<float> input_mean_;  // empty when no shift is applied
};

}  // namespace ganimc
