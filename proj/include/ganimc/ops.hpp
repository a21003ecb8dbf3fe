#pragma once

#include <array>
#include <vector>

#include "ganimc/tensor.hpp"

namespace ganimc::ops {

// Elementwise, same shape on both sides.
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr square(const TensorPtr& x);

/// scale * x + shift, elementwise with scalar coefficients.
TensorPtr affine(const TensorPtr& x, float scale, float shift);
TensorPtr scale(const TensorPtr& x, float s);

/// Natural log. Inputs must be > 0; clamp first when they may saturate.
TensorPtr ln(const TensorPtr& x);

/// Clamp to [lo, hi]; gradient passes where the input lies in [lo, hi].
TensorPtr clamp(const TensorPtr& x, float lo, float hi);

TensorPtr sum_all(const TensorPtr& x);   // -> shape {1}
TensorPtr mean_all(const TensorPtr& x);  // -> shape {1}

/// NCHW -> N,1,H,W, summing across channels.
TensorPtr sum_channels(const TensorPtr& x);

/// NCHW -> N,1,H,W weighted channel sum (C == weight count).
TensorPtr channel_weighted_sum(const TensorPtr& x, const std::vector<float>& w);

/// Subtract a fixed per-channel offset (no gradient for the offset).
TensorPtr sub_channel_mean(const TensorPtr& x, const std::vector<float>& mean);

/// NCHW times an N,1,H,W map, broadcast across channels.
TensorPtr mul_spatial(const TensorPtr& x, const TensorPtr& map);

/// Per batch item, divide an N,1,H,W map by its spatial L2 norm so that the
/// squared entries sum to 1. An all-zero item degenerates to the uniform map
/// 1/sqrt(H*W) (with a warning) and contributes no gradient.
TensorPtr l2_normalize_spatial(const TensorPtr& f);

/// 2-D convolution, square kernel. x: N,C,H,W; w: OC,IC,k,k; optional bias OC.
/// Output spatial extent is floor((H + 2*padding - k)/stride) + 1.
TensorPtr conv2d(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias,
                 int stride, int padding);

/// y = x * W^T + b. x: N,F; W: Out,F; b: Out.
TensorPtr fully_connected(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

/// Elementwise max(x, slope*x); slope must lie in (0,1).
TensorPtr leaky_relu(const TensorPtr& x, float slope);

/// Rectifier (zero negative branch).
TensorPtr relu(const TensorPtr& x);

TensorPtr sigmoid(const TensorPtr& x);

/// Per-channel batch normalization over N,H,W.
/// Training mode normalizes with batch statistics and, when update_running is
/// set, folds them into the running buffers by exponential moving average.
/// Inference mode normalizes with the running buffers.
TensorPtr batch_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                     const TensorPtr& running_mean, const TensorPtr& running_var,
                     bool training, float momentum, float eps, bool update_running);

/// 2x2 max pooling, stride 2. H and W must be even.
TensorPtr maxpool2x2(const TensorPtr& x);

/// Nearest-neighbor 2x upsampling.
TensorPtr upsample_nearest2x(const TensorPtr& x);

/// Symmetric (edge-inclusive) reflect padding of p pixels on every side.
TensorPtr pad_reflect(const TensorPtr& x, int p);

/// Valid-region convolution of every channel with one fixed k x k kernel.
/// The kernel is a constant, not a graph node.
TensorPtr depthwise_conv_valid(const TensorPtr& x, const std::vector<float>& kernel,
                               int ksize);

/// NCHW -> N,(C*H*W).
TensorPtr flatten2d(const TensorPtr& x);

}  // namespace ganimc::ops
