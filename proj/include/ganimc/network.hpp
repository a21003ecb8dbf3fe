#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ganimc/tensor.hpp"

namespace ganimc {

/// One conv layer plus its optional batch-norm parameters. Layers that are
/// immediately normalized after their activation still carry a bias: the
/// nonlinearity between conv and norm keeps it trainable. Residual-block
/// convs in the generator are normalized directly, so they drop the bias.
struct ConvLayer {
  TensorPtr w;                         // {out, in, k, k}
  TensorPtr b;                         // {out}, null when normalization follows directly
  int stride = 1;
  int pad = 0;
  bool has_bn = false;
  TensorPtr gamma, beta, running_mean, running_var;
};

struct GeneratorSpec {
  int scale = 4;     // 2 or 4
  int blocks = 8;    // residual blocks
  int channels = 64; // trunk width
};

/// Upsampling generator: head conv + LeakyReLU, `blocks` residual blocks of
/// [conv, BN, LeakyReLU, conv, BN] with identity skips, a global skip from
/// the head activation, one nearest-neighbor 2x + conv + LeakyReLU stage per
/// factor of two, and a linear 3-channel tail conv.
class Generator {
 public:
  Generator(GeneratorSpec spec, uint64_t seed);

  /// Raw network output at scale x extent; unclamped so losses see the true
  /// values. Training mode drives batch-norm from batch statistics.
  TensorPtr forward(const TensorPtr& lr, bool training);

  /// Inference pass: running-stat batch norm, output clamped to [0,1].
  TensorPtr generate(const TensorPtr& lr);

  std::vector<TensorPtr> parameters() const;
  std::vector<std::pair<std::string, TensorPtr>> named_tensors() const;
  const GeneratorSpec& spec() const { return spec_; }

 private:
  GeneratorSpec spec_;
  std::vector<ConvLayer> convs_;
};

enum class DiscKind { img, mc, color };

/// Patch discriminators following the published three-column table: a fixed
/// conv plan (with LeakyReLU then BN per row), two fully connected layers and
/// a sigmoid probability head. `img` and `color` take RGB input, `mc` takes
/// a single gray channel.
class Discriminator {
 public:
  Discriminator(DiscKind kind, int input_extent, uint64_t seed);

  /// Probabilities, shape {N, 1}, strictly inside (0,1).
  /// `update_running` only matters in training mode: the generator's
  /// adversarial pass runs on batch statistics without touching the
  /// discriminator's running aggregates.
  TensorPtr forward(const TensorPtr& x, bool training, bool update_running = true);

  std::vector<TensorPtr> parameters() const;
  std::vector<std::pair<std::string, TensorPtr>> named_tensors() const;

  /// One line per layer in the table's token format, e.g.
  /// "Conv (k3, s2, n64), LeakyRelu, BN" or "FC 1024".
  std::string spec_dump() const;

  DiscKind kind() const { return kind_; }
  int input_channels() const { return in_channels_; }
  int input_extent() const { return input_extent_; }
  int flatten_size() const { return flatten_size_; }

 private:
  DiscKind kind_;
  int input_extent_;
  int in_channels_;
  int flatten_size_;
  std::vector<ConvLayer> convs_;
  TensorPtr fc0_w_, fc0_b_, fc1_w_, fc1_b_;
};

const char* disc_kind_name(DiscKind kind);

}  // namespace ganimc
