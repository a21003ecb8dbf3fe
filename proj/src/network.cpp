#include "ganimc/network.hpp"

#include <cmath>

#include "ganimc/error.hpp"
#include "ganimc/ops.hpp"

namespace ganimc {
namespace {

constexpr float kLeakySlope = 0.2f;

TensorPtr init_conv_weight(int out_ch, int in_ch, int k, std::mt19937& rng) {
  auto w = make_tensor({out_ch, in_ch, k, k}, true);
  float stddev = std::sqrt(2.0f / (float(in_ch) * float(k) * float(k)));
  fill_normal(*w, rng, stddev);
  return w;
}

TensorPtr init_fc_weight(int out_f, int in_f, std::mt19937& rng) {
  auto w = make_tensor({out_f, in_f}, true);
  fill_normal(*w, rng, std::sqrt(2.0f / float(in_f)));
  return w;
}

TensorPtr zeros_param(int n) { return make_tensor({n}, true); }

ConvLayer make_conv(int in_ch, int out_ch, int k, int stride, bool bias, bool bn,
                    std::mt19937& rng) {
  ConvLayer l;
  l.w = init_conv_weight(out_ch, in_ch, k, rng);
  if (bias) l.b = zeros_param(out_ch);
  l.stride = stride;
  l.pad = k / 2;
  l.has_bn = bn;
  if (bn) {
    l.gamma = full_tensor({out_ch}, 1.0f);
    l.gamma->requires_grad = true;
    l.beta = zeros_param(out_ch);
    l.running_mean = make_tensor({out_ch});
    l.running_var = full_tensor({out_ch}, 1.0f);
  }
  return l;
}

TensorPtr apply_bn(const ConvLayer& l, const TensorPtr& x, bool training,
                   bool update_running) {
  return ops::batch_norm(x, l.gamma, l.beta, l.running_mean, l.running_var,
                         training, 0.1f, 1e-5f, update_running);
}

void collect_params(const ConvLayer& l, std::vector<TensorPtr>& out) {
  out.push_back(l.w);
  if (l.b) out.push_back(l.b);
  if (l.has_bn) {
    out.push_back(l.gamma);
    out.push_back(l.beta);
  }
}

void collect_named(const ConvLayer& l, int idx,
                   std::vector<std::pair<std::string, TensorPtr>>& out) {
  std::string c = "conv." + std::to_string(idx) + ".";
  out.emplace_back(c + "weight", l.w);
  if (l.b) out.emplace_back(c + "bias", l.b);
  if (l.has_bn) {
    std::string b = "bn." + std::to_string(idx) + ".";
    out.emplace_back(b + "gamma", l.gamma);
    out.emplace_back(b + "beta", l.beta);
    out.emplace_back(b + "running_mean", l.running_mean);
    out.emplace_back(b + "running_var", l.running_var);
  }
}

// Conv rows of the three table columns: kernel, stride, filters, BN flag.
struct ConvRow {
  int k, s, n;
  bool bn;
};

const std::vector<ConvRow>& conv_plan(DiscKind kind) {
  static const std::vector<ConvRow> deep = {
      {3, 1, 64, false}, {3, 2, 64, true},  {3, 1, 128, true}, {3, 2, 128, true},
      {3, 1, 256, true}, {3, 2, 256, true}, {3, 1, 512, true}, {3, 1, 512, true}};
  static const std::vector<ConvRow> color = {{11, 4, 48, false}, {5, 2, 64, true},
                                             {3, 1, 128, true},  {3, 2, 128, true},
                                             {3, 1, 128, true},  {3, 2, 64, true}};
  return kind == DiscKind::color ? color : deep;
}

}  // namespace

const char* disc_kind_name(DiscKind kind) {
  switch (kind) {
    case DiscKind::img: return "img";
    case DiscKind::mc: return "mc";
    default: return "color";
  }
}

Generator::Generator(GeneratorSpec spec, uint64_t seed) : spec_(spec) {
  if (spec_.scale != 2 && spec_.scale != 4)
    throw ContractError("generator scale must be 2 or 4, got " +
                        std::to_string(spec_.scale));
  if (spec_.blocks < 1)
    throw ContractError("generator needs at least one residual block");
  if (spec_.channels < 1)
    throw ContractError("generator trunk width must be positive");
  auto rng = make_rng(seed);
  int ch = spec_.channels;
  convs_.push_back(make_conv(3, ch, 3, 1, true, false, rng));  // head
  for (int b = 0; b < spec_.blocks; ++b) {
    convs_.push_back(make_conv(ch, ch, 3, 1, false, true, rng));
    convs_.push_back(make_conv(ch, ch, 3, 1, false, true, rng));
  }
  int stages = spec_.scale == 4 ? 2 : 1;
  for (int s = 0; s < stages; ++s)
    convs_.push_back(make_conv(ch, ch, 3, 1, true, false, rng));
  convs_.push_back(make_conv(ch, 3, 3, 1, true, false, rng));  // tail
}

TensorPtr Generator::forward(const TensorPtr& lr, bool training) {
  if (!lr || lr->shape.size() != 4 || lr->shape[1] != 3)
    throw ShapeError("generator expects NCHW input with 3 channels");
  size_t i = 0;
  auto conv = [&](const TensorPtr& x) {
    const ConvLayer& l = convs_[i++];
    return ops::conv2d(x, l.w, l.b, l.stride, l.pad);
  };
  auto head = ops::leaky_relu(conv(lr), kLeakySlope);
  auto x = head;
  for (int b = 0; b < spec_.blocks; ++b) {
    auto skip = x;
    const ConvLayer& l1 = convs_[i];
    x = apply_bn(l1, conv(x), training, training);
    x = ops::leaky_relu(x, kLeakySlope);
    const ConvLayer& l2 = convs_[i];
    x = apply_bn(l2, conv(x), training, training);
    x = ops::add(x, skip);
  }
  x = ops::add(x, head);
  int stages = spec_.scale == 4 ? 2 : 1;
  for (int s = 0; s < stages; ++s) {
    x = ops::upsample_nearest2x(x);
    x = ops::leaky_relu(conv(x), kLeakySlope);
  }
  return conv(x);
}

TensorPtr Generator::generate(const TensorPtr& lr) {
  return ops::clamp(forward(lr, false), 0.0f, 1.0f);
}

std::vector<TensorPtr> Generator::parameters() const {
  std::vector<TensorPtr> out;
  for (const auto& l : convs_) collect_params(l, out);
  return out;
}

std::vector<std::pair<std::string, TensorPtr>> Generator::named_tensors() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  for (size_t i = 0; i < convs_.size(); ++i)
    collect_named(convs_[i], int(i), out);
  return out;
}

Discriminator::Discriminator(DiscKind kind, int input_extent, uint64_t seed)
    : kind_(kind), input_extent_(input_extent) {
  in_channels_ = kind == DiscKind::mc ? 1 : 3;
  const auto& plan = conv_plan(kind);
  int stride_product = 1;
  for (const auto& row : plan) stride_product *= row.s;
  int extent = input_extent;
  for (const auto& row : plan)
    extent = (extent + 2 * (row.k / 2) - row.k) / row.s + 1;
  int flatten = extent * extent * plan.back().n;
  if (input_extent < 1 || input_extent % stride_product != 0)
    throw ContractError(
        std::string("discriminator ") + disc_kind_name(kind) + " input extent " +
        std::to_string(input_extent) + " does not fit the stride plan (total "
        "stride " + std::to_string(stride_product) + ", flatten size would be " +
        std::to_string(flatten) + ")");
  flatten_size_ = flatten;

  auto rng = make_rng(seed);
  int ch = in_channels_;
  for (const auto& row : plan) {
    convs_.push_back(make_conv(ch, row.n, row.k, row.s, true, row.bn, rng));
    ch = row.n;
  }
  fc0_w_ = init_fc_weight(1024, flatten_size_, rng);
  fc0_b_ = zeros_param(1024);
  fc1_w_ = init_fc_weight(1, 1024, rng);
  fc1_b_ = zeros_param(1);
}

TensorPtr Discriminator::forward(const TensorPtr& x, bool training,
                                 bool update_running) {
  if (!x || x->shape.size() != 4 || x->shape[1] != in_channels_)
    throw ShapeError(std::string("discriminator ") + disc_kind_name(kind_) +
                     " expects NCHW input with " + std::to_string(in_channels_) +
                     " channel(s)");
  if (x->shape[2] != input_extent_ || x->shape[3] != input_extent_)
    throw ShapeError(std::string("discriminator ") + disc_kind_name(kind_) +
                     " expects " + std::to_string(input_extent_) + "x" +
                     std::to_string(input_extent_) + " input, got " +
                     std::to_string(x->shape[2]) + "x" +
                     std::to_string(x->shape[3]));
  TensorPtr h = x;
  for (const auto& l : convs_) {
    h = ops::conv2d(h, l.w, l.b, l.stride, l.pad);
    h = ops::leaky_relu(h, kLeakySlope);
    if (l.has_bn) h = apply_bn(l, h, training, training && update_running);
  }
  h = ops::flatten2d(h);
  h = ops::fully_connected(h, fc0_w_, fc0_b_);
  h = ops::fully_connected(h, fc1_w_, fc1_b_);
  return ops::sigmoid(h);
}

std::vector<TensorPtr> Discriminator::parameters() const {
  std::vector<TensorPtr> out;
  for (const auto& l : convs_) collect_params(l, out);
  out.push_back(fc0_w_);
  out.push_back(fc0_b_);
  out.push_back(fc1_w_);
  out.push_back(fc1_b_);
  return out;
}

std::vector<std::pair<std::string, TensorPtr>> Discriminator::named_tensors() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  for (size_t i = 0; i < convs_.size(); ++i)
    collect_named(convs_[i], int(i), out);
  out.emplace_back("fc.0.weight", fc0_w_);
  out.emplace_back("fc.0.bias", fc0_b_);
  out.emplace_back("fc.1.weight", fc1_w_);
  out.emplace_back("fc.1.bias", fc1_b_);
  return out;
}

std::string Discriminator::spec_dump() const {
  std::string out;
  for (const auto& row : conv_plan(kind_)) {
    out += "Conv (k" + std::to_string(row.k) + ", s" + std::to_string(row.s) +
           ", n" + std::to_string(row.n) + "), LeakyRelu";
    if (row.bn) out += ", BN";
    out += "\n";
  }
  out += "FC 1024\nFC 1\n";
  return out;
}

}  // namespace ganimc
