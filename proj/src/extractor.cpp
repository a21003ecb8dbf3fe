#include "ganimc/extractor.hpp"

#include <cmath>

#include "ganimc/checkpoint.hpp"
#include "ganimc/error.hpp"
#include "ganimc/ops.hpp"

namespace ganimc {
namespace {

// Out-channel count of each of the 16 convs; blocks end after indices
// 1, 3, 7, 11 and 15.
const std::vector<int> kPlan = {64,  64,  128, 128, 256, 256, 256, 256,
                                512, 512, 512, 512, 512, 512, 512, 512};

bool block_ends_at(int i) { return i == 1 || i == 3 || i == 7 || i == 11; }

std::string conv_name(int i) {
  int block = 1, local = i;
  for (int j = 0; j < i; ++j)
    if (block_ends_at(j)) {
      ++block;
      local = i - j - 1;
    }
  return "block" + std::to_string(block) + "." + std::to_string(local);
}

}  // namespace

const std::vector<int>& FeatureExtractor::channel_plan() { return kPlan; }

FeatureExtractor FeatureExtractor::seeded(uint64_t seed) {
  FeatureExtractor fe;
  auto rng = make_rng(seed);
  int in_ch = 3;
  for (int out_ch : kPlan) {
    auto w = make_tensor({out_ch, in_ch, 3, 3});
    float stddev = std::sqrt(2.0f / (float(in_ch) * 9.0f));
    fill_normal(*w, rng, stddev);
    fe.weights_.push_back(w);
    fe.biases_.push_back(make_tensor({out_ch}));
    in_ch = out_ch;
  }
  return fe;
}

FeatureExtractor FeatureExtractor::import_from(const std::string& checkpoint_path) {
  auto c = ckpt::load(checkpoint_path);
  FeatureExtractor fe;
  std::string problems;
  auto complain = [&](const std::string& msg) {
    if (!problems.empty()) problems += "; ";
    problems += msg;
  };
  int in_ch = 3;
  for (size_t i = 0; i < kPlan.size(); ++i) {
    int out_ch = kPlan[i];
    std::string base = conv_name(int(i));
    std::vector<int> w_shape = {out_ch, in_ch, 3, 3};
    auto w = c.find(base + ".weight");
    if (!w)
      complain(base + ".weight missing");
    else if (w->shape != w_shape)
      complain(base + ".weight has shape " + shape_str(w->shape) +
               ", expected " + shape_str(w_shape));
    auto b = c.find(base + ".bias");
    if (!b)
      complain(base + ".bias missing");
    else if (b->shape != std::vector<int>{out_ch})
      complain(base + ".bias has shape " + shape_str(b->shape) +
               ", expected " + shape_str({out_ch}));
    fe.weights_.push_back(w);
    fe.biases_.push_back(b);
    in_ch = out_ch;
  }
  if (auto m = c.find("input_mean")) {
    if (m->shape != std::vector<int>{3})
      complain("input_mean has shape " + shape_str(m->shape) +
               ", expected " + shape_str({3}));
    else
      fe.input_mean_ = m->data;
  }
  if (!problems.empty())
    throw ImportError("cannot import feature extractor from " + checkpoint_path +
                      ": " + problems);
  return fe;
}

FeatureTaps FeatureExtractor::extract(const TensorPtr& images) const {
  if (!images || images->shape.size() != 4 || images->shape[1] != 3)
    throw ShapeError("feature extractor expects NCHW input with 3 channels");
  int h = images->shape[2], w = images->shape[3];
  if (h % 16 != 0 || w % 16 != 0)
    throw ContractError("feature extractor input extents must be divisible by "
                        "16, got " + std::to_string(h) + "x" + std::to_string(w) +
                        "; crop the images first");
  TensorPtr x = images;
  if (!input_mean_.empty()) x = ops::sub_channel_mean(x, input_mean_);
  FeatureTaps taps;
  for (size_t i = 0; i < weights_.size(); ++i) {
    x = ops::relu(ops::conv2d(x, weights_[i], biases_[i], 1, 1));
    if (i == 3) taps.low = x;
    if (block_ends_at(int(i))) x = ops::maxpool2x2(x);
  }
  taps.high = x;
  return taps;
}

}  // namespace ganimc
