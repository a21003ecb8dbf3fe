#include "ganimc/losses.hpp"

#include "ganimc/error.hpp"
#include "ganimc/ops.hpp"

namespace ganimc {

namespace {
constexpr float kProbEps = 1e-7f;

TensorPtr reduce(const TensorPtr& t, Reduction r) {
  return r == Reduction::mean ? ops::mean_all(t) : ops::sum_all(t);
}
}  // namespace

const char* mode_name(Mode mode) {
  return mode == Mode::gan_imc ? "GAN-IMC" : "GAN-IMCW";
}

std::optional<Mode> parse_mode(const std::string& text) {
  if (text == "GAN-IMC") return Mode::gan_imc;
  if (text == "GAN-IMCW") return Mode::gan_imcw;
  return std::nullopt;
}

void LossWeights::validate() const {
  auto check = [](float v, const char* name) {
    if (!(v >= 0.0f))
      throw ContractError(std::string("loss weight ") + name +
                          " must be >= 0, got " + std::to_string(v));
  };
  check(w_adv_mc, "w_adv_mc");
  check(w_adv_color, "w_adv_color");
  check(w_high, "w_high");
  check(w_adv_total, "w_adv_total");
  check(w_wc, "w_wc");
}

namespace loss {

TensorPtr pixel(const TensorPtr& sr, const TensorPtr& hr) {
  return ops::mean_all(ops::square(ops::sub(sr, hr)));
}

TensorPtr discriminator(const TensorPtr& d_real, const TensorPtr& d_fake,
                        Reduction reduction) {
  auto real = ops::clamp(d_real, kProbEps, 1.0f - kProbEps);
  auto fake = ops::clamp(d_fake, kProbEps, 1.0f - kProbEps);
  auto per_item = ops::sub(ops::scale(ops::ln(real), -1.0f),
                           ops::ln(ops::affine(fake, -1.0f, 1.0f)));
  return reduce(per_item, reduction);
}

TensorPtr generator_adv(const TensorPtr& d_fake, Reduction reduction) {
  auto fake = ops::clamp(d_fake, kProbEps, 1.0f - kProbEps);
  return ops::scale(reduce(ops::ln(fake), reduction), -1.0f);
}

TensorPtr total_adv(const TensorPtr& l_img, const TensorPtr& l_mc,
                    const TensorPtr& l_color, const LossWeights& w) {
  w.validate();
  return ops::add(l_img, ops::add(ops::scale(l_mc, w.w_adv_mc),
                                  ops::scale(l_color, w.w_adv_color)));
}

TensorPtr spatial_weights(const TensorPtr& features) {
  return ops::l2_normalize_spatial(ops::sum_channels(features));
}

TensorPtr low_term(const TensorPtr& low_sr, const TensorPtr& low_hr,
                   bool weighted, bool include_channel_norm) {
  if (!low_sr || !low_hr || low_sr->shape != low_hr->shape)
    throw ShapeError("low-feature term needs equal-shaped feature maps");
  TensorPtr d;
  if (weighted) {
    auto a_sr = spatial_weights(low_sr);
    auto a_hr = detach(spatial_weights(low_hr));
    d = ops::sub(ops::mul_spatial(low_sr, a_sr), ops::mul_spatial(low_hr, a_hr));
  } else {
    d = ops::sub(low_sr, low_hr);
  }
  const auto& s = low_sr->shape;
  double norm = double(s[0]) * double(s[2]) * double(s[3]);
  if (include_channel_norm) norm *= double(s[1]);
  return ops::scale(ops::sum_all(ops::square(d)), float(1.0 / norm));
}

TensorPtr high_term(const TensorPtr& high_sr, const TensorPtr& high_hr) {
  if (!high_sr || !high_hr || high_sr->shape != high_hr->shape)
    throw ShapeError("deep-feature term needs equal-shaped feature maps");
  return ops::mean_all(ops::square(ops::sub(high_sr, high_hr)));
}

namespace {
TensorPtr content_impl(const TensorPtr& sr, const TensorPtr& hr,
                       const FeatureExtractor& extractor, const LossWeights& w,
                       bool weighted) {
  w.validate();
  if (!sr || !hr || sr->shape != hr->shape)
    throw ShapeError("content loss needs equal-shaped images");
  auto taps_sr = extractor.extract(sr);
  auto taps_hr = extractor.extract(hr);
  auto low = low_term(taps_sr.low, taps_hr.low, weighted,
                      w.include_channel_norm_low);
  auto high = high_term(taps_sr.high, taps_hr.high);
  return ops::add(low, ops::scale(high, w.w_high));
}
}  // namespace

TensorPtr weighted_content(const TensorPtr& sr, const TensorPtr& hr,
                           const FeatureExtractor& extractor,
                           const LossWeights& w) {
  return content_impl(sr, hr, extractor, w, true);
}

TensorPtr content(const TensorPtr& sr, const TensorPtr& hr,
                  const FeatureExtractor& extractor, const LossWeights& w) {
  return content_impl(sr, hr, extractor, w, false);
}

TensorPtr content_for_mode(const TensorPtr& sr, const TensorPtr& hr,
                           const FeatureExtractor& extractor,
                           const LossWeights& w) {
  return w.mode == Mode::gan_imc ? content(sr, hr, extractor, w)
                                 : weighted_content(sr, hr, extractor, w);
}

TensorPtr total(const TensorPtr& l_pixel, const TensorPtr& l_adv,
                const TensorPtr& l_wc, const LossWeights& w) {
  w.validate();
  return ops::add(l_pixel, ops::add(ops::scale(l_adv, w.w_adv_total),
                                    ops::scale(l_wc, w.w_wc)));
}

}  // namespace loss
}  // namespace ganimc
