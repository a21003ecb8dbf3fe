#pragma once

#include <optional>
#include <string>

#include "ganimc/extractor.hpp"
#include "ganimc/tensor.hpp"

namespace ganimc {

/// Which content term the generator objective uses: plain feature distance or
/// the spatially weighted variant driven by accumulated feature saliency.
enum class Mode { gan_imc, gan_imcw };

const char* mode_name(Mode mode);
std::optional<Mode> parse_mode(const std::string& text);

enum class Reduction { mean, sum };

/// Coefficients of the combined objectives plus the documented behavior
/// switches. Defaults are the published constants.
struct LossWeights {
  float w_adv_mc = 1e-1f;     // gray-input adversarial term
  float w_adv_color = 4e-3f;  // blurred-input adversarial term
  float w_high = 1e-5f;       // deep-feature term inside the content loss
  float w_adv_total = 1e-3f;  // adversarial block in the total objective
  float w_wc = 2e-4f;         // content block in the total objective
  Mode mode = Mode::gan_imcw;
  Reduction d_loss_reduction = Reduction::mean;
  Reduction g_adv_reduction = Reduction::sum;
  // The shallow-feature term divides by W*H only, as printed; this switch
  // adds the 1/C factor for experiments.
  bool include_channel_norm_low = false;

  void validate() const;  // ContractError on negative weights
};

namespace loss {

/// Mean squared error over every element (batch, channels and space).
TensorPtr pixel(const TensorPtr& sr, const TensorPtr& hr);

/// -log d_real - log(1 - d_fake), reduced over the batch; probabilities are
/// clamped to [1e-7, 1-1e-7] first.
TensorPtr discriminator(const TensorPtr& d_real, const TensorPtr& d_fake,
                        Reduction reduction = Reduction::mean);

/// -sum log d_fake over the batch (or mean when configured).
TensorPtr generator_adv(const TensorPtr& d_fake,
                        Reduction reduction = Reduction::sum);

/// l_img + w_adv_mc * l_mc + w_adv_color * l_color.
TensorPtr total_adv(const TensorPtr& l_img, const TensorPtr& l_mc,
                    const TensorPtr& l_color, const LossWeights& w);

/// Accumulates feature maps over channels and L2-normalizes per item:
/// {N,C,H,W} -> {N,1,H,W} with unit spatial norm. All-zero maps fall back to
/// a uniform unit-norm map with a warning.
TensorPtr spatial_weights(const TensorPtr& features);

/// Shallow-feature distance. In weighted form each image's saliency map
/// (from its own features) multiplies every channel; the SR map is
/// differentiated through, the HR map is constant. Normalized by W*H per
/// image (optionally also C), then averaged over the batch.
TensorPtr low_term(const TensorPtr& low_sr, const TensorPtr& low_hr,
                   bool weighted, bool include_channel_norm);

/// Deep-feature mean squared distance (per image 1/(W*H*C), batch mean).
TensorPtr high_term(const TensorPtr& high_sr, const TensorPtr& high_hr);

/// low_term(weighted) + w_high * high_term over the extractor's two taps.
TensorPtr weighted_content(const TensorPtr& sr, const TensorPtr& hr,
                           const FeatureExtractor& extractor,
                           const LossWeights& w);

/// low_term(unweighted) + w_high * high_term.
TensorPtr content(const TensorPtr& sr, const TensorPtr& hr,
                  const FeatureExtractor& extractor, const LossWeights& w);

/// Dispatches on w.mode.
TensorPtr content_for_mode(const TensorPtr& sr, const TensorPtr& hr,
                           const FeatureExtractor& extractor,
                           const LossWeights& w);

/// l_pixel + w_adv_total * l_adv + w_wc * l_wc.
TensorPtr total(const TensorPtr& l_pixel, const TensorPtr& l_adv,
                const TensorPtr& l_wc, const LossWeights& w);

}  // namespace loss
}  // namespace ganimc
