#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ganimc/tensor.hpp"

namespace ganimc::img {

// Grayscale projection coefficients used everywhere a luminance plane is
// formed. The green weight is 0.578 by design; the three do not sum to 1.
inline constexpr float kGrayR = 0.299f;
inline constexpr float kGrayG = 0.578f;
inline constexpr float kGrayB = 0.114f;

inline std::vector<float> gray_weights() { return {kGrayR, kGrayG, kGrayB}; }

/// Planar channel-major image, values nominally in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  size_t plane() const { return static_cast<size_t>(height) * width; }
};

Image make_image(int height, int width, int channels, float fill = 0.0f);

/// 8-bit RGB PNG only; anything else raises FormatError (IoError for
/// filesystem trouble). Values decode to v/255.
Image load_png(const std::string& path);

/// Saves 3-channel images as RGB and 1-channel images as grayscale PNG,
/// rounding v*255 to the nearest integer with clamping.
void save_png(const Image& image, const std::string& path);

struct GaussianKernelSpec {
  int size = 21;
  int stride = 1;
  float mu_x = 0.0f;
  float mu_y = 0.0f;
  float sigma_x = 1.7320508f;  // sqrt(3)
  float sigma_y = 1.7320508f;
  bool normalize = true;
};

/// size x size kernel, row-major. Raw entries evaluate the 2-D Gaussian
/// density at integer offsets from the center; normalize divides by the sum.
std::vector<float> gaussian_kernel(const GaussianKernelSpec& spec);

Image to_gray(const Image& rgb);

/// Same-size blur with symmetric reflect borders; kernel must be normalized.
Image blur(const Image& image, const std::vector<float>& kernel, int ksize);

/// Cubic resampling (a = -0.5) with the align-to-pixel-centers convention
/// x = (u + 0.5) / scale - 0.5. When downscaling with antialias, the kernel
/// widens by the inverse scale. Borders reflect symmetrically.
Image bicubic_resize(const Image& image, int out_h, int out_w, bool antialias);

/// Output extents are ceil(extent * factor).
Image bicubic_scale(const Image& image, double factor, bool antialias);

struct DegradationSpec {
  std::optional<GaussianKernelSpec> blur;
  int scale = 4;
  float noise_sigma = 0.0f;
};

/// Optional blur, bicubic downscale by spec.scale with antialias, seeded
/// additive Gaussian noise, clamp to [0,1]. Inputs whose extents are not
/// divisible by the scale are cropped (top-left) to the largest region first.
Image degrade(const Image& hr, const DegradationSpec& spec, uint64_t seed);

struct PatchPair {
  Image lr;
  Image hr;
};

/// Aligned random patch pairs from parallel LR/HR image lists. The LR patch at
/// (r, c) pairs with the HR patch at (r*scale, c*scale). Images too small for
/// the patch size are skipped with a warning; an empty candidate set raises
/// ContractError.
std::vector<PatchPair> sample_patches(const std::vector<Image>& hr_images,
                                      const std::vector<Image>& lr_images,
                                      int lr_patch, int scale, int count,
                                      uint64_t seed);

/// Stack same-shape images into an NCHW tensor.
TensorPtr to_tensor(const std::vector<Image>& batch);
TensorPtr to_tensor(const Image& image);

/// Extract batch item n; optionally clamp to [0,1].
Image from_tensor(const Tensor& t, int n, bool clamp01);

}  // namespace ganimc::img
