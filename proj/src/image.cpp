#include "ganimc/image.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <random>

#include "ganimc/error.hpp"
#include "ganimc/log.hpp"
#include "ganimc/ops.hpp"

namespace ganimc::img {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

int mirror_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

double cubic(double d) {
  constexpr double a = -0.5;
  const double x = std::fabs(d);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct AxisWeights {
  int taps = 0;
  std::vector<int> idx;      // out_n * taps source indices (mirrored into range)
  std::vector<double> wgt;   // matching weights, each row normalized
};

AxisWeights resize_weights(int in_n, int out_n, bool antialias) {
  const double scale = static_cast<double>(out_n) / in_n;
  const bool widen = antialias && scale < 1.0;
  const double support = widen ? 4.0 / scale : 4.0;
  AxisWeights aw;
  aw.taps = static_cast<int>(std::ceil(support)) + 2;
  aw.idx.resize(static_cast<size_t>(out_n) * aw.taps);
  aw.wgt.resize(static_cast<size_t>(out_n) * aw.taps);
  for (int u = 0; u < out_n; ++u) {
    const double x = (u + 0.5) / scale - 0.5;
    const int left = static_cast<int>(std::floor(x - support / 2.0)) + 1;
    double sum = 0.0;
    for (int j = 0; j < aw.taps; ++j) {
      const double d = x - (left + j);
      const double w = widen ? scale * cubic(scale * d) : cubic(d);
      aw.wgt[static_cast<size_t>(u) * aw.taps + j] = w;
      sum += w;
    }
    for (int j = 0; j < aw.taps; ++j) {
      aw.wgt[static_cast<size_t>(u) * aw.taps + j] /= sum;
      aw.idx[static_cast<size_t>(u) * aw.taps + j] = mirror_index(left + j, in_n);
    }
  }
  return aw;
}

}  // namespace

Image make_image(int height, int width, int channels, float fill) {
  if (height < 1 || width < 1 || (channels != 1 && channels != 3)) {
    throw ContractError("make_image: bad extents " + std::to_string(height) + "x" +
                        std::to_string(width) + "x" + std::to_string(channels));
  }
  Image im;
  im.height = height;
  im.width = width;
  im.channels = channels;
  im.data.assign(static_cast<size_t>(channels) * height * width, fill);
  return im;
}

Image load_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    throw FormatError(path + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                           nullptr);
  if (!png) throw IoError("libpng read-struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng info-struct allocation failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("libpng failed to decode " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8 || color != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path + ": only 8-bit RGB PNG is supported (bit depth " +
                      std::to_string(depth) + ", color type " + std::to_string(color) +
                      ")");
  }

  pixels.resize(static_cast<size_t>(height) * width * 3);
  rows.resize(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y) {
    rows[static_cast<size_t>(y)] = pixels.data() + static_cast<size_t>(y) * width * 3;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image im = make_image(height, width, 3);
  const float inv = 1.0f / 255.0f;
  for (int y = 0; y < height; ++y) {
    const png_byte* row = pixels.data() + static_cast<size_t>(y) * width * 3;
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        im.at(c, y, x) = static_cast<float>(row[3 * x + c]) * inv;
      }
    }
  }
  return im;
}

void save_png(const Image& image, const std::string& path) {
  if (image.channels != 1 && image.channels != 3) {
    throw ContractError("save_png: unsupported channel count " +
                        std::to_string(image.channels));
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                            nullptr);
  if (!png) throw IoError("libpng write-struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng info-struct allocation failed");
  }
  const int ch = image.channels;
  std::vector<png_byte> pixels(static_cast<size_t>(image.height) * image.width * ch);
  std::vector<png_bytep> rows(static_cast<size_t>(image.height));
  for (int y = 0; y < image.height; ++y) {
    png_byte* row = pixels.data() + static_cast<size_t>(y) * image.width * ch;
    rows[static_cast<size_t>(y)] = row;
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < ch; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        row[ch * x + c] = static_cast<png_byte>(std::lround(v * 255.0f));
      }
    }
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed to encode " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8,
               ch == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::vector<float> gaussian_kernel(const GaussianKernelSpec& spec) {
  if (spec.size < 3 || spec.size % 2 == 0) {
    throw ContractError("gaussian_kernel: size must be odd and >= 3, got " +
                        std::to_string(spec.size));
  }
  if (!(spec.sigma_x > 0.0f && spec.sigma_y > 0.0f)) {
    throw ContractError("gaussian_kernel: sigma must be positive");
  }
  if (spec.stride < 1) throw ContractError("gaussian_kernel: stride must be >= 1");
  const int half = spec.size / 2;
  std::vector<float> k(static_cast<size_t>(spec.size) * spec.size);
  const double sx2 = 2.0 * spec.sigma_x * spec.sigma_x;
  const double sy2 = 2.0 * spec.sigma_y * spec.sigma_y;
  const double norm = 1.0 / (2.0 * M_PI * spec.sigma_x * spec.sigma_y);
  double sum = 0.0;
  for (int y = -half; y <= half; ++y) {
    for (int x = -half; x <= half; ++x) {
      const double dx = x - spec.mu_x;
      const double dy = y - spec.mu_y;
      const double v = norm * std::exp(-(dx * dx / sx2 + dy * dy / sy2));
      k[static_cast<size_t>(y + half) * spec.size + (x + half)] = static_cast<float>(v);
      sum += v;
    }
  }
  if (spec.normalize) {
    const float inv = static_cast<float>(1.0 / sum);
    for (float& v : k) v *= inv;
  }
  return k;
}

Image to_gray(const Image& rgb) {
  if (rgb.channels != 3) {
    throw ContractError("to_gray: expected a 3-channel image, got " +
                        std::to_string(rgb.channels));
  }
  Image g = make_image(rgb.height, rgb.width, 1);
  const size_t plane = rgb.plane();
  for (size_t i = 0; i < plane; ++i) {
    g.data[i] = kGrayR * rgb.data[i] + kGrayG * rgb.data[plane + i] +
                kGrayB * rgb.data[2 * plane + i];
  }
  return g;
}

Image blur(const Image& image, const std::vector<float>& kernel, int ksize) {
  double sum = 0.0;
  for (float v : kernel) sum += v;
  if (std::fabs(sum - 1.0) > 1e-4) {
    throw ContractError("blur: kernel is not normalized (sum " + std::to_string(sum) +
                        ")");
  }
  if (ksize > image.height || ksize > image.width) {
    throw ContractError("blur: kernel " + std::to_string(ksize) +
                        " larger than image " + std::to_string(image.height) + "x" +
                        std::to_string(image.width));
  }
  auto t = to_tensor(image);
  auto padded = ops::pad_reflect(t, ksize / 2);
  auto out = ops::depthwise_conv_valid(padded, kernel, ksize);
  return from_tensor(*out, 0, false);
}

Image bicubic_resize(const Image& image, int out_h, int out_w, bool antialias) {
  if (out_h < 1 || out_w < 1) {
    throw ContractError("bicubic_resize: degenerate output size " +
                        std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const AxisWeights ww = resize_weights(image.width, out_w, antialias);
  const AxisWeights hw = resize_weights(image.height, out_h, antialias);

  // Horizontal pass, double precision intermediate.
  std::vector<double> mid(static_cast<size_t>(image.channels) * image.height * out_w);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int u = 0; u < out_w; ++u) {
        double acc = 0.0;
        const size_t row = static_cast<size_t>(u) * ww.taps;
        for (int j = 0; j < ww.taps; ++j) {
          acc += ww.wgt[row + j] * image.at(c, y, ww.idx[row + j]);
        }
        mid[(static_cast<size_t>(c) * image.height + y) * out_w + u] = acc;
      }
    }
  }
  Image out = make_image(out_h, out_w, image.channels);
  for (int c = 0; c < image.channels; ++c) {
    for (int v = 0; v < out_h; ++v) {
      const size_t row = static_cast<size_t>(v) * hw.taps;
      for (int u = 0; u < out_w; ++u) {
        double acc = 0.0;
        for (int j = 0; j < hw.taps; ++j) {
          acc += hw.wgt[row + j] *
                 mid[(static_cast<size_t>(c) * image.height + hw.idx[row + j]) * out_w + u];
        }
        out.at(c, v, u) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Image bicubic_scale(const Image& image, double factor, bool antialias) {
  if (!(factor > 0.0)) throw ContractError("bicubic_scale: factor must be positive");
  const int oh = static_cast<int>(std::ceil(image.height * factor));
  const int ow = static_cast<int>(std::ceil(image.width * factor));
  return bicubic_resize(image, oh, ow, antialias);
}

Image degrade(const Image& hr, const DegradationSpec& spec, uint64_t seed) {
  if (spec.scale < 1) throw ContractError("degrade: scale must be >= 1");
  if (spec.noise_sigma < 0.0f) throw ContractError("degrade: negative noise sigma");

  Image work = hr;
  const int ch = (hr.height / spec.scale) * spec.scale;
  const int cw = (hr.width / spec.scale) * spec.scale;
  if (ch < 1 || cw < 1) {
    throw ContractError("degrade: image " + std::to_string(hr.height) + "x" +
                        std::to_string(hr.width) + " smaller than scale " +
                        std::to_string(spec.scale));
  }
  if (ch != hr.height || cw != hr.width) {
    Image cropped = make_image(ch, cw, hr.channels);
    for (int c = 0; c < hr.channels; ++c) {
      for (int y = 0; y < ch; ++y) {
        for (int x = 0; x < cw; ++x) cropped.at(c, y, x) = hr.at(c, y, x);
      }
    }
    work = std::move(cropped);
  }

  if (spec.blur) {
    const auto k = gaussian_kernel(*spec.blur);
    work = blur(work, k, spec.blur->size);
  }
  Image lr = spec.scale == 1
                 ? std::move(work)
                 : bicubic_resize(work, work.height / spec.scale,
                                  work.width / spec.scale, true);
  if (spec.noise_sigma > 0.0f) {
    auto rng = make_rng(seed);
    std::normal_distribution<float> dist(0.0f, spec.noise_sigma);
    for (float& v : lr.data) v += dist(rng);
  }
  for (float& v : lr.data) v = std::clamp(v, 0.0f, 1.0f);
  return lr;
}

std::vector<PatchPair> sample_patches(const std::vector<Image>& hr_images,
                                      const std::vector<Image>& lr_images,
                                      int lr_patch, int scale, int count,
                                      uint64_t seed) {
  if (lr_patch < 1 || scale < 1 || count < 1) {
    throw ContractError("sample_patches: patch, scale and count must be positive");
  }
  if (hr_images.size() != lr_images.size()) {
    throw ContractError("sample_patches: " + std::to_string(hr_images.size()) +
                        " HR images vs " + std::to_string(lr_images.size()) + " LR");
  }
  std::vector<size_t> eligible;
  for (size_t i = 0; i < hr_images.size(); ++i) {
    const Image& hr = hr_images[i];
    const Image& lr = lr_images[i];
    if (lr.height < lr_patch || lr.width < lr_patch) {
      warn("sample_patches: image " + std::to_string(i) + " (" +
           std::to_string(lr.height) + "x" + std::to_string(lr.width) +
           " LR) smaller than patch " + std::to_string(lr_patch) + ", skipping");
      continue;
    }
    if (hr.height < lr.height * scale || hr.width < lr.width * scale) {
      warn("sample_patches: image " + std::to_string(i) +
           " HR/LR extents disagree with scale, skipping");
      continue;
    }
    eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw ContractError("sample_patches: no image is large enough for patch size " +
                        std::to_string(lr_patch));
  }

  auto rng = make_rng(seed);
  std::vector<PatchPair> out;
  out.reserve(static_cast<size_t>(count));
  const int hp = lr_patch * scale;
  for (int p = 0; p < count; ++p) {
    const size_t pick =
        eligible[std::uniform_int_distribution<size_t>(0, eligible.size() - 1)(rng)];
    const Image& hr = hr_images[pick];
    const Image& lr = lr_images[pick];
    const int r = std::uniform_int_distribution<int>(0, lr.height - lr_patch)(rng);
    const int c = std::uniform_int_distribution<int>(0, lr.width - lr_patch)(rng);
    PatchPair pair;
    pair.lr = make_image(lr_patch, lr_patch, lr.channels);
    pair.hr = make_image(hp, hp, hr.channels);
    for (int cc = 0; cc < lr.channels; ++cc) {
      for (int y = 0; y < lr_patch; ++y) {
        for (int x = 0; x < lr_patch; ++x) {
          pair.lr.at(cc, y, x) = lr.at(cc, r + y, c + x);
        }
      }
    }
    for (int cc = 0; cc < hr.channels; ++cc) {
      for (int y = 0; y < hp; ++y) {
        for (int x = 0; x < hp; ++x) {
          pair.hr.at(cc, y, x) = hr.at(cc, r * scale + y, c * scale + x);
        }
      }
    }
    out.push_back(std::move(pair));
  }
  return out;
}

TensorPtr to_tensor(const std::vector<Image>& batch) {
  if (batch.empty()) throw ContractError("to_tensor: empty batch");
  const Image& first = batch.front();
  for (const Image& im : batch) {
    if (im.height != first.height || im.width != first.width ||
        im.channels != first.channels) {
      throw ShapeError("to_tensor: images in a batch must share extents");
    }
  }
  auto t = make_tensor({static_cast<int>(batch.size()), first.channels, first.height,
                        first.width});
  float* dst = t->data.data();
  for (const Image& im : batch) {
    std::copy(im.data.begin(), im.data.end(), dst);
    dst += im.data.size();
  }
  return t;
}

TensorPtr to_tensor(const Image& image) { return to_tensor(std::vector<Image>{image}); }

Image from_tensor(const Tensor& t, int n, bool clamp01) {
  if (t.rank() != 4) {
    throw ShapeError("from_tensor: expected an NCHW tensor, got " + shape_str(t.shape));
  }
  if (n < 0 || n >= t.dim(0)) {
    throw ContractError("from_tensor: batch index " + std::to_string(n) +
                        " out of range");
  }
  Image im = make_image(t.dim(2), t.dim(3), t.dim(1));
  const size_t sz = im.data.size();
  const float* src = t.data.data() + static_cast<size_t>(n) * sz;
  std::copy(src, src + sz, im.data.begin());
  if (clamp01) {
    for (float& v : im.data) v = std::clamp(v, 0.0f, 1.0f);
  }
  return im;
}

}  // namespace ganimc::img
