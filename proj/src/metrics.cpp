#include "ganimc/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "ganimc/checkpoint.hpp"
#include "ganimc/error.hpp"
#include "ganimc/tensor.hpp"

namespace ganimc::metrics {

namespace {

constexpr int kWindow = 7;
constexpr int kFeatures = 36;

double mse(const img::Image& a, const img::Image& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    s += d * d;
  }
  return s / double(a.data.size());
}

img::Image to_luma(const img::Image& image) {
  if (image.channels == 1) return image;
  if (image.channels == 3) return img::to_gray(image);
  throw ShapeError("quality metrics expect 1- or 3-channel images, got " +
                   std::to_string(image.channels));
}

std::array<double, kWindow * kWindow> mscn_window() {
  img::GaussianKernelSpec spec;
  spec.size = kWindow;
  spec.sigma_x = 7.0f / 6.0f;
  spec.sigma_y = 7.0f / 6.0f;
  const auto raw = img::gaussian_kernel(spec);
  // Renormalize in double so a constant image maps to exact-zero
  // coefficients instead of inheriting the float kernel sum's residue.
  double sum = 0.0;
  for (float v : raw) sum += v;
  std::array<double, kWindow * kWindow> w{};
  for (size_t i = 0; i < w.size(); ++i) w[i] = double(raw[i]) / sum;
  return w;
}

// Symmetric reflection with edge repeat, matching the image blur helper.
inline int reflect_edge(int i, int n) {
  if (i < 0) i = -i - 1;
  if (i >= n) i = 2 * n - 1 - i;
  return i;
}

// Coefficient map plus the local-deviation field used for patch selection.
// Double accumulation throughout; the window is applied on the [0,255] scale.
void mscn_maps(const img::Image& gray, img::Image& coeffs, img::Image& dev) {
  if (gray.height < kWindow || gray.width < kWindow) {
    throw ShapeError("image " + std::to_string(gray.height) + "x" +
                     std::to_string(gray.width) +
                     " is smaller than the 7x7 normalization window");
  }
  static const auto w = mscn_window();
  const int H = gray.height, W = gray.width, r = kWindow / 2;
  coeffs = img::make_image(H, W, 1);
  dev = img::make_image(H, W, 1);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double m = 0.0, m2 = 0.0;
      for (int ky = 0; ky < kWindow; ++ky) {
        const int yy = reflect_edge(y + ky - r, H);
        const float* row = gray.data.data() + size_t(yy) * W;
        for (int kx = 0; kx < kWindow; ++kx) {
          const int xx = reflect_edge(x + kx - r, W);
          const double v = double(row[xx]) * 255.0;
          const double wk = w[size_t(ky) * kWindow + kx];
          m += wk * v;
          m2 += wk * v * v;
        }
      }
      const double var = std::max(0.0, m2 - m * m);
      const double sd = std::sqrt(var);
      const double v0 = double(gray.data[size_t(y) * W + x]) * 255.0;
      dev.data[size_t(y) * W + x] = float(sd);
      coeffs.data[size_t(y) * W + x] = float((v0 - m) / (sd + 1.0));
    }
  }
}

// Ratio function rho(alpha) tabulated over the fitting grid.
struct AlphaGrid {
  std::vector<double> alpha;
  std::vector<double> rho;
};

const AlphaGrid& alpha_grid() {
  static const AlphaGrid grid = [] {
    AlphaGrid g;
    for (int i = 0; i <= 9800; ++i) {
      const double a = 0.2 + 0.001 * i;
      const double l1 = std::lgamma(1.0 / a);
      const double l2 = std::lgamma(2.0 / a);
      const double l3 = std::lgamma(3.0 / a);
      g.alpha.push_back(a);
      g.rho.push_back(std::exp(2.0 * l2 - l1 - l3));
    }
    return g;
  }();
  return grid;
}

AggdFit aggd_fit_span(const float* x, size_t n) {
  double sum_abs = 0.0, sum_sq = 0.0;
  double left_sq = 0.0, right_sq = 0.0;
  size_t left_n = 0, right_n = 0;
  float lo = x[0], hi = x[0];
  for (size_t i = 0; i < n; ++i) {
    const double v = x[i];
    lo = std::min(lo, x[i]);
    hi = std::max(hi, x[i]);
    sum_abs += std::fabs(v);
    sum_sq += v * v;
    if (v < 0.0) {
      left_sq += v * v;
      ++left_n;
    } else {
      right_sq += v * v;
      ++right_n;
    }
  }
  if (lo == hi) throw FitError("degenerate sample set: all values equal");
  const double sigma_l = left_n ? std::sqrt(left_sq / double(left_n)) : 0.0;
  const double sigma_r = right_n ? std::sqrt(right_sq / double(right_n)) : 0.0;
  const double gamma = sigma_r > 0.0 ? sigma_l / sigma_r : 0.0;
  const double mean_abs = sum_abs / double(n);
  const double r_hat = mean_abs * mean_abs / (sum_sq / double(n));
  const double g2 = gamma * gamma;
  const double r_big =
      r_hat * (gamma * g2 + 1.0) * (gamma + 1.0) / ((g2 + 1.0) * (g2 + 1.0));

  const auto& grid = alpha_grid();
  size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < grid.rho.size(); ++i) {
    const double d = (grid.rho[i] - r_big) * (grid.rho[i] - r_big);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  AggdFit fit;
  fit.alpha = grid.alpha[best];
  fit.sigma_l = sigma_l;
  fit.sigma_r = sigma_r;
  const double l1 = std::lgamma(1.0 / fit.alpha);
  const double l2 = std::lgamma(2.0 / fit.alpha);
  const double l3 = std::lgamma(3.0 / fit.alpha);
  fit.eta = (sigma_r - sigma_l) * std::exp(l2 - l1) *
            std::sqrt(std::exp(l1 - l3));
  return fit;
}

// 18 features of one coefficient patch: AGGD of the coefficients themselves,
// then alpha/eta/sigma_l^2/sigma_r^2 of the four neighboring products.
void patch_18(const img::Image& coeffs, int y0, int x0, int ps, double* out) {
  const int W = coeffs.width;
  std::vector<float> buf(size_t(ps) * ps);
  auto at = [&](int y, int x) { return coeffs.data[size_t(y) * W + x]; };

  size_t k = 0;
  for (int y = 0; y < ps; ++y)
    for (int x = 0; x < ps; ++x) buf[k++] = at(y0 + y, x0 + x);
  auto base = aggd_fit_span(buf.data(), buf.size());
  out[0] = base.alpha;
  out[1] = (base.sigma_l * base.sigma_l + base.sigma_r * base.sigma_r) / 2.0;

  // Shift deltas: horizontal, vertical, main diagonal, anti-diagonal.
  const int dy[4] = {0, 1, 1, 1};
  const int dx[4] = {1, 0, 1, -1};
  for (int o = 0; o < 4; ++o) {
    k = 0;
    for (int y = 0; y < ps; ++y) {
      const int yy = y0 + y;
      if (yy + dy[o] >= y0 + ps) continue;
      for (int x = 0; x < ps; ++x) {
        const int xx = x0 + x;
        const int xs = xx + dx[o];
        if (xs < x0 || xs >= x0 + ps) continue;
        buf[k++] = at(yy, xx) * at(yy + dy[o], xs);
      }
    }
    auto fit = aggd_fit_span(buf.data(), k);
    out[2 + o * 4 + 0] = fit.alpha;
    out[2 + o * 4 + 1] = fit.eta;
    out[2 + o * 4 + 2] = fit.sigma_l * fit.sigma_l;
    out[2 + o * 4 + 3] = fit.sigma_r * fit.sigma_r;
  }
}

struct PatchSet {
  std::vector<std::array<double, kFeatures>> features;
  std::vector<double> sharpness;  // scale-1 local-deviation mean per patch
};

// Complete non-overlapping patches at full and half scale, paired by grid
// position; feature layout is the 18 full-scale values then the 18 half-scale
// ones.
PatchSet image_patches(const img::Image& gray, int patch) {
  img::Image c1, d1;
  mscn_maps(gray, c1, d1);
  const auto half = img::bicubic_scale(gray, 0.5, true);
  img::Image c2, d2;
  mscn_maps(half, c2, d2);

  const int ps2 = patch / 2;
  const int gh = std::min(gray.height / patch, half.height / ps2);
  const int gw = std::min(gray.width / patch, half.width / ps2);
  PatchSet set;
  for (int i = 0; i < gh; ++i) {
    for (int j = 0; j < gw; ++j) {
      std::array<double, kFeatures> f{};
      patch_18(c1, i * patch, j * patch, patch, f.data());
      patch_18(c2, i * ps2, j * ps2, ps2, f.data() + 18);
      double sharp = 0.0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          sharp += d1.data[size_t(i * patch + y) * gray.width + j * patch + x];
      set.features.push_back(f);
      set.sharpness.push_back(sharp / (double(patch) * patch));
    }
  }
  return set;
}

Eigen::MatrixXd covariance(const std::vector<std::array<double, kFeatures>>& v,
                           const Eigen::VectorXd& mean) {
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(kFeatures, kFeatures);
  if (v.size() < 2) return cov;
  for (const auto& f : v) {
    Eigen::VectorXd d(kFeatures);
    for (int i = 0; i < kFeatures; ++i) d[i] = f[i] - mean[i];
    cov.noalias() += d * d.transpose();
  }
  return cov / double(v.size() - 1);
}

Eigen::VectorXd feature_mean(
    const std::vector<std::array<double, kFeatures>>& v) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(kFeatures);
  for (const auto& f : v)
    for (int i = 0; i < kFeatures; ++i) m[i] += f[i];
  return m / double(v.size());
}

}  // namespace

double psnr(const img::Image& a, const img::Image& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw ShapeError("psnr needs equal extents, got " +
                     std::to_string(a.height) + "x" + std::to_string(a.width) +
                     "x" + std::to_string(a.channels) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width) +
                     "x" + std::to_string(b.channels));
  }
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

img::Image mscn(const img::Image& gray) {
  if (gray.channels != 1)
    throw ShapeError("mscn expects a single-channel image");
  img::Image coeffs, dev;
  mscn_maps(gray, coeffs, dev);
  return coeffs;
}

AggdFit aggd_fit(const std::vector<float>& samples) {
  if (samples.size() < 100) {
    throw ContractError("aggd_fit needs at least 100 samples, got " +
                        std::to_string(samples.size()));
  }
  return aggd_fit_span(samples.data(), samples.size());
}

NiqeModel niqe_fit(const std::vector<img::Image>& pristine) {
  NiqeModel model;
  if (pristine.size() < 5) {
    throw ContractError("niqe_fit needs at least 5 images, got " +
                        std::to_string(pristine.size()));
  }
  std::vector<std::array<double, kFeatures>> all;
  std::vector<double> sharp;
  for (const auto& image : pristine) {
    const auto gray = to_luma(image);
    if (gray.height < 2 * model.patch || gray.width < 2 * model.patch) {
      throw ContractError("niqe_fit needs images of at least " +
                          std::to_string(2 * model.patch) + "x" +
                          std::to_string(2 * model.patch) + ", got " +
                          std::to_string(gray.height) + "x" +
                          std::to_string(gray.width));
    }
    auto set = image_patches(gray, model.patch);
    all.insert(all.end(), set.features.begin(), set.features.end());
    sharp.insert(sharp.end(), set.sharpness.begin(), set.sharpness.end());
  }
  const double peak = *std::max_element(sharp.begin(), sharp.end());
  std::vector<std::array<double, kFeatures>> kept;
  for (size_t i = 0; i < all.size(); ++i)
    if (sharp[i] >= 0.75 * peak) kept.push_back(all[i]);
  if (kept.size() < 2)
    throw FitError("sharpness selection kept " + std::to_string(kept.size()) +
                   " patches; the corpus cannot support a covariance fit");

  const auto mean = feature_mean(kept);
  const auto cov = covariance(kept, mean);
  model.mu.assign(mean.data(), mean.data() + kFeatures);
  model.sigma.resize(size_t(kFeatures) * kFeatures);
  for (int i = 0; i < kFeatures; ++i)
    for (int j = 0; j < kFeatures; ++j)
      model.sigma[size_t(i) * kFeatures + j] = cov(i, j);
  model.corpus_patches = int(kept.size());
  return model;
}

double niqe_score(const img::Image& image, const NiqeModel& model) {
  if (model.mu.size() != kFeatures ||
      model.sigma.size() != size_t(kFeatures) * kFeatures) {
    throw ContractError("niqe model has the wrong extents");
  }
  const auto gray = to_luma(image);
  if (gray.height < model.patch || gray.width < model.patch) {
    throw ContractError("image " + std::to_string(gray.height) + "x" +
                        std::to_string(gray.width) +
                        " is too small for one " +
                        std::to_string(model.patch) + "-pixel patch");
  }
  auto set = image_patches(gray, model.patch);
  if (set.features.empty())
    throw ContractError("no complete patch fits the image");

  const auto nu = feature_mean(set.features);
  const auto cov_d = covariance(set.features, nu);
  Eigen::MatrixXd sigma(kFeatures, kFeatures);
  for (int i = 0; i < kFeatures; ++i)
    for (int j = 0; j < kFeatures; ++j)
      sigma(i, j) = model.sigma[size_t(i) * kFeatures + j];
  Eigen::MatrixXd m = (sigma + cov_d) / 2.0 +
                      kNiqeRidge * Eigen::MatrixXd::Identity(kFeatures, kFeatures);
  Eigen::VectorXd d(kFeatures);
  for (int i = 0; i < kFeatures; ++i) d[i] = nu[i] - model.mu[i];
  const Eigen::VectorXd z = m.ldlt().solve(d);
  return std::sqrt(std::max(0.0, d.dot(z)));
}

void save_niqe(const NiqeModel& model, const std::string& path) {
  ckpt::Checkpoint c;
  c.add("mu", make_tensor({kFeatures},
                          std::vector<float>(model.mu.begin(), model.mu.end())));
  c.add("sigma",
        make_tensor({kFeatures, kFeatures},
                    std::vector<float>(model.sigma.begin(), model.sigma.end())));
  c.iteration = 0;
  c.config = "patch=" + std::to_string(model.patch) +
             " corpus_patches=" + std::to_string(model.corpus_patches);
  ckpt::save(c, path);
}

NiqeModel load_niqe(const std::string& path) {
  const auto c = ckpt::load(path);
  const auto mu = c.find("mu");
  const auto sigma = c.find("sigma");
  if (!mu || mu->shape != std::vector<int>{kFeatures} || !sigma ||
      sigma->shape != std::vector<int>{kFeatures, kFeatures}) {
    throw ImportError("file does not hold a 36-feature quality model: " + path);
  }
  NiqeModel model;
  model.mu.assign(mu->data.begin(), mu->data.end());
  model.sigma.assign(sigma->data.begin(), sigma->data.end());
  std::istringstream cfg(c.config);
  std::string token;
  while (cfg >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = token.substr(0, eq);
    const std::string val = token.substr(eq + 1);
    try {
      if (key == "patch") model.patch = std::stoi(val);
      if (key == "corpus_patches") model.corpus_patches = std::stoi(val);
    } catch (const std::exception&) {
      throw FormatError("bad metadata in quality model: " + token);
    }
  }
  return model;
}

double pi_score(double ma, double niqe) { return ((10.0 - ma) + niqe) / 2.0; }

ScoreReport make_report(std::vector<ScoreRow> rows) {
  ScoreReport report;
  double psnr_sum = 0.0, niqe_sum = 0.0, ma_sum = 0.0, pi_sum = 0.0;
  size_t ma_n = 0;
  for (auto& row : rows) {
    if (row.ma)
      row.pi = pi_score(*row.ma, row.niqe);
    else
      row.pi.reset();
    psnr_sum += std::min(row.psnr_db, kPsnrCap);
    niqe_sum += row.niqe;
    if (row.ma) {
      ma_sum += *row.ma;
      pi_sum += *row.pi;
      ++ma_n;
    }
  }
  report.rows = std::move(rows);
  const size_t n = report.rows.size();
  if (n) {
    report.avg_psnr = psnr_sum / double(n);
    report.avg_niqe = niqe_sum / double(n);
  }
  if (ma_n) {
    report.avg_ma = ma_sum / double(ma_n);
    report.avg_pi = pi_sum / double(ma_n);
  }
  return report;
}

void write_report_csv(const ScoreReport& report, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open report file for writing: " + path);
  std::fputs("name,psnr_db,niqe,ma,pi\n", f);
  auto cell = [&](std::optional<double> v) {
    if (v) std::fprintf(f, ",%.6g", *v);
    else std::fputs(",", f);
  };
  for (const auto& row : report.rows) {
    std::fprintf(f, "%s,%.6g,%.6g", row.name.c_str(),
                 std::min(row.psnr_db, kPsnrCap), row.niqe);
    cell(row.ma);
    cell(row.pi);
    std::fputs("\n", f);
  }
  if (!report.rows.empty()) {
    std::fprintf(f, "AVE,%.6g,%.6g", report.avg_psnr, report.avg_niqe);
    cell(report.avg_ma);
    cell(report.avg_pi);
    std::fputs("\n", f);
  }
  if (std::fflush(f) != 0) {
    std::fclose(f);
    throw IoError("report write failed: " + path);
  }
  std::fclose(f);
}

std::map<std::string, double> load_ma_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw IoError("cannot read scores file: " + path);
  std::map<std::string, double> scores;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && line == "name,ma") continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0) {
      throw FormatError("line " + std::to_string(lineno) +
                        " is not name,score: " + line);
    }
    const std::string name = line.substr(0, comma);
    try {
      size_t used = 0;
      const double v = std::stod(line.substr(comma + 1), &used);
      if (used != line.size() - comma - 1) throw std::invalid_argument("tail");
      scores[name] = v;
    } catch (const std::exception&) {
      throw FormatError("line " + std::to_string(lineno) +
                        " has a bad score: " + line);
    }
  }
  return scores;
}

}  // namespace ganimc::metrics
