#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ganimc/image.hpp"

namespace ganimc::metrics {

/// Peak signal-to-noise ratio in dB over all RGB values on the [0,1] range,
/// full frame. Identical images give +infinity; report writers cap at 100.
double psnr(const img::Image& a, const img::Image& b);

inline constexpr double kPsnrCap = 100.0;

/// Locally normalized luminance coefficients (I - mu)/(sigma + 1), computed
/// on the [0,255] scale with a 7x7 Gaussian window (sigma 7/6) and symmetric
/// reflect borders. Input is a single-channel image in [0,1]; output extents
/// equal input extents.
img::Image mscn(const img::Image& gray);

/// Asymmetric generalized Gaussian moment-matching fit. The shape is read
/// off a dense ratio-function grid over alpha in [0.2, 10], step 0.001.
struct AggdFit {
  double alpha = 0.0;
  double sigma_l = 0.0;
  double sigma_r = 0.0;
  double eta = 0.0;
};

AggdFit aggd_fit(const std::vector<float>& samples);

/// Multivariate Gaussian model of pristine-patch statistics: 18 features
/// (AGGD of the coefficients plus four orientation products) at two scales.
struct NiqeModel {
  std::vector<double> mu;     // 36
  std::vector<double> sigma;  // 36x36, row-major
  int patch = 96;
  int corpus_patches = 0;
};

inline constexpr double kNiqeRidge = 1e-6;

/// Fits the model on pristine images (at least 5, each at least twice the
/// patch size per axis). Patches are kept when their local-deviation mean
/// reaches 0.75x the corpus-wide patch maximum.
NiqeModel niqe_fit(const std::vector<img::Image>& pristine);

/// sqrt((v-mu)^T ((Sigma+Sigma_d)/2 + ridge I)^-1 (v-mu)) over the test
/// image's patch statistics; every complete patch counts, no sharpness
/// selection at test time. RGB inputs are reduced to luminance first.
double niqe_score(const img::Image& image, const NiqeModel& model);

void save_niqe(const NiqeModel& model, const std::string& path);
NiqeModel load_niqe(const std::string& path);

/// Perceptual index: ((10 - ma) + niqe) / 2.
double pi_score(double ma, double niqe);

struct ScoreRow {
  std::string name;
  double psnr_db = 0.0;
  double niqe = 0.0;
  std::optional<double> ma;
  std::optional<double> pi;  // present exactly when ma is
};

struct ScoreReport {
  std::vector<ScoreRow> rows;
  double avg_psnr = 0.0;  // over capped dB values
  double avg_niqe = 0.0;
  std::optional<double> avg_ma;
  std::optional<double> avg_pi;
};

/// Fills in per-row PI where Ma is present and computes the averages.
ScoreReport make_report(std::vector<ScoreRow> rows);

/// CSV with header name,psnr_db,niqe,ma,pi; absent values are empty cells;
/// a final row named "average" carries the dataset means.
void write_report_csv(const ScoreReport& report, const std::string& path);

/// Reads name,ma pairs; a leading "name,ma" header line is allowed.
std::map<std::string, double> load_ma_csv(const std::string& path);

}  // namespace ganimc::metrics
