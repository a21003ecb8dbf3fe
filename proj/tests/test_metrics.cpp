#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "ganimc/checkpoint.hpp"
#include "ganimc/error.hpp"
#include "ganimc/image.hpp"
#include "ganimc/metrics.hpp"

using namespace ganimc;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
  return fs::temp_directory_path() / name;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Smooth waves plus per-pixel micro texture, so both noise and blur move the
// local statistics away from the clean family.
img::Image textured_image(int h, int w, uint64_t seed) {
  std::mt19937 rng{uint32_t(seed)};
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  struct Wave {
    float fy, fx, ph, amp;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 6; ++k) {
    Wave wv;
    wv.fy = 0.03f + 0.45f * uni(rng);
    wv.fx = 0.03f + 0.45f * uni(rng);
    wv.ph = 6.2831853f * uni(rng);
    wv.amp = 0.03f + 0.08f * uni(rng);
    waves.push_back(wv);
  }
  auto image = img::make_image(h, w, 3);
  std::uniform_real_distribution<float> micro(-0.04f, 0.04f);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        float v = 0.5f;
        for (size_t k = 0; k < waves.size(); ++k) {
          const auto& wv = waves[k];
          v += wv.amp * std::cos(wv.fy * y + wv.fx * x + wv.ph +
                                 2.1f * float(c) + 0.7f * float(k));
        }
        v += micro(rng);
        image.at(c, y, x) = std::clamp(v, 0.02f, 0.98f);
      }
    }
  }
  return image;
}

img::Image add_noise(const img::Image& image, float sigma, uint64_t seed) {
  std::mt19937 rng{uint32_t(seed)};
  std::normal_distribution<float> noise(0.0f, sigma);
  auto out = image;
  for (auto& v : out.data) v = std::clamp(v + noise(rng), 0.0f, 1.0f);
  return out;
}

img::Image blur_heavy(const img::Image& image) {
  img::GaussianKernelSpec spec;
  spec.sigma_x = 3.0f;
  spec.sigma_y = 3.0f;
  return img::blur(image, img::gaussian_kernel(spec), spec.size);
}

struct NiqeFixture {
  std::vector<img::Image> clean;
  metrics::NiqeModel model;
};

const NiqeFixture& niqe_fixture() {
  static const NiqeFixture fx = [] {
    NiqeFixture f;
    for (int i = 0; i < 20; ++i)
      f.clean.push_back(textured_image(200, 200, 900 + uint64_t(i)));
    f.model = metrics::niqe_fit(f.clean);
    return f;
  }();
  return fx;
}

}  // namespace

TEST_CASE("psnr matches hand-computed values") {
  auto a = img::make_image(8, 8, 3, 0.5f);
  auto b = img::make_image(8, 8, 3, 0.6f);
  CHECK(metrics::psnr(a, b) == doctest::Approx(20.0).epsilon(1e-4));

  auto c = img::make_image(1, 4, 1, 0.0f);
  auto d = img::make_image(1, 4, 1);
  d.data = {0.1f, 0.2f, 0.2f, 0.1f};
  // MSE (0.01+0.04+0.04+0.01)/4 = 0.025 -> 10*log10(40)
  CHECK(metrics::psnr(c, d) == doctest::Approx(16.0206).epsilon(1e-4));
}

TEST_CASE("psnr of identical images is the infinity sentinel") {
  auto a = img::make_image(5, 7, 3, 0.25f);
  CHECK(std::isinf(metrics::psnr(a, a)));
  CHECK(metrics::psnr(a, a) > 0);
}

TEST_CASE("psnr is symmetric and translation-consistent") {
  // Values on the 1/64 grid so adding exactly-representable 0.25 stays exact.
  std::mt19937 rng{77};
  std::uniform_int_distribution<int> level(0, 47);
  auto a = img::make_image(9, 11, 3);
  auto b = img::make_image(9, 11, 3);
  for (auto& v : a.data) v = float(level(rng)) / 64.0f;
  for (auto& v : b.data) v = float(level(rng)) / 64.0f;
  const double p = metrics::psnr(a, b);
  CHECK(metrics::psnr(b, a) == p);
  auto a2 = a;
  auto b2 = b;
  for (auto& v : a2.data) v += 0.25f;
  for (auto& v : b2.data) v += 0.25f;
  CHECK(std::fabs(metrics::psnr(a2, b2) - p) < 1e-6);
}

TEST_CASE("psnr rejects mismatched extents") {
  auto a = img::make_image(4, 4, 3);
  auto b = img::make_image(4, 5, 3);
  auto c = img::make_image(4, 4, 1);
  CHECK_THROWS_AS(metrics::psnr(a, b), ShapeError);
  CHECK_THROWS_AS(metrics::psnr(a, c), ShapeError);
}

TEST_CASE("mscn of a constant image is zero") {
  auto flat = img::make_image(32, 32, 1, 0.4f);
  auto coeffs = metrics::mscn(flat);
  CHECK(coeffs.height == 32);
  CHECK(coeffs.width == 32);
  CHECK(coeffs.channels == 1);
  float worst = 0.0f;
  for (float v : coeffs.data) worst = std::max(worst, std::fabs(v));
  CHECK(worst <= 1e-6f);
}

TEST_CASE("mscn rejects bad inputs") {
  CHECK_THROWS_AS(metrics::mscn(img::make_image(8, 8, 3, 0.5f)), ShapeError);
  CHECK_THROWS_AS(metrics::mscn(img::make_image(6, 6, 1, 0.5f)), ShapeError);
  CHECK_THROWS_AS(metrics::mscn(img::make_image(8, 6, 1, 0.5f)), ShapeError);
}

TEST_CASE("mscn decorrelates a textured image") {
  const auto gray = img::to_gray(textured_image(128, 128, 31));
  const auto coeffs = metrics::mscn(gray);
  double sum = 0.0, sum2 = 0.0;
  for (float v : coeffs.data) {
    sum += v;
    sum2 += double(v) * v;
  }
  const double n = double(coeffs.data.size());
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(mean > -0.1);
  CHECK(mean < 0.1);
  CHECK(var < 4.0);

  // Brightness shift leaves the normalized variance bounded the same way.
  auto bright = gray;
  for (auto& v : bright.data) v = std::min(1.0f, v + 0.25f);
  const auto coeffs2 = metrics::mscn(bright);
  double s2 = 0.0, q2 = 0.0;
  for (float v : coeffs2.data) {
    s2 += v;
    q2 += double(v) * v;
  }
  CHECK(q2 / n - (s2 / n) * (s2 / n) < 4.0);
}

TEST_CASE("aggd fit recovers a standard normal") {
  std::mt19937 rng{123};
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<float> x(100000);
  for (auto& v : x) v = float(nd(rng));
  const auto fit = metrics::aggd_fit(x);
  CHECK(fit.alpha > 1.9);
  CHECK(fit.alpha < 2.1);
  CHECK(fit.sigma_l / fit.sigma_r > 0.95);
  CHECK(fit.sigma_l / fit.sigma_r < 1.05);
}

TEST_CASE("aggd fit recovers a laplace shape") {
  std::mt19937 rng{321};
  std::exponential_distribution<double> expo(1.0);
  std::bernoulli_distribution coin(0.5);
  std::vector<float> x(100000);
  for (auto& v : x) v = float(coin(rng) ? expo(rng) : -expo(rng));
  const auto fit = metrics::aggd_fit(x);
  CHECK(fit.alpha > 0.9);
  CHECK(fit.alpha < 1.1);
}

TEST_CASE("aggd fit tracks asymmetry") {
  std::mt19937 rng{55};
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<float> right(100000), left(100000);
  for (size_t i = 0; i < right.size(); ++i) {
    const float v = float(nd(rng));
    right[i] = v > 0 ? 2.0f * v : v;
    left[i] = v < 0 ? 2.0f * v : v;
  }
  const auto rf = metrics::aggd_fit(right);
  CHECK(rf.sigma_r > 1.5 * rf.sigma_l);
  CHECK(rf.eta > 0.0);
  const auto lf = metrics::aggd_fit(left);
  CHECK(lf.sigma_l > 1.5 * lf.sigma_r);
  CHECK(lf.eta < 0.0);
}

TEST_CASE("aggd fit rejects degenerate and undersized samples") {
  CHECK_THROWS_AS(metrics::aggd_fit(std::vector<float>(300, 0.7f)), FitError);
  CHECK_THROWS_AS(metrics::aggd_fit(std::vector<float>(99, 0.0f)),
                  ContractError);
}

TEST_CASE("niqe fit is deterministic and well-formed") {
  const auto& fx = niqe_fixture();
  CHECK(fx.model.mu.size() == 36);
  CHECK(fx.model.sigma.size() == 36 * 36);
  CHECK(fx.model.patch == 96);
  CHECK(fx.model.corpus_patches >= 5);
  CHECK(fx.model.corpus_patches <= 80);

  const auto again = metrics::niqe_fit(fx.clean);
  CHECK(again.mu == fx.model.mu);
  CHECK(again.sigma == fx.model.sigma);
  CHECK(again.corpus_patches == fx.model.corpus_patches);

  double asym = 0.0;
  for (int i = 0; i < 36; ++i)
    for (int j = 0; j < 36; ++j)
      asym = std::max(asym, std::fabs(fx.model.sigma[size_t(i) * 36 + j] -
                                      fx.model.sigma[size_t(j) * 36 + i]));
  CHECK(asym <= 1e-8);
}

TEST_CASE("niqe covariance has full rank after the ridge") {
  const auto& fx = niqe_fixture();
  Eigen::MatrixXd sigma(36, 36);
  for (int i = 0; i < 36; ++i)
    for (int j = 0; j < 36; ++j)
      sigma(i, j) = fx.model.sigma[size_t(i) * 36 + j];
  sigma += metrics::kNiqeRidge * Eigen::MatrixXd::Identity(36, 36);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(sigma);
  CHECK(lu.rank() == 36);
}

TEST_CASE("niqe model round-trips through its file") {
  const auto& fx = niqe_fixture();
  const auto p1 = temp_file("niqe_model_a.ntc");
  const auto p2 = temp_file("niqe_model_b.ntc");
  metrics::save_niqe(fx.model, p1.string());
  const auto loaded = metrics::load_niqe(p1.string());
  CHECK(loaded.patch == fx.model.patch);
  CHECK(loaded.corpus_patches == fx.model.corpus_patches);
  REQUIRE(loaded.mu.size() == 36);
  for (int i = 0; i < 36; ++i)
    CHECK(loaded.mu[i] ==
          doctest::Approx(fx.model.mu[i]).epsilon(1e-5).scale(1.0));
  metrics::save_niqe(loaded, p2.string());
  CHECK(slurp(p1) == slurp(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("niqe model loader rejects foreign or mangled files") {
  const auto path = temp_file("niqe_model_bad.ntc");
  ckpt::Checkpoint wrong;
  wrong.add("mean", make_tensor({36}));
  ckpt::save(wrong, path.string());
  CHECK_THROWS_AS(metrics::load_niqe(path.string()), ImportError);

  ckpt::Checkpoint mangled;
  mangled.add("mu", make_tensor({36}));
  mangled.add("sigma", make_tensor({36, 36}));
  mangled.config = "patch=oops";
  ckpt::save(mangled, path.string());
  CHECK_THROWS_AS(metrics::load_niqe(path.string()), FormatError);
  fs::remove(path);
}

TEST_CASE("niqe fit rejects undersized corpora") {
  std::vector<img::Image> few;
  for (int i = 0; i < 4; ++i) few.push_back(textured_image(200, 200, 40 + i));
  CHECK_THROWS_AS(metrics::niqe_fit(few), ContractError);

  std::vector<img::Image> small;
  for (int i = 0; i < 5; ++i) small.push_back(textured_image(100, 100, 50 + i));
  CHECK_THROWS_AS(metrics::niqe_fit(small), ContractError);
}

TEST_CASE("niqe scores rise under noise") {
  const auto& fx = niqe_fixture();
  int wins = 0;
  for (size_t i = 0; i < fx.clean.size(); ++i) {
    const double clean = metrics::niqe_score(fx.clean[i], fx.model);
    CHECK(std::isfinite(clean));
    CHECK(clean >= 0.0);
    const double noisy = metrics::niqe_score(
        add_noise(fx.clean[i], 0.1f, 7000 + i), fx.model);
    if (noisy > clean) ++wins;
  }
  CHECK(wins >= 18);
}

TEST_CASE("niqe scores rise under blur") {
  const auto& fx = niqe_fixture();
  int wins = 0;
  for (size_t i = 0; i < fx.clean.size(); ++i) {
    const double clean = metrics::niqe_score(fx.clean[i], fx.model);
    const double blurred = metrics::niqe_score(blur_heavy(fx.clean[i]),
                                               fx.model);
    if (blurred > clean) ++wins;
  }
  CHECK(wins >= 18);
}

TEST_CASE("niqe score rejects bad models and tiny images") {
  const auto& fx = niqe_fixture();
  metrics::NiqeModel broken = fx.model;
  broken.mu.resize(35);
  CHECK_THROWS_AS(metrics::niqe_score(fx.clean[0], broken), ContractError);
  CHECK_THROWS_AS(metrics::niqe_score(textured_image(64, 64, 3), fx.model),
                  ContractError);
}

TEST_CASE("pi combiner matches its closed form") {
  CHECK(metrics::pi_score(10.0, 0.0) == 0.0);
  CHECK(metrics::pi_score(0.0, 10.0) == 10.0);
  CHECK(metrics::pi_score(8.999, 3.081) == doctest::Approx(2.041).epsilon(1e-9));
  for (int i = 0; i <= 40; ++i) {
    for (int j = 0; j <= 40; ++j) {
      const double ma = 0.25 * i;
      const double niqe = 0.25 * j;
      CHECK(metrics::pi_score(ma, niqe) == 5.0 - ma / 2.0 + niqe / 2.0);
    }
  }
}

TEST_CASE("report fills pi only where ma is present") {
  metrics::ScoreRow a;
  a.name = "a";
  a.psnr_db = std::numeric_limits<double>::infinity();
  a.niqe = 4.25;
  a.ma = 8.5;
  metrics::ScoreRow b;
  b.name = "b";
  b.psnr_db = 20.5;
  b.niqe = 5.0;
  b.pi = 3.0;  // stale value; must be cleared since ma is absent
  const auto report = metrics::make_report({a, b});
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].pi == 2.875);
  CHECK(!report.rows[1].pi);
  CHECK(std::isinf(report.rows[0].psnr_db));
  CHECK(report.avg_psnr == 60.25);
  CHECK(report.avg_niqe == 4.625);
  REQUIRE(report.avg_ma);
  CHECK(*report.avg_ma == 8.5);
  REQUIRE(report.avg_pi);
  CHECK(*report.avg_pi == 2.875);
}

TEST_CASE("report csv has the exact expected layout") {
  metrics::ScoreRow a;
  a.name = "a";
  a.psnr_db = std::numeric_limits<double>::infinity();
  a.niqe = 4.25;
  a.ma = 8.5;
  metrics::ScoreRow b;
  b.name = "b";
  b.psnr_db = 20.5;
  b.niqe = 5.0;
  const auto report = metrics::make_report({a, b});
  const auto path = temp_file("metrics_report.csv");
  metrics::write_report_csv(report, path.string());
  CHECK(slurp(path) ==
        "name,psnr_db,niqe,ma,pi\n"
        "a,100,4.25,8.5,2.875\n"
        "b,20.5,5,,\n"
        "AVE,60.25,4.625,8.5,2.875\n");
  fs::remove(path);

  const auto empty_path = temp_file("metrics_report_empty.csv");
  metrics::write_report_csv(metrics::make_report({}), empty_path.string());
  CHECK(slurp(empty_path) == "name,psnr_db,niqe,ma,pi\n");
  fs::remove(empty_path);

  CHECK_THROWS_AS(
      metrics::write_report_csv(report, "/no_such_dir_xq/report.csv"),
      IoError);
}

TEST_CASE("ma csv reader handles headers, odd names, and bad lines") {
  const auto path = temp_file("ma_scores.csv");
  {
    std::ofstream out(path);
    out << "name,ma\n\nbaby,8.5\nwoman,7.25\na,b,2.5\n";
  }
  const auto scores = metrics::load_ma_csv(path.string());
  CHECK(scores.size() == 3);
  CHECK(scores.at("baby") == 8.5);
  CHECK(scores.at("woman") == 7.25);
  CHECK(scores.at("a,b") == 2.5);

  {
    std::ofstream out(path);
    out << "bird,6.125\n";
  }
  CHECK(metrics::load_ma_csv(path.string()).at("bird") == 6.125);

  {
    std::ofstream out(path);
    out << "name,ma\nfoo,not_a_number\n";
  }
  try {
    metrics::load_ma_csv(path.string());
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  {
    std::ofstream out(path);
    out << "noseparator\n";
  }
  CHECK_THROWS_AS(metrics::load_ma_csv(path.string()), FormatError);
  fs::remove(path);

  CHECK_THROWS_AS(metrics::load_ma_csv("/no_such_file_xq.csv"), IoError);
}
