#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "ganimc/checkpoint.hpp"
#include "ganimc/cli.hpp"
#include "ganimc/error.hpp"
#include "ganimc/image.hpp"
#include "ganimc/metrics.hpp"
#include "synth.hpp"

namespace fs = std::filesystem;
using namespace ganimc;

namespace {

const fs::path& ws() {
  static const fs::path root = [] {
    const auto p = fs::temp_directory_path() / "ganimc_cli_ws";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  REQUIRE(out.good());
}

// Runs the installed binary, returning its exit code and capturing stderr.
int run_cli(const std::string& args, std::string* err_out = nullptr) {
  const auto err_file = ws() / "stderr.txt";
  const std::string cmd =
      std::string(GANIMC_BIN) + " " + args + " 2>" + err_file.string();
  const int rc = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(rc));
  if (err_out) *err_out = slurp(err_file);
  return WEXITSTATUS(rc);
}

// Height and width from the fixed-offset IHDR fields, so grayscale outputs
// can be checked without a decoder.
std::pair<int, int> png_extents(const fs::path& path) {
  const auto bytes = slurp(path);
  REQUIRE(bytes.size() >= 24);
  auto be32 = [&](size_t off) {
    return (uint32_t(uint8_t(bytes[off])) << 24) |
           (uint32_t(uint8_t(bytes[off + 1])) << 16) |
           (uint32_t(uint8_t(bytes[off + 2])) << 8) |
           uint32_t(uint8_t(bytes[off + 3]));
  };
  return {int(be32(20)), int(be32(16))};
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    rows.push_back(std::move(fields));
  }
  return rows;
}

int line_count(const std::string& text) {
  return int(std::count(text.begin(), text.end(), '\n'));
}

const fs::path& hr_dir() {
  static const fs::path dir = [] {
    const auto d = ws() / "hr";
    fs::create_directories(d);
    img::save_png(synth::smooth_image(64, 64, 11), (d / "a.png").string());
    img::save_png(synth::smooth_image(48, 64, 12), (d / "b.png").string());
    write_text(d / "bad.png", "not a png");
    return d;
  }();
  return dir;
}

const fs::path& pretrain_config() {
  static const fs::path p = [] {
    const auto c = ws() / "pre.cfg";
    write_text(c,
               "scale=4\nlr_patch=8\nbatch_size=2\npretrain_iters=3\nseed=1\n");
    return c;
  }();
  return p;
}

const fs::path& pretrain_ckpt() {
  static const fs::path out = [] {
    const auto p = ws() / "pre.ntc";
    const int rc = run_cli("pretrain --config " + pretrain_config().string() +
                           " --hr " + hr_dir().string() + " --out " +
                           p.string());
    REQUIRE(rc == cli::kExitOk);
    return p;
  }();
  return out;
}

const fs::path& niqe_model() {
  static const fs::path out = [] {
    const auto d = ws() / "pristine";
    fs::create_directories(d);
    for (int i = 0; i < 5; ++i)
      img::save_png(synth::smooth_image(200, 200, 500 + i),
                    (d / ("p" + std::to_string(i) + ".png")).string());
    const auto p = ws() / "quality.ntc";
    const int rc =
        run_cli("niqe-fit --pristine " + d.string() + " --out " + p.string());
    REQUIRE(rc == cli::kExitOk);
    return p;
  }();
  return out;
}

}  // namespace

TEST_CASE("run config defaults match the published training recipe") {
  const cli::RunConfig cfg;
  CHECK(cfg.train.pretrain_iters == 50000);
  CHECK(cfg.train.gan_iters == 2000);
  CHECK(cfg.train.lr == 1e-4f);
  CHECK(cfg.train.beta1 == 0.9f);
  CHECK(cfg.train.lr_decay_at == 100000);
  CHECK(cfg.train.batch_size == 16);
  CHECK(cfg.train.lr_patch == 16);
  CHECK(cfg.train.scale == 4);
  CHECK(cfg.train.seed == 0);
  CHECK(cfg.extractor_source == "seeded(42)");
  CHECK(cfg.noise_sigma == 0.0f);
  CHECK_FALSE(cfg.blur);
  CHECK_FALSE(cfg.mode.has_value());
}

TEST_CASE("config parser reports every violation in one error") {
  const std::string bad =
      "scale=3\nbatch_size=0\nnope=1\nlr=abc\nblur=maybe\nscale=4\n";
  std::string message;
  try {
    cli::parse_run_config(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    message = e.what();
  }
  CHECK(message.find("scale must be 2 or 4") != std::string::npos);
  CHECK(message.find("batch_size") != std::string::npos);
  CHECK(message.find("unknown key nope") != std::string::npos);
  CHECK(message.find("bad value for lr") != std::string::npos);
  CHECK(message.find("blur") != std::string::npos);
  CHECK(message.find("duplicate key scale") != std::string::npos);

  CHECK_THROWS_AS(cli::parse_run_config("mode=banana\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("extractor_source=vgg\n"),
                  ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("noise_sigma=-0.5\n"), ConfigError);
  CHECK_THROWS_AS(cli::parse_run_config("just a line\n"), ConfigError);

  const auto ok = cli::parse_run_config(
      "  # comment only\n\n scale = 2 \nmode=GAN-IMC # trailing note\n");
  CHECK(ok.train.scale == 2);
  REQUIRE(ok.mode.has_value());
  CHECK(*ok.mode == Mode::gan_imc);
}

TEST_CASE("config serialization round-trips exactly") {
  cli::RunConfig c;
  c.mode = Mode::gan_imcw;
  c.train.lr = 2.5e-4f;
  c.train.seed = 77;
  c.train.scale = 2;
  c.train.lr_patch = 24;
  c.train.weights.w_wc = 3.14159f;
  c.blur = true;
  c.noise_sigma = 0.03f;
  c.extractor_source = "seeded(9)";

  const auto text = cli::serialize_run_config(c);
  const auto d = cli::parse_run_config(text);
  CHECK(d.train.lr == c.train.lr);
  CHECK(d.train.seed == 77);
  CHECK(d.train.scale == 2);
  CHECK(d.train.lr_patch == 24);
  CHECK(d.train.weights.w_wc == c.train.weights.w_wc);
  REQUIRE(d.mode.has_value());
  CHECK(*d.mode == Mode::gan_imcw);
  CHECK(d.blur);
  CHECK(d.noise_sigma == c.noise_sigma);
  CHECK(d.extractor_source == "seeded(9)");
  CHECK(cli::serialize_run_config(d) == text);
}

TEST_CASE("degrade writes scaled outputs with a manifest and skips junk") {
  const auto out1 = ws() / "lr1";
  const auto out2 = ws() / "lr2";
  std::string err;
  int rc = run_cli("degrade --in " + hr_dir().string() + " --out " +
                       out1.string() + " --seed 3",
                   &err);
  CHECK(rc == cli::kExitOk);
  CHECK(err.find("bad.png") != std::string::npos);

  const auto a = img::load_png((out1 / "a.png").string());
  CHECK(a.height == 16);
  CHECK(a.width == 16);
  const auto b = img::load_png((out1 / "b.png").string());
  CHECK(b.height == 12);
  CHECK(b.width == 16);
  CHECK_FALSE(fs::exists(out1 / "bad.png"));

  const auto manifest = slurp(out1 / "manifest.txt");
  CHECK(manifest.find("seed=3") != std::string::npos);
  CHECK(manifest.find("outputs=2") != std::string::npos);
  CHECK(manifest.find("file=a.png") != std::string::npos);
  CHECK(manifest.find("file=b.png") != std::string::npos);

  rc = run_cli("degrade --in " + hr_dir().string() + " --out " +
               out2.string() + " --seed 3");
  CHECK(rc == cli::kExitOk);
  CHECK(slurp(out1 / "a.png") == slurp(out2 / "a.png"));
  CHECK(slurp(out1 / "b.png") == slurp(out2 / "b.png"));

  // Seeded noise is reproducible too.
  const auto n1 = ws() / "lrn1";
  const auto n2 = ws() / "lrn2";
  rc = run_cli("degrade --in " + hr_dir().string() + " --out " + n1.string() +
               " --noise-sigma 0.05 --seed 9");
  CHECK(rc == cli::kExitOk);
  rc = run_cli("degrade --in " + hr_dir().string() + " --out " + n2.string() +
               " --noise-sigma 0.05 --seed 9");
  CHECK(rc == cli::kExitOk);
  CHECK(slurp(n1 / "a.png") == slurp(n2 / "a.png"));
  CHECK(slurp(n1 / "a.png") != slurp(out1 / "a.png"));

  const auto empty = ws() / "empty";
  fs::create_directories(empty);
  rc = run_cli("degrade --in " + empty.string() + " --out " +
               (ws() / "lr3").string());
  CHECK(rc == cli::kExitData);

  rc = run_cli("degrade --in " + hr_dir().string() + " --out " +
               (ws() / "lr4").string() + " --scale 3");
  CHECK(rc == cli::kExitUsage);
  rc = run_cli("degrade --in " + hr_dir().string());
  CHECK(rc == cli::kExitUsage);
  rc = run_cli("frobnicate");
  CHECK(rc == cli::kExitUsage);
}

TEST_CASE("pretrain writes a checkpoint and a per-iteration trace") {
  const auto& model = pretrain_ckpt();
  CHECK(fs::exists(model));

  const auto trace = slurp(model.string() + ".trace.csv");
  CHECK(line_count(trace) == 4);
  CHECK(trace.rfind("iteration,l_pixel,", 0) == 0);
  CHECK(trace.find("\n1,") != std::string::npos);
  CHECK(trace.find("\n3,") != std::string::npos);

  const auto c = ckpt::load(model.string());
  CHECK(c.iteration == 3);
  CHECK(c.config.find("lr_patch=8") != std::string::npos);
  CHECK(c.config.find("pretrain_iters=3") != std::string::npos);

  // Resuming at the configured budget reruns nothing but still saves.
  const auto resumed = ws() / "pre_resume.ntc";
  const int rc = run_cli("pretrain --config " + pretrain_config().string() +
                         " --hr " + hr_dir().string() + " --init " +
                         model.string() + " --out " + resumed.string());
  CHECK(rc == cli::kExitOk);
  CHECK(line_count(slurp(resumed.string() + ".trace.csv")) == 1);
  CHECK(ckpt::load(resumed.string()).iteration == 3);

  // Config problems surface with every violation listed.
  const auto broken = ws() / "broken.cfg";
  write_text(broken, "scale=3\nlr=abc\n");
  std::string err;
  CHECK(run_cli("pretrain --config " + broken.string() + " --hr " +
                    hr_dir().string() + " --out " + (ws() / "x.ntc").string(),
                &err) == cli::kExitUsage);
  CHECK(err.find("scale") != std::string::npos);
  CHECK(err.find("lr") != std::string::npos);
  CHECK(run_cli("pretrain --config " + (ws() / "missing.cfg").string() +
                " --hr " + hr_dir().string() + " --out " +
                (ws() / "x.ntc").string()) == cli::kExitUsage);
}

TEST_CASE("train requires a mode and runs the adversarial phase") {
  std::string err;
  int rc = run_cli("train --config " + pretrain_config().string() + " --hr " +
                       hr_dir().string() + " --init " +
                       pretrain_ckpt().string() + " --out " +
                       (ws() / "t0.ntc").string(),
                   &err);
  CHECK(rc == cli::kExitUsage);
  CHECK(err.find("mode") != std::string::npos);

  const auto gan_cfg = ws() / "gan.cfg";
  write_text(gan_cfg,
             "scale=4\nlr_patch=8\nbatch_size=2\npretrain_iters=3\n"
             "gan_iters=2\nseed=1\nmode=GAN-IMCW\n");
  const auto trained = ws() / "gan.ntc";
  rc = run_cli("train --config " + gan_cfg.string() + " --hr " +
                   hr_dir().string() + " --init " + pretrain_ckpt().string() +
                   " --out " + trained.string(),
               &err);
  CHECK(rc == cli::kExitOk);
  CHECK(err.find("no --init") == std::string::npos);
  CHECK(line_count(slurp(trained.string() + ".trace.csv")) == 3);

  const auto c = ckpt::load(trained.string());
  CHECK(c.iteration == 2);
  CHECK(c.config.find("mode=GAN-IMCW") != std::string::npos);
  bool has_d = false;
  for (const auto& [name, t] : c.tensors)
    if (name.rfind("d_img.", 0) == 0) has_d = true;
  CHECK(has_d);

  // A full checkpoint resumes in place; the budget is already spent here.
  const auto resumed = ws() / "gan_resume.ntc";
  rc = run_cli("train --config " + gan_cfg.string() + " --hr " +
               hr_dir().string() + " --init " + trained.string() + " --out " +
               resumed.string());
  CHECK(rc == cli::kExitOk);
  CHECK(line_count(slurp(resumed.string() + ".trace.csv")) == 1);
  CHECK(ckpt::load(resumed.string()).iteration == 2);

  // Without --init the run proceeds from scratch, with a warning.
  const auto short_cfg = ws() / "gan1.cfg";
  write_text(short_cfg,
             "scale=4\nlr_patch=8\nbatch_size=2\ngan_iters=1\nseed=2\n"
             "mode=GAN-IMC\n");
  rc = run_cli("train --config " + short_cfg.string() + " --hr " +
                   hr_dir().string() + " --out " + (ws() / "t2.ntc").string(),
               &err);
  CHECK(rc == cli::kExitOk);
  CHECK(err.find("warning") != std::string::npos);
  CHECK(err.find("no --init") != std::string::npos);
}

TEST_CASE("sr upscales files and directories deterministically") {
  const auto lr = ws() / "lr1";  // degrade outputs from the earlier case
  REQUIRE(fs::exists(lr / "a.png"));
  const auto out_dir = ws() / "sr_dir";
  int rc = run_cli("sr --model " + pretrain_ckpt().string() + " --in " +
                   lr.string() + " --out " + out_dir.string());
  CHECK(rc == cli::kExitOk);
  CHECK(png_extents(out_dir / "a.png") == std::pair<int, int>{64, 64});
  CHECK(png_extents(out_dir / "b.png") == std::pair<int, int>{48, 64});

  const auto s1 = ws() / "sr_a1.png";
  const auto s2 = ws() / "sr_a2.png";
  rc = run_cli("sr --model " + pretrain_ckpt().string() + " --in " +
               (lr / "a.png").string() + " --out " + s1.string());
  CHECK(rc == cli::kExitOk);
  rc = run_cli("sr --model " + pretrain_ckpt().string() + " --in " +
               (lr / "a.png").string() + " --out " + s2.string());
  CHECK(rc == cli::kExitOk);
  CHECK(slurp(s1) == slurp(s2));
  CHECK(slurp(s1) == slurp(out_dir / "a.png"));

  const auto junk = ws() / "junk.ntc";
  write_text(junk, "garbage");
  CHECK(run_cli("sr --model " + junk.string() + " --in " +
                (lr / "a.png").string() + " --out " +
                (ws() / "x.png").string()) == cli::kExitData);
  CHECK(run_cli("sr --model " + pretrain_ckpt().string() + " --in " +
                (ws() / "missing.png").string() + " --out " +
                (ws() / "x.png").string()) == cli::kExitData);
}

TEST_CASE("niqe-fit fits a reusable quality model") {
  const auto& model = niqe_model();
  const auto loaded = metrics::load_niqe(model.string());
  CHECK(loaded.mu.size() == 36);
  CHECK(loaded.sigma.size() == 36 * 36);

  const auto again = ws() / "quality2.ntc";
  const int rc = run_cli("niqe-fit --pristine " + (ws() / "pristine").string() +
                         " --out " + again.string());
  CHECK(rc == cli::kExitOk);
  CHECK(slurp(model) == slurp(again));

  const auto empty = ws() / "empty2";
  fs::create_directories(empty);
  CHECK(run_cli("niqe-fit --pristine " + empty.string() + " --out " +
                (ws() / "q3.ntc").string()) == cli::kExitData);
}

TEST_CASE("eval reports scores, pairs by basename, and flags gaps") {
  const auto hr = ws() / "hr_eval";
  const auto sr_extra = ws() / "sr_eval_extra";
  const auto sr_clean = ws() / "sr_eval_clean";
  fs::create_directories(hr);
  fs::create_directories(sr_extra);
  fs::create_directories(sr_clean);
  const auto c_img = synth::smooth_image(128, 128, 21);
  const auto d_img = synth::smooth_image(128, 128, 22);
  img::save_png(c_img, (hr / "c.png").string());
  img::save_png(d_img, (hr / "d.png").string());
  img::save_png(c_img, (sr_extra / "c.png").string());
  img::save_png(d_img, (sr_extra / "d.png").string());
  img::save_png(synth::smooth_image(128, 128, 23),
                (sr_extra / "extra.png").string());
  img::save_png(c_img, (sr_clean / "c.png").string());
  img::save_png(d_img, (sr_clean / "d.png").string());

  const auto rep1 = ws() / "rep1.csv";
  std::string err;
  int rc = run_cli("eval --sr " + sr_extra.string() + " --hr " + hr.string() +
                       " --niqe-model " + niqe_model().string() +
                       " --report " + rep1.string(),
                   &err);
  CHECK(rc == cli::kExitData);
  CHECK(err.find("extra.png") != std::string::npos);
  auto rows = parse_csv(slurp(rep1));
  REQUIRE(rows.size() == 4);  // header, c, d, AVE
  CHECK(rows[0][0] == "name");
  CHECK(rows[1][0] == "c");
  CHECK(rows[1][1] == "100");
  CHECK(rows[2][0] == "d");
  CHECK(rows[3][0] == "AVE");
  CHECK(std::stod(rows[1][2]) > 0.0);

  const auto ma_csv = ws() / "ma.csv";
  write_text(ma_csv, "name,ma\nc,8.999\n");
  const auto rep2 = ws() / "rep2.csv";
  rc = run_cli("eval --sr " + sr_clean.string() + " --hr " + hr.string() +
               " --niqe-model " + niqe_model().string() + " --ma " +
               ma_csv.string() + " --report " + rep2.string());
  CHECK(rc == cli::kExitOk);
  rows = parse_csv(slurp(rep2));
  REQUIRE(rows.size() == 4);
  REQUIRE(rows[1].size() == 5);
  CHECK(rows[1][0] == "c");
  CHECK(rows[1][3] == "8.999");
  const double niqe_c = std::stod(rows[1][2]);
  const double pi_c = std::stod(rows[1][4]);
  CHECK(pi_c == doctest::Approx((10.0 - 8.999 + niqe_c) / 2.0).epsilon(1e-4));
  REQUIRE(rows[2].size() == 5);
  CHECK(rows[2][3] == "");
  CHECK(rows[2][4] == "");
  CHECK(rows[3][0] == "AVE");
  CHECK(rows[3][1] == "100");
  CHECK(std::stod(rows[3][3]) == doctest::Approx(8.999));

  CHECK(run_cli("eval --sr " + sr_clean.string() + " --hr " + hr.string() +
                " --niqe-model " + (ws() / "missing.ntc").string() +
                " --report " + (ws() / "rep3.csv").string()) ==
        cli::kExitData);
}

TEST_CASE("weights-map renders the attention map at half resolution") {
  const auto in = ws() / "map_in.png";
  img::save_png(synth::smooth_image(64, 64, 31), in.string());
  const auto m1 = ws() / "map1.png";
  const auto m2 = ws() / "map2.png";
  int rc = run_cli("weights-map --extractor 'seeded(5)' --in " + in.string() +
                   " --out " + m1.string());
  CHECK(rc == cli::kExitOk);
  CHECK(png_extents(m1) == std::pair<int, int>{32, 32});
  rc = run_cli("weights-map --extractor 'seeded(5)' --in " + in.string() +
               " --out " + m2.string());
  CHECK(rc == cli::kExitOk);
  CHECK(slurp(m1) == slurp(m2));

  // An all-black input carries no feature response anywhere, so the map
  // falls back to flat mid-gray.
  const auto black = ws() / "black.png";
  img::save_png(img::make_image(64, 64, 3, 0.0f), black.string());
  const auto flat = ws() / "flat.png";
  rc = run_cli("weights-map --extractor 'seeded(5)' --in " + black.string() +
               " --out " + flat.string());
  CHECK(rc == cli::kExitOk);
  const auto ref = ws() / "flat_ref.png";
  img::save_png(img::make_image(32, 32, 1, 0.5f), ref.string());
  CHECK(slurp(flat) == slurp(ref));

  const auto odd = ws() / "odd.png";
  img::save_png(synth::smooth_image(50, 50, 32), odd.string());
  CHECK(run_cli("weights-map --extractor 'seeded(5)' --in " + odd.string() +
                " --out " + (ws() / "x.png").string()) == cli::kExitData);
  CHECK(run_cli("weights-map --extractor vgg --in " + in.string() + " --out " +
                (ws() / "x.png").string()) == cli::kExitUsage);
}
