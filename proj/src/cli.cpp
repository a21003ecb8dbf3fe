#include "ganimc/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ganimc/checkpoint.hpp"
#include "ganimc/error.hpp"
#include "ganimc/metrics.hpp"

namespace fs = std::filesystem;

namespace ganimc::cli {

namespace {

bool parse_full_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  try {
    size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

bool parse_full_i64(const std::string& s, long long& out) {
  if (s.empty()) return false;
  try {
    size_t used = 0;
    out = std::stoll(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

bool parse_full_u64(const std::string& s, unsigned long long& out) {
  if (s.empty() || s[0] == '-') return false;
  try {
    size_t used = 0;
    out = std::stoull(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool extractor_source_ok(const std::string& s) {
  if (s.size() >= 9 && s.rfind("seeded(", 0) == 0 && s.back() == ')') {
    unsigned long long seed = 0;
    return parse_full_u64(s.substr(7, s.size() - 8), seed);
  }
  if (s.size() >= 9 && s.rfind("import(", 0) == 0 && s.back() == ')')
    return s.size() > 8;
  return false;
}

std::string fmt_float(float v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", double(v));
  return buf;
}

void warn(const std::string& msg) {
  std::fprintf(stderr, "warning: %s\n", msg.c_str());
}

std::vector<fs::path> list_pngs(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

void ensure_parent_dir(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

struct NamedImage {
  std::string name;  // basename with extension
  img::Image image;
};

// Loads every readable PNG in the directory, warning about the rest.
std::vector<NamedImage> load_pngs(const std::string& dir) {
  std::vector<NamedImage> out;
  for (const auto& path : list_pngs(dir)) {
    try {
      out.push_back({path.filename().string(), img::load_png(path.string())});
    } catch (const std::exception& e) {
      warn("skipping " + path.filename().string() + ": " + e.what());
    }
  }
  return out;
}

bool has_discriminator_state(const ckpt::Checkpoint& c) {
  for (const auto& [name, t] : c.tensors)
    if (name.rfind("d_img.", 0) == 0) return true;
  return false;
}

RunConfig load_train_command_config(const std::string& path,
                                    bool require_mode) {
  std::ifstream in(path);
  if (!in.good()) throw ConfigError("cannot read config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_run_config(ss.str());
  if (require_mode && !cfg.mode) {
    throw ConfigError(
        "train requires mode=GAN-IMC or mode=GAN-IMCW in the config");
  }
  return cfg;
}

train::Dataset prepare_dataset(const RunConfig& cfg, const std::string& hr_dir) {
  auto named = load_pngs(hr_dir);
  std::vector<img::Image> hr;
  for (auto& n : named) {
    if (n.image.height < cfg.train.hr_patch() ||
        n.image.width < cfg.train.hr_patch()) {
      warn("skipping " + n.name + ": smaller than the " +
           std::to_string(cfg.train.hr_patch()) + "px training patch");
      continue;
    }
    hr.push_back(std::move(n.image));
  }
  if (hr.empty()) throw IoError("no usable training images in " + hr_dir);
  return train::make_training_set(std::move(hr), cfg.degradation(),
                                  cfg.train.seed);
}

int run_degrade(const std::string& in_dir, const std::string& out_dir,
                int scale, float noise_sigma, const std::string& blur_flag,
                uint64_t seed) {
  if ((scale != 2 && scale != 4) || noise_sigma < 0.0f ||
      (blur_flag != "on" && blur_flag != "off")) {
    std::fprintf(stderr,
                 "error: --scale must be 2 or 4, --noise-sigma must be >= 0, "
                 "--blur must be on or off\n");
    return kExitUsage;
  }
  img::DegradationSpec spec;
  spec.scale = scale;
  spec.noise_sigma = noise_sigma;
  if (blur_flag == "on") spec.blur = img::GaussianKernelSpec{};

  const auto inputs = list_pngs(in_dir);
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const auto name = inputs[i].filename().string();
    try {
      const auto hr = img::load_png(inputs[i].string());
      const auto lr = img::degrade(hr, spec, train::mix_seed(seed, 1, i));
      img::save_png(lr, (fs::path(out_dir) / name).string());
      written.push_back(name);
    } catch (const std::exception& e) {
      warn("skipping " + name + ": " + e.what());
    }
  }
  if (written.empty()) {
    std::fprintf(stderr, "error: no outputs produced from %s\n",
                 in_dir.c_str());
    return kExitData;
  }
  std::ofstream manifest(fs::path(out_dir) / "manifest.txt");
  manifest << "scale=" << scale << "\n"
           << "noise_sigma=" << fmt_float(noise_sigma) << "\n"
           << "blur=" << blur_flag << "\n"
           << "seed=" << seed << "\n"
           << "outputs=" << written.size() << "\n";
  for (const auto& name : written) manifest << "file=" << name << "\n";
  return kExitOk;
}

int run_pretrain(const std::string& config_path, const std::string& hr_dir,
                 const std::string& init_path, const std::string& out_path) {
  const auto cfg = load_train_command_config(config_path, false);
  auto data = prepare_dataset(cfg, hr_dir);
  train::Trainer trainer(cfg.train, false);
  int start = 0;
  if (!init_path.empty()) {
    const auto c = ckpt::load(init_path);
    trainer.restore(c);
    start = int(c.iteration);
  }
  ensure_parent_dir(out_path);
  train::TraceWriter writer(out_path + ".trace.csv");
  trainer.pretrain(data, start,
                   [&](const train::TraceRow& row) { writer.append(row); });
  ckpt::save(trainer.to_checkpoint(uint32_t(cfg.train.pretrain_iters),
                                   serialize_run_config(cfg)),
             out_path);
  return kExitOk;
}

int run_train(const std::string& config_path, const std::string& hr_dir,
              const std::string& init_path, const std::string& out_path) {
  auto cfg = load_train_command_config(config_path, true);
  cfg.train.weights.mode = *cfg.mode;
  const auto extractor = build_extractor(cfg.extractor_source);
  auto data = prepare_dataset(cfg, hr_dir);
  train::Trainer trainer(cfg.train, true);
  int start = 0;
  if (!init_path.empty()) {
    const auto c = ckpt::load(init_path);
    if (has_discriminator_state(c)) {
      trainer.restore(c);
      start = int(c.iteration);
    } else {
      trainer.load_generator(c);
    }
  } else {
    warn("no --init checkpoint; the generator starts from its seeded "
         "initialization instead of a pixel-pretrained one");
  }
  ensure_parent_dir(out_path);
  train::TraceWriter writer(out_path + ".trace.csv");
  trainer.train_adversarial(
      data, extractor, start,
      [&](const train::TraceRow& row) { writer.append(row); });
  ckpt::save(trainer.to_checkpoint(uint32_t(cfg.train.gan_iters),
                                   serialize_run_config(cfg)),
             out_path);
  return kExitOk;
}

img::Image super_resolve(train::Trainer& holder, const img::Image& lr) {
  const auto out = holder.generator().generate(img::to_tensor(lr));
  return img::from_tensor(*out, 0, true);
}

int run_sr(const std::string& model_path, const std::string& in_path,
           const std::string& out_path) {
  const auto c = ckpt::load(model_path);
  RunConfig cfg;
  try {
    cfg = parse_run_config(c.config);
  } catch (const Error&) {
    throw FormatError(
        "model checkpoint does not carry a readable run configuration: " +
        model_path);
  }
  train::Trainer holder(cfg.train, false);
  holder.load_generator(c);

  if (fs::is_directory(in_path)) {
    fs::create_directories(out_path);
    size_t written = 0;
    for (const auto& named : load_pngs(in_path)) {
      try {
        img::save_png(super_resolve(holder, named.image),
                      (fs::path(out_path) / named.name).string());
        ++written;
      } catch (const std::exception& e) {
        warn("skipping " + named.name + ": " + e.what());
      }
    }
    if (written == 0) {
      std::fprintf(stderr, "error: no outputs produced from %s\n",
                   in_path.c_str());
      return kExitData;
    }
    return kExitOk;
  }
  const auto image = img::load_png(in_path);
  ensure_parent_dir(out_path);
  img::save_png(super_resolve(holder, image), out_path);
  return kExitOk;
}

int run_eval(const std::string& sr_dir, const std::string& hr_dir,
             const std::string& model_path, const std::string& ma_path,
             const std::string& report_path) {
  const auto model = metrics::load_niqe(model_path);
  std::map<std::string, double> ma;
  if (!ma_path.empty()) ma = metrics::load_ma_csv(ma_path);

  std::map<std::string, fs::path> sr_files, hr_files;
  for (const auto& p : list_pngs(sr_dir)) sr_files[p.filename().string()] = p;
  for (const auto& p : list_pngs(hr_dir)) hr_files[p.filename().string()] = p;

  int gaps = 0;
  for (const auto& [name, p] : sr_files)
    if (!hr_files.count(name)) {
      warn("unmatched (no HR counterpart): " + name);
      ++gaps;
    }
  for (const auto& [name, p] : hr_files)
    if (!sr_files.count(name)) {
      warn("unmatched (no SR counterpart): " + name);
      ++gaps;
    }

  std::vector<metrics::ScoreRow> rows;
  for (const auto& [name, sr_path] : sr_files) {
    const auto hr_it = hr_files.find(name);
    if (hr_it == hr_files.end()) continue;
    metrics::ScoreRow row;
    row.name = fs::path(name).stem().string();
    try {
      const auto sr = img::load_png(sr_path.string());
      const auto hr = img::load_png(hr_it->second.string());
      row.psnr_db = metrics::psnr(sr, hr);
      row.niqe = metrics::niqe_score(sr, model);
    } catch (const std::exception& e) {
      warn("skipping " + name + ": " + e.what());
      ++gaps;
      continue;
    }
    const auto ma_it = ma.find(row.name);
    if (ma_it != ma.end()) row.ma = ma_it->second;
    rows.push_back(std::move(row));
  }
  ensure_parent_dir(report_path);
  metrics::write_report_csv(metrics::make_report(std::move(rows)),
                            report_path);
  return gaps ? kExitData : kExitOk;
}

int run_niqe_fit(const std::string& pristine_dir, const std::string& out_path) {
  auto named = load_pngs(pristine_dir);
  std::vector<img::Image> images;
  for (auto& n : named) images.push_back(std::move(n.image));
  if (images.empty()) throw IoError("no PNG images in " + pristine_dir);
  const auto model = metrics::niqe_fit(images);
  ensure_parent_dir(out_path);
  metrics::save_niqe(model, out_path);
  return kExitOk;
}

int run_weights_map(const std::string& source, const std::string& in_path,
                    const std::string& out_path) {
  const auto extractor = build_extractor(source);
  const auto image = img::load_png(in_path);
  if (image.height % 16 != 0 || image.width % 16 != 0) {
    throw ContractError("input extents must be divisible by 16, got " +
                        std::to_string(image.height) + "x" +
                        std::to_string(image.width));
  }
  const auto taps = extractor.extract(img::to_tensor(image));
  const auto alpha = loss::spatial_weights(taps.low);
  const int h = alpha->dim(2), w = alpha->dim(3);
  float lo = alpha->data[0], hi = alpha->data[0];
  for (float v : alpha->data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  auto map = img::make_image(h, w, 1);
  if (hi - lo < 1e-12f) {
    std::fill(map.data.begin(), map.data.end(), 0.5f);
  } else {
    for (size_t i = 0; i < map.data.size(); ++i)
      map.data[i] = (alpha->data[i] - lo) / (hi - lo);
  }
  ensure_parent_dir(out_path);
  img::save_png(map, out_path);
  return kExitOk;
}

}  // namespace

train::TrainConfig default_train_config() {
  train::TrainConfig t;
  t.pretrain_iters = 50000;  // published pretraining budget
  t.gan_iters = 2000;        // desk-scale adversarial budget
  return t;
}

img::DegradationSpec RunConfig::degradation() const {
  img::DegradationSpec spec;
  spec.scale = train.scale;
  spec.noise_sigma = noise_sigma;
  if (blur) spec.blur = img::GaussianKernelSpec{};
  return spec;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::vector<std::string> problems;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;

  auto want_int = [&](const std::string& val, int& out) {
    long long v = 0;
    if (!parse_full_i64(val, v) || v < INT32_MIN || v > INT32_MAX) return false;
    out = int(v);
    return true;
  };
  auto want_float = [&](const std::string& val, float& out) {
    double v = 0.0;
    if (!parse_full_double(val, v)) return false;
    out = float(v);
    return true;
  };

  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const auto line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto at = "line " + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      problems.push_back(at + "expected key=value, got \"" + line + "\"");
      continue;
    }
    const auto key = trim(line.substr(0, eq));
    const auto val = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      problems.push_back(at + "duplicate key " + key);
      continue;
    }
    bool ok = true;
    if (key == "scale") ok = want_int(val, cfg.train.scale);
    else if (key == "lr_patch") ok = want_int(val, cfg.train.lr_patch);
    else if (key == "batch_size") ok = want_int(val, cfg.train.batch_size);
    else if (key == "pretrain_iters") ok = want_int(val, cfg.train.pretrain_iters);
    else if (key == "gan_iters") ok = want_int(val, cfg.train.gan_iters);
    else if (key == "lr_decay_at") ok = want_int(val, cfg.train.lr_decay_at);
    else if (key == "lr") ok = want_float(val, cfg.train.lr);
    else if (key == "beta1") ok = want_float(val, cfg.train.beta1);
    else if (key == "w_adv_total") ok = want_float(val, cfg.train.weights.w_adv_total);
    else if (key == "w_adv_mc") ok = want_float(val, cfg.train.weights.w_adv_mc);
    else if (key == "w_adv_color") ok = want_float(val, cfg.train.weights.w_adv_color);
    else if (key == "w_wc") ok = want_float(val, cfg.train.weights.w_wc);
    else if (key == "w_high") ok = want_float(val, cfg.train.weights.w_high);
    else if (key == "noise_sigma") ok = want_float(val, cfg.noise_sigma);
    else if (key == "seed") {
      unsigned long long v = 0;
      ok = parse_full_u64(val, v);
      if (ok) cfg.train.seed = v;
    } else if (key == "mode") {
      const auto m = parse_mode(val);
      ok = m.has_value();
      if (ok) cfg.mode = m;
    } else if (key == "blur") {
      ok = val == "on" || val == "off";
      if (ok) cfg.blur = val == "on";
    } else if (key == "extractor_source") {
      ok = extractor_source_ok(val);
      if (ok) cfg.extractor_source = val;
      else problems.push_back(at + "extractor_source must be seeded(N) or "
                                   "import(path), got \"" + val + "\"");
    } else {
      problems.push_back(at + "unknown key " + key);
      continue;
    }
    if (!ok && key != "extractor_source")
      problems.push_back(at + "bad value for " + key + ": \"" + val + "\"");
  }

  if (cfg.noise_sigma < 0.0f)
    problems.push_back("noise_sigma must be >= 0");
  try {
    cfg.train.validate();
  } catch (const Error& e) {
    // Fold the per-field lines of the nested report into this one.
    std::istringstream lines(e.what());
    std::string l;
    while (std::getline(lines, l)) {
      l = trim(l);
      if (!l.empty() && l.back() != ':') problems.push_back(l);
    }
  }
  if (!problems.empty()) {
    std::string msg = "configuration errors:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw ConfigError("cannot read config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
  const auto& t = cfg.train;
  std::string out;
  out += "scale=" + std::to_string(t.scale) + "\n";
  out += "lr_patch=" + std::to_string(t.lr_patch) + "\n";
  out += "batch_size=" + std::to_string(t.batch_size) + "\n";
  out += "lr=" + fmt_float(t.lr) + "\n";
  out += "beta1=" + fmt_float(t.beta1) + "\n";
  out += "pretrain_iters=" + std::to_string(t.pretrain_iters) + "\n";
  out += "gan_iters=" + std::to_string(t.gan_iters) + "\n";
  out += "lr_decay_at=" + std::to_string(t.lr_decay_at) + "\n";
  out += "seed=" + std::to_string(t.seed) + "\n";
  if (cfg.mode) out += std::string("mode=") + mode_name(*cfg.mode) + "\n";
  out += "w_adv_total=" + fmt_float(t.weights.w_adv_total) + "\n";
  out += "w_adv_mc=" + fmt_float(t.weights.w_adv_mc) + "\n";
  out += "w_adv_color=" + fmt_float(t.weights.w_adv_color) + "\n";
  out += "w_wc=" + fmt_float(t.weights.w_wc) + "\n";
  out += "w_high=" + fmt_float(t.weights.w_high) + "\n";
  out += "extractor_source=" + cfg.extractor_source + "\n";
  out += "noise_sigma=" + fmt_float(cfg.noise_sigma) + "\n";
  out += std::string("blur=") + (cfg.blur ? "on" : "off") + "\n";
  return out;
}

FeatureExtractor build_extractor(const std::string& source) {
  if (!extractor_source_ok(source)) {
    throw ConfigError("extractor source must be seeded(N) or import(path), "
                      "got \"" + source + "\"");
  }
  if (source.rfind("seeded(", 0) == 0) {
    unsigned long long seed = 0;
    parse_full_u64(source.substr(7, source.size() - 8), seed);
    return FeatureExtractor::seeded(seed);
  }
  return FeatureExtractor::import_from(source.substr(7, source.size() - 8));
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Multi-discriminator super-resolution toolkit"};
  app.require_subcommand(1);

  std::string in_dir, out_dir;
  int deg_scale = 4;
  float deg_noise = 0.0f;
  std::string deg_blur = "off";
  uint64_t deg_seed = 0;
  auto* degrade = app.add_subcommand(
      "degrade", "Produce LR counterparts for a directory of HR PNGs");
  degrade->add_option("--in", in_dir, "HR input directory")->required();
  degrade->add_option("--out", out_dir, "LR output directory")->required();
  degrade->add_option("--scale", deg_scale, "Downscale factor (2 or 4)");
  degrade->add_option("--noise-sigma", deg_noise, "Additive noise deviation");
  degrade->add_option("--blur", deg_blur, "Gaussian pre-blur: on or off");
  degrade->add_option("--seed", deg_seed, "Noise seed");

  std::string config_path, hr_dir, init_path, ckpt_out;
  auto* pretrain = app.add_subcommand(
      "pretrain", "Pixel-loss generator initialization");
  pretrain->add_option("--config", config_path, "key=value config file")
      ->required();
  pretrain->add_option("--hr", hr_dir, "HR training image directory")
      ->required();
  pretrain->add_option("--init", init_path, "Checkpoint to resume from");
  pretrain->add_option("--out", ckpt_out, "Output checkpoint path")
      ->required();

  auto* train_cmd = app.add_subcommand(
      "train", "Adversarial phase with the three discriminators");
  train_cmd->add_option("--config", config_path, "key=value config file")
      ->required();
  train_cmd->add_option("--hr", hr_dir, "HR training image directory")
      ->required();
  train_cmd->add_option("--init", init_path,
                        "Pretrained or mid-run checkpoint");
  train_cmd->add_option("--out", ckpt_out, "Output checkpoint path")
      ->required();

  std::string model_path, sr_in, sr_out;
  auto* sr = app.add_subcommand("sr", "Super-resolve a PNG or a directory");
  sr->add_option("--model", model_path, "Trained checkpoint")->required();
  sr->add_option("--in", sr_in, "LR input PNG or directory")->required();
  sr->add_option("--out", sr_out, "Output PNG or directory")->required();

  std::string eval_sr, eval_hr, niqe_model, ma_csv, report_csv;
  auto* eval = app.add_subcommand(
      "eval", "Score SR outputs against ground truth");
  eval->add_option("--sr", eval_sr, "SR image directory")->required();
  eval->add_option("--hr", eval_hr, "HR image directory")->required();
  eval->add_option("--niqe-model", niqe_model, "Fitted quality model file")
      ->required();
  eval->add_option("--ma", ma_csv, "Optional name,ma score CSV");
  eval->add_option("--report", report_csv, "Output report CSV")->required();

  std::string pristine_dir, niqe_out;
  auto* niqe_fit = app.add_subcommand(
      "niqe-fit", "Fit the no-reference quality model on pristine images");
  niqe_fit->add_option("--pristine", pristine_dir, "Pristine image directory")
      ->required();
  niqe_fit->add_option("--out", niqe_out, "Output model file")->required();

  std::string map_source = "seeded(42)", map_in, map_out;
  auto* weights_map = app.add_subcommand(
      "weights-map", "Export the spatial attention map as a grayscale PNG");
  weights_map->add_option("--extractor", map_source,
                          "seeded(N) or import(path)");
  weights_map->add_option("--in", map_in, "Input PNG")->required();
  weights_map->add_option("--out", map_out, "Output PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto guarded = [](auto&& body) -> int {
    try {
      return body();
    } catch (const NumericError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kExitNumeric;
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kExitUsage;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kExitData;
    }
  };

  if (*degrade)
    return guarded([&] {
      return run_degrade(in_dir, out_dir, deg_scale, deg_noise, deg_blur,
                         deg_seed);
    });
  if (*pretrain)
    return guarded([&] {
      return run_pretrain(config_path, hr_dir, init_path, ckpt_out);
    });
  if (*train_cmd)
    return guarded([&] {
      return run_train(config_path, hr_dir, init_path, ckpt_out);
    });
  if (*sr)
    return guarded([&] { return run_sr(model_path, sr_in, sr_out); });
  if (*eval)
    return guarded([&] {
      return run_eval(eval_sr, eval_hr, niqe_model, ma_csv, report_csv);
    });
  if (*niqe_fit)
    return guarded([&] { return run_niqe_fit(pristine_dir, niqe_out); });
  if (*weights_map)
    return guarded([&] {
      return run_weights_map(map_source, map_in, map_out);
    });
  return kExitUsage;
}

}  // namespace ganimc::cli
