#include "ganimc/trainer.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <tuple>
#include <utility>

#include "ganimc/error.hpp"
#include "ganimc/ops.hpp"

namespace ganimc::train {

namespace {

constexpr uint64_t kDegradeStream = 1;
constexpr uint64_t kPretrainStream = 2;
constexpr uint64_t kGanStream = 3;

// Network init seed streams, derived from the config seed.
constexpr uint64_t kSeedG = 10;
constexpr uint64_t kSeedDImg = 11;
constexpr uint64_t kSeedDMc = 12;
constexpr uint64_t kSeedDColor = 13;

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct Batch {
  TensorPtr lr;
  TensorPtr hr;
};

Batch sample_batch(const Dataset& data, const TrainConfig& cfg,
                   uint64_t seed) {
  auto pairs = img::sample_patches(data.hr, data.lr, cfg.lr_patch, cfg.scale,
                                   cfg.batch_size, seed);
  std::vector<img::Image> lrs, hrs;
  lrs.reserve(pairs.size());
  hrs.reserve(pairs.size());
  for (auto& p : pairs) {
    lrs.push_back(std::move(p.lr));
    hrs.push_back(std::move(p.hr));
  }
  return {img::to_tensor(lrs), img::to_tensor(hrs)};
}

float scalar_of(const TensorPtr& t) { return t->data[0]; }

}  // namespace

uint64_t mix_seed(uint64_t seed, uint64_t stream, uint64_t index) {
  return splitmix64(seed ^ splitmix64(stream ^ splitmix64(index)));
}

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (!(lr > 0.0f)) problems.push_back("lr must be positive");
  if (!(beta1 >= 0.0f && beta1 < 1.0f))
    problems.push_back("beta1 must lie in [0, 1)");
  if (pretrain_iters < 0) problems.push_back("pretrain_iters must be >= 0");
  if (gan_iters < 0) problems.push_back("gan_iters must be >= 0");
  if (batch_size < 1) problems.push_back("batch_size must be >= 1");
  if (lr_patch < 1) problems.push_back("lr_patch must be >= 1");
  if (scale != 2 && scale != 4) problems.push_back("scale must be 2 or 4");
  if (g_blocks < 1) problems.push_back("g_blocks must be >= 1");
  if (g_channels < 1) problems.push_back("g_channels must be >= 1");
  try {
    weights.validate();
  } catch (const Error& e) {
    problems.push_back(e.what());
  }
  if (problems.empty()) return;
  std::string msg = "invalid training configuration:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw ContractError(msg);
}

Dataset make_training_set(std::vector<img::Image> hr,
                          const img::DegradationSpec& degradation,
                          uint64_t seed) {
  Dataset d;
  d.lr.reserve(hr.size());
  for (size_t i = 0; i < hr.size(); ++i)
    d.lr.push_back(img::degrade(hr[i], degradation,
                                mix_seed(seed, kDegradeStream, i)));
  d.hr = std::move(hr);
  return d;
}

TraceWriter::TraceWriter(const std::string& path) {
  file_ = std::fopen(path.c_str(), "wb");
  if (!file_) throw IoError("cannot open trace file for writing: " + path);
  std::fputs(
      "iteration,l_pixel,l_adv_img,l_adv_mc,l_adv_color,l_wc,l_total,lr\n",
      file_);
  std::fflush(file_);
}

TraceWriter::~TraceWriter() {
  if (file_) std::fclose(file_);
}

void TraceWriter::append(const TraceRow& r) {
  std::fprintf(file_, "%" PRId64 ",%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
               r.iteration, r.l_pixel, r.l_adv_img, r.l_adv_mc, r.l_adv_color,
               r.l_wc, r.l_total, r.lr);
  if (std::fflush(file_) != 0) throw IoError("trace write failed");
}

void write_trace_csv(const std::vector<TraceRow>& rows,
                     const std::string& path) {
  TraceWriter w(path);
  for (const auto& r : rows) w.append(r);
}

Trainer::Trainer(const TrainConfig& cfg, bool with_discriminators)
    : cfg_(cfg) {
  cfg_.validate();
  GeneratorSpec gs;
  gs.scale = cfg_.scale;
  gs.blocks = cfg_.g_blocks;
  gs.channels = cfg_.g_channels;
  g_ = std::make_unique<Generator>(gs, mix_seed(cfg_.seed, kSeedG, 0));
  AdamConfig ac;
  ac.lr = cfg_.lr;
  ac.beta1 = cfg_.beta1;
  adam_g_ = std::make_unique<Adam>(g_->parameters(), ac);
  if (with_discriminators) {
    const int e = cfg_.hr_patch();
    d_img_ = std::make_unique<Discriminator>(DiscKind::img, e,
                                             mix_seed(cfg_.seed, kSeedDImg, 0));
    d_mc_ = std::make_unique<Discriminator>(DiscKind::mc, e,
                                            mix_seed(cfg_.seed, kSeedDMc, 0));
    d_color_ = std::make_unique<Discriminator>(
        DiscKind::color, e, mix_seed(cfg_.seed, kSeedDColor, 0));
    adam_d_img_ = std::make_unique<Adam>(d_img_->parameters(), ac);
    adam_d_mc_ = std::make_unique<Adam>(d_mc_->parameters(), ac);
    adam_d_color_ = std::make_unique<Adam>(d_color_->parameters(), ac);
  }
  blur_kernel_ = img::gaussian_kernel(img::GaussianKernelSpec{});
}

float Trainer::lr_for_gan_iter(int iter) const {
  if (cfg_.lr_decay_at > 0 && iter >= cfg_.lr_decay_at)
    return cfg_.lr * 0.1f;
  return cfg_.lr;
}

void Trainer::check_finite(const TraceRow& row, const char* phase) const {
  const std::pair<const char*, float> components[] = {
      {"pixel", row.l_pixel},          {"adversarial (image)", row.l_adv_img},
      {"adversarial (gray)", row.l_adv_mc},
      {"adversarial (color)", row.l_adv_color},
      {"weighted content", row.l_wc},  {"total", row.l_total}};
  for (const auto& [name, v] : components) {
    if (std::isfinite(v)) continue;
    std::ostringstream msg;
    msg << phase << " loss component '" << name << "' is not finite at "
        << "iteration " << row.iteration << " (batch seed "
        << mix_seed(cfg_.seed,
                    std::string(phase) == "pretraining" ? kPretrainStream
                                                        : kGanStream,
                    static_cast<uint64_t>(row.iteration - 1))
        << ")";
    throw NumericError(msg.str());
  }
}

std::vector<TraceRow> Trainer::pretrain(const Dataset& data, int start_iter,
                                        const RowCallback& on_row) {
  if (data.hr.empty() || data.hr.size() != data.lr.size())
    throw ContractError("pretraining needs a non-empty paired dataset");
  std::vector<TraceRow> rows;
  for (int i = start_iter; i < cfg_.pretrain_iters; ++i) {
    auto batch = sample_batch(
        data, cfg_, mix_seed(cfg_.seed, kPretrainStream, uint64_t(i)));
    auto sr = g_->forward(batch.lr, true);
    auto l = loss::pixel(sr, batch.hr);
    adam_g_->zero_grad();
    backward(l);
    adam_g_->step();

    TraceRow row;
    row.iteration = i + 1;
    row.l_pixel = scalar_of(l);
    row.l_total = row.l_pixel;
    row.lr = cfg_.lr;
    rows.push_back(row);
    if (on_row) on_row(row);
    check_finite(row, "pretraining");
  }
  return rows;
}

TraceRow Trainer::run_gan_iteration(const TensorPtr& lr_batch,
                                    const TensorPtr& hr_batch,
                                    const FeatureExtractor& extractor,
                                    float lr_now, bool do_d_steps,
                                    bool do_g_step) {
  if (!has_discriminators())
    throw ContractError(
        "adversarial training needs a trainer built with discriminators");
  adam_g_->set_lr(lr_now);
  adam_d_img_->set_lr(lr_now);
  adam_d_mc_->set_lr(lr_now);
  adam_d_color_->set_lr(lr_now);

  // One training-mode generator forward serves the whole iteration; the
  // discriminators see it detached so their steps stop at the fake images.
  auto sr = g_->forward(lr_batch, true);
  auto sr_d = detach(sr);

  auto to_mc = [&](const TensorPtr& x) {
    return ops::channel_weighted_sum(x, img::gray_weights());
  };
  auto to_blur = [&](const TensorPtr& x) {
    const int pad = 10;  // keeps the 21-tap blur extent-preserving
    return ops::depthwise_conv_valid(ops::pad_reflect(x, pad), blur_kernel_,
                                     21);
  };

  if (do_d_steps) {
    const std::tuple<Discriminator*, Adam*, TensorPtr, TensorPtr> duels[] = {
        {d_img_.get(), adam_d_img_.get(), hr_batch, sr_d},
        {d_mc_.get(), adam_d_mc_.get(), to_mc(hr_batch), to_mc(sr_d)},
        {d_color_.get(), adam_d_color_.get(), to_blur(hr_batch),
         to_blur(sr_d)}};
    for (const auto& [d, adam, real, fake] : duels) {
      auto p_real = d->forward(real, true);
      auto p_fake = d->forward(fake, true);
      auto l = loss::discriminator(p_real, p_fake, cfg_.weights.d_loss_reduction);
      adam->zero_grad();
      backward(l);
      adam->step();
    }
  }

  // Generator pass: discriminator forwards run on batch statistics without
  // touching the running buffers, so the D state after this step is exactly
  // what the D updates left behind.
  auto p_img = d_img_->forward(sr, true, false);
  auto p_mc = d_mc_->forward(to_mc(sr), true, false);
  auto p_color = d_color_->forward(to_blur(sr), true, false);
  auto l_adv_img = loss::generator_adv(p_img, cfg_.weights.g_adv_reduction);
  auto l_adv_mc = loss::generator_adv(p_mc, cfg_.weights.g_adv_reduction);
  auto l_adv_color = loss::generator_adv(p_color, cfg_.weights.g_adv_reduction);
  auto l_adv = loss::total_adv(l_adv_img, l_adv_mc, l_adv_color, cfg_.weights);
  auto l_pix = loss::pixel(sr, hr_batch);
  auto l_wc = loss::content_for_mode(sr, hr_batch, extractor, cfg_.weights);
  auto l_total = loss::total(l_pix, l_adv, l_wc, cfg_.weights);

  if (do_g_step) {
    adam_g_->zero_grad();
    backward(l_total);
    adam_g_->step();
  }

  TraceRow row;
  row.l_pixel = scalar_of(l_pix);
  row.l_adv_img = scalar_of(l_adv_img);
  row.l_adv_mc = scalar_of(l_adv_mc);
  row.l_adv_color = scalar_of(l_adv_color);
  row.l_wc = scalar_of(l_wc);
  row.l_total = scalar_of(l_total);
  row.lr = lr_now;
  return row;
}

std::vector<TraceRow> Trainer::train_adversarial(const Dataset& data,
                                                 const FeatureExtractor& fe,
                                                 int start_iter,
                                                 const RowCallback& on_row) {
  if (data.hr.empty() || data.hr.size() != data.lr.size())
    throw ContractError("adversarial training needs a non-empty paired dataset");
  std::vector<TraceRow> rows;
  for (int i = start_iter; i < cfg_.gan_iters; ++i) {
    auto batch =
        sample_batch(data, cfg_, mix_seed(cfg_.seed, kGanStream, uint64_t(i)));
    TraceRow row =
        run_gan_iteration(batch.lr, batch.hr, fe, lr_for_gan_iter(i));
    row.iteration = i + 1;
    rows.push_back(row);
    if (on_row) on_row(row);
    check_finite(row, "adversarial");
  }
  return rows;
}

namespace {

void add_net(ckpt::Checkpoint& c, const std::string& prefix,
             const std::vector<std::pair<std::string, TensorPtr>>& named) {
  for (const auto& [name, t] : named) c.add(prefix + name, t);
}

void add_adam(ckpt::Checkpoint& c, const std::string& prefix, Adam& adam) {
  const auto& params = adam.params();
  for (size_t i = 0; i < params.size(); ++i) {
    auto m1 = make_tensor(params[i]->shape, adam.moment1()[i]);
    auto m2 = make_tensor(params[i]->shape, adam.moment2()[i]);
    c.add(prefix + "m1." + std::to_string(i), m1);
    c.add(prefix + "m2." + std::to_string(i), m2);
  }
  c.add(prefix + "t",
        make_tensor({1}, std::vector<float>{float(adam.steps())}));
}

// Copies checkpoint tensors into live ones by name, collecting complaints.
struct Restorer {
  const ckpt::Checkpoint& c;
  std::vector<std::string> problems;

  void tensor(const std::string& name, const TensorPtr& into) {
    auto src = c.find(name);
    if (!src) {
      problems.push_back(name + " missing");
      return;
    }
    if (src->shape != into->shape) {
      problems.push_back(name + " has shape " + shape_str(src->shape) +
                         ", expected " + shape_str(into->shape));
      return;
    }
    into->data = src->data;
  }

  void net(const std::string& prefix,
           const std::vector<std::pair<std::string, TensorPtr>>& named) {
    for (const auto& [name, t] : named) tensor(prefix + name, t);
  }

  void adam(const std::string& prefix, Adam& a) {
    const auto& params = a.params();
    for (size_t i = 0; i < params.size(); ++i) {
      for (auto [moments, tag] : {std::pair{&a.moment1(), "m1."},
                                  std::pair{&a.moment2(), "m2."}}) {
        const std::string name = prefix + tag + std::to_string(i);
        auto src = c.find(name);
        if (!src) {
          problems.push_back(name + " missing");
        } else if (src->data.size() != (*moments)[i].size()) {
          problems.push_back(name + " has the wrong extent");
        } else {
          (*moments)[i] = src->data;
        }
      }
    }
    auto t = c.find(prefix + "t");
    if (!t || t->data.empty())
      problems.push_back(prefix + "t missing");
    else
      a.set_steps(int64_t(std::llround(double(t->data[0]))));
  }

  void finish(const char* what) {
    if (problems.empty()) return;
    std::string msg = std::string("checkpoint does not match the ") + what +
                      ":";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ImportError(msg);
  }
};

}  // namespace

ckpt::Checkpoint Trainer::to_checkpoint(uint32_t iteration,
                                        const std::string& config) const {
  ckpt::Checkpoint c;
  add_net(c, "g.", g_->named_tensors());
  add_adam(c, "adam.g.", *adam_g_);
  if (has_discriminators()) {
    add_net(c, "d_img.", d_img_->named_tensors());
    add_net(c, "d_mc.", d_mc_->named_tensors());
    add_net(c, "d_color.", d_color_->named_tensors());
    add_adam(c, "adam.d_img.", *adam_d_img_);
    add_adam(c, "adam.d_mc.", *adam_d_mc_);
    add_adam(c, "adam.d_color.", *adam_d_color_);
  }
  c.iteration = iteration;
  c.config = config;
  return c;
}

void Trainer::restore(const ckpt::Checkpoint& c) {
  Restorer r{c, {}};
  r.net("g.", g_->named_tensors());
  r.adam("adam.g.", *adam_g_);
  if (has_discriminators()) {
    r.net("d_img.", d_img_->named_tensors());
    r.net("d_mc.", d_mc_->named_tensors());
    r.net("d_color.", d_color_->named_tensors());
    r.adam("adam.d_img.", *adam_d_img_);
    r.adam("adam.d_mc.", *adam_d_mc_);
    r.adam("adam.d_color.", *adam_d_color_);
  }
  r.finish("trainer state");
}

void Trainer::load_generator(const ckpt::Checkpoint& c) {
  Restorer r{c, {}};
  r.net("g.", g_->named_tensors());
  r.finish("generator");
}

}  // namespace ganimc::train
