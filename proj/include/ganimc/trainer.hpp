#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ganimc/adam.hpp"
#include "ganimc/checkpoint.hpp"
#include "ganimc/extractor.hpp"
#include "ganimc/image.hpp"
#include "ganimc/losses.hpp"
#include "ganimc/network.hpp"

namespace ganimc::train {

struct TrainConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  int pretrain_iters = 2000;
  int gan_iters = 0;
  // Counted in generator updates of the adversarial phase; <= 0 disables.
  int lr_decay_at = 100000;
  int batch_size = 16;
  int lr_patch = 16;
  int scale = 4;
  int g_blocks = 8;
  int g_channels = 64;
  uint64_t seed = 0;
  LossWeights weights;

  int hr_patch() const { return lr_patch * scale; }
  void validate() const;  // ContractError listing every violation
};

/// Parallel full-image lists; lr[i] is the degraded counterpart of hr[i].
struct Dataset {
  std::vector<img::Image> hr;
  std::vector<img::Image> lr;
};

/// Degrades each image with a per-image seed derived from `seed`.
Dataset make_training_set(std::vector<img::Image> hr,
                          const img::DegradationSpec& degradation,
                          uint64_t seed);

struct TraceRow {
  int64_t iteration = 0;  // 1-based update index within the phase
  float l_pixel = 0.0f;
  float l_adv_img = 0.0f;
  float l_adv_mc = 0.0f;
  float l_adv_color = 0.0f;
  float l_wc = 0.0f;
  float l_total = 0.0f;
  float lr = 0.0f;
};

/// Streams rows to a CSV file, flushing after every append so the trace
/// survives an abort mid-run.
class TraceWriter {
public:
  explicit TraceWriter(const std::string& path);
  ~TraceWriter();
  TraceWriter(const TraceWriter&) = delete;
  TraceWriter& operator=(const TraceWriter&) = delete;
  void append(const TraceRow& row);

private:
  std::FILE* file_ = nullptr;
};

void write_trace_csv(const std::vector<TraceRow>& rows,
                     const std::string& path);

/// Deterministic per-iteration stream seed.
uint64_t mix_seed(uint64_t seed, uint64_t stream, uint64_t index);

/// Owns the generator, the three discriminators, and their optimizers, and
/// runs the two training phases. Discriminators are only built when
/// `with_discriminators` is set; a pixel-pretraining run does not pay for
/// their dense layers.
class Trainer {
public:
  Trainer(const TrainConfig& cfg, bool with_discriminators);

  using RowCallback = std::function<void(const TraceRow&)>;

  /// Adam on the mean-square pixel objective only. Iterations
  /// [start_iter, cfg.pretrain_iters) are run; batches are seeded by absolute
  /// iteration index, so a resumed run draws the same data. Throws
  /// NumericError naming the iteration when the loss goes non-finite.
  std::vector<TraceRow> pretrain(const Dataset& data,
                                 int start_iter = 0,
                                 const RowCallback& on_row = nullptr);

  /// Alternating updates, one iteration each: D_img, D_mc, D_c, then the
  /// generator under the full objective. The learning rate drops to a tenth
  /// once cfg.lr_decay_at generator updates are done. Throws NumericError
  /// naming the first non-finite component and the iteration.
  std::vector<TraceRow> train_adversarial(const Dataset& data,
                                          const FeatureExtractor& extractor,
                                          int start_iter = 0,
                                          const RowCallback& on_row = nullptr);

  /// One adversarial iteration on an explicit batch: a single training-mode
  /// generator forward; its detached output feeds the three discriminator
  /// steps, the attached one feeds the generator step. The step flags exist
  /// so tests can isolate one side; production passes both true.
  TraceRow run_gan_iteration(const TensorPtr& lr_batch,
                             const TensorPtr& hr_batch,
                             const FeatureExtractor& extractor, float lr_now,
                             bool do_d_steps = true, bool do_g_step = true);

  /// Every network tensor (weights and batch-norm running buffers) plus
  /// optimizer moments and step counters. `config` is stored verbatim.
  ckpt::Checkpoint to_checkpoint(uint32_t iteration,
                                 const std::string& config) const;

  /// Restores everything to_checkpoint saved, shape-checked; ImportError
  /// lists every missing or mismatched tensor.
  void restore(const ckpt::Checkpoint& c);

  /// Imports only the generator weights (for starting adversarial training
  /// from a pixel-pretrained checkpoint).
  void load_generator(const ckpt::Checkpoint& c);

  Generator& generator() { return *g_; }
  Discriminator& d_img() { return *d_img_; }
  Discriminator& d_mc() { return *d_mc_; }
  Discriminator& d_color() { return *d_color_; }
  bool has_discriminators() const { return d_img_ != nullptr; }
  Adam& adam_g() { return *adam_g_; }
  Adam& adam_d_img() { return *adam_d_img_; }
  Adam& adam_d_mc() { return *adam_d_mc_; }
  Adam& adam_d_color() { return *adam_d_color_; }
  const TrainConfig& config() const { return cfg_; }

private:
  float lr_for_gan_iter(int iter) const;
  void check_finite(const TraceRow& row, const char* phase) const;

  TrainConfig cfg_;
  std::unique_ptr<Generator> g_;
  std::unique_ptr<Discriminator> d_img_, d_mc_, d_color_;
  std::unique_ptr<Adam> adam_g_, adam_d_img_, adam_d_mc_, adam_d_color_;
  std::vector<float> blur_kernel_;
};

}  // namespace ganimc::train
