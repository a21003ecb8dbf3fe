#pragma once

#include <optional>
#include <string>

#include "ganimc/extractor.hpp"
#include "ganimc/image.hpp"
#include "ganimc/losses.hpp"
#include "ganimc/trainer.hpp"

namespace ganimc::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Desk defaults for the run configuration: published hyperparameters where
/// the paper trail gives one, small documented values elsewhere.
train::TrainConfig default_train_config();

/// Flat key=value run configuration. `#` starts a comment, blank lines are
/// skipped, keys are single words. Parsing is strict: unknown keys, duplicate
/// keys, unparsable or out-of-range values are all collected and reported in
/// one ConfigError.
struct RunConfig {
  train::TrainConfig train = default_train_config();
  std::optional<Mode> mode;  // required by `train`, unused elsewhere
  std::string extractor_source = "seeded(42)";
  float noise_sigma = 0.0f;
  bool blur = false;

  img::DegradationSpec degradation() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// Canonical text that parses back to an identical configuration; stored in
/// checkpoints so inference can rebuild the matching generator.
std::string serialize_run_config(const RunConfig& cfg);

/// "seeded(N)" builds reproducible random frozen weights; "import(path)"
/// loads a weight checkpoint. Anything else raises ConfigError.
FeatureExtractor build_extractor(const std::string& source);

/// Full command dispatcher; returns the process exit code.
int run(int argc, const char* const* argv);

}  // namespace ganimc::cli
