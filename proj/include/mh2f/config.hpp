#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mh2f {

enum class FusionMode { rpf, add, concat };

std::string to_string(FusionMode m);
FusionMode fusion_mode_from_string(const std::string& s);

// Architecture hyperparameters. dcr_growth == 0 means "auto" (base_channels/2).
struct ModelConfig {
  int num_mheb = 8;
  int base_channels = 32;
  int dcr_units_per_stream = 2;
  int dcr_growth = 0;
  int attention_reduction = 4;
  FusionMode fusion_mode = FusionMode::rpf;
  bool use_hadb = true;
  std::uint64_t seed = 1;

  [[nodiscard]] int growth() const {
    return dcr_growth > 0 ? dcr_growth : base_channels / 2;
  }
  bool operator==(const ModelConfig&) const = default;
};

// Dense layers per DCR unit.
inline constexpr int kDcrDenseLayers = 3;

inline constexpr double kAdamEpsilon = 1e-8;

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lambda = 0.2;
  int batch_size = 16;
  int patch_size = 64;
  int epochs = 2;
  int eval_every = 1;  // epochs between PSNR/SSIM evaluations
  std::uint64_t seed = 1;
  bool deterministic = true;
  ModelConfig model;

  bool operator==(const TrainConfig&) const = default;
};

// Parametric synthetic rain field.
struct RainParams {
  double angle_deg = 10.0;  // from vertical, [-45, 45]
  int length_px = 9;
  double density = 0.03;    // fraction of seed pixels activated
  double intensity = 0.6;
  double intensity_jitter = 0.3;
  std::uint64_t seed = 0;
};

// Returns a list of violated invariants (empty when valid).
std::vector<std::string> validate_model_config(const ModelConfig& c);
std::vector<std::string> validate_train_config(const TrainConfig& c);
std::vector<std::string> validate_rain_params(const RainParams& p);

// Throws config_error listing each violation.
void require_valid_model_config(const ModelConfig& c);
void require_valid_train_config(const TrainConfig& c);
void require_valid_rain_params(const RainParams& p);

// JSON round trip used by the config file, the CLI echo and checkpoints.
// Parsing rejects unknown keys.
std::string to_json_text(const TrainConfig& c, int indent = 2);
std::string to_json_text(const ModelConfig& c, int indent = 2);
std::string to_json_text(const RainParams& p, int indent = 2);
TrainConfig train_config_from_json_text(const std::string& text);

// Config file layout: {"train": {...}, "model": {...}, "rain": {...}|[{...}]}.
// Every section is optional; unknown sections or keys are hard errors.
struct FileConfig {
  TrainConfig train;             // the model section fills train.model
  std::vector<RainParams> rain;  // empty when the file has no rain section
};
FileConfig parse_config_file_text(const std::string& text);

// Applies the JSON object's keys on top of base; unknown keys are errors.
ModelConfig model_config_from_json_text(const std::string& text, const ModelConfig& base);

}  // namespace mh2f
