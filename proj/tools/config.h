#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tightcap/recovery.h"
#include "tightcap/registration.h"
#include "tightcap/tightness.h"

namespace tightcap::cli {

// Bad command line or configuration; the driver exits with code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct PredictorConfig {
  std::string kind = "baseline";  // "baseline" or "external"
  std::string bridge;             // shell command with {input} and {output}
  double timeout_seconds = 600;
};

struct SegmentationConfig {
  double pairwise_weight = 1;
  int max_sweeps = 50;
};

struct PipelineConfig {
  std::filesystem::path template_path;
  std::filesystem::path output_dir;
  int gi_resolution = 224;
  double metrics_normalizer = 0;  // meters; 0 means the reference bbox diagonal
  RegistrationConfig registration;
  TightnessConfig tightness;
  RecoveryConfig recovery;
  BaselineConfig baseline;
  PredictorConfig predictor;
  SegmentationConfig segmentation;
};

// Config tree: file values first (relative paths resolve against the file's
// directory), then "key.path=value" overrides in order. Values parse as JSON
// and fall back to plain strings. Unknown keys are usage errors.
nlohmann::json load_config_tree(const std::filesystem::path& file, const std::vector<std::string>& overrides);
void apply_override(nlohmann::json& tree, const std::string& assignment);

PipelineConfig parse_config(const nlohmann::json& tree);
nlohmann::json to_json(const PipelineConfig& cfg);

// Module validators plus path checks; failures become UsageError.
void validate(const PipelineConfig& cfg, bool need_template);

}  // namespace tightcap::cli
