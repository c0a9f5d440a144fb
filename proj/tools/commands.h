#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "config.h"

namespace tightcap::cli {

namespace fs = std::filesystem;

// Every stage reads its inputs from files, writes its outputs into `out` and
// returns its report, which is also written there as report.json. Reports
// carry the timings; all other outputs are deterministic.

struct SynthArgs {
  double offset = 0.03;
  std::string pose = "T";
  double noise = 0;
  std::uint64_t seed = 0;
  int smoothing = 8;
};

// template/, scan.ply, body.ply (with a "garment" property), joints.json and
// manifest.json listing them. Bad specs are usage errors.
nlohmann::json cmd_synth(const SynthArgs& args, const fs::path& out);

// export_alignment layout plus render.ppm of M_V.
nlohmann::json cmd_align(const PipelineConfig& cfg, const fs::path& scan, const fs::path& joints,
                         const fs::path& out);

// clothed.cgi from M_V (colors from the nearest scan vertex when `scan` is
// given) and reference.cgi from M_init.
nlohmann::json cmd_gi(const PipelineConfig& cfg, const fs::path& alignment, const std::optional<fs::path>& scan,
                      const fs::path& out);

// Bidirectional tightness between the clothed alignment and the alignment of
// the same template to the ground-truth body: field.json plus tightness.cgi
// with masks from the body's "garment" property.
nlohmann::json cmd_tightness_gt(const PipelineConfig& cfg, const fs::path& alignment,
                                const fs::path& body_alignment, const fs::path& scan, const fs::path& body,
                                const fs::path& out);

// prediction.cgi from the configured predictor. The baseline needs
// reference.cgi; the external bridge works in out/bridge.
nlohmann::json cmd_predict(const PipelineConfig& cfg, const fs::path& gi, const std::optional<fs::path>& reference,
                           const fs::path& out);

// body.ply (optimized) and body_direct.ply (M_V + T). `field` is field.json
// or a prediction .cgi.
nlohmann::json cmd_recover(const PipelineConfig& cfg, const fs::path& alignment, const fs::path& field,
                           const fs::path& out);

// labels.ply (M_V with a "garment" property), upper.ply and lower.ply.
nlohmann::json cmd_segment(const PipelineConfig& cfg, const fs::path& alignment, const fs::path& prediction,
                           const fs::path& out);

// Metro metrics of `mesh` against `reference` plus the unnormalized
// symmetric mean distance.
nlohmann::json cmd_metrics(const PipelineConfig& cfg, const fs::path& mesh, const fs::path& reference,
                           const fs::path& out);

struct PipelineInputs {
  fs::path scan, joints;
  std::optional<fs::path> body;  // enables the ground-truth path and metrics
  std::optional<double> offset;  // clothing offset, for error fractions
};

// Reads a synth manifest: template, scan, joints, body and offset.
PipelineInputs inputs_from_fixture(const fs::path& fixture_dir, PipelineConfig& cfg);

// align, gi, predict, recover, segment, and with a body also metrics,
// align_body, tightness_gt, recover_gt and metrics_gt, each in its own
// subdirectory of `out`.
nlohmann::json cmd_pipeline(const PipelineConfig& cfg, const PipelineInputs& inputs, const fs::path& out);

// Writes report.json; stamps the UTC start time.
void write_report(const fs::path& dir, nlohmann::json report);

}  // namespace tightcap::cli
