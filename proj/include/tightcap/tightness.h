#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "tightcap/geomimage.h"
#include "tightcap/spatial.h"
#include "tightcap/template.h"

namespace tightcap {

// Per-template-vertex displacement from the clothed surface toward the body,
// so the body is recovered by adding it to the clothed layer.
struct TightnessField {
  Vertices vectors;
  std::vector<std::uint8_t> fallback;  // 1 where the nearest body vertex stood in

  int size() const { return static_cast<int>(vectors.rows()); }
  int fallback_count() const;
};

enum class TightnessNormalization { weight_sum, count };

struct TightnessConfig {
  double cone_aperture_deg = 30;
  int knn_k = 20;
  double kernel_sigma_deg = 15;
  TightnessNormalization normalization = TightnessNormalization::weight_sum;
  // Cone hits farther than this are ignored; infinity disables the cap.
  double cone_max_range = 0.15;
  // A body vertex this close to the query means contact: the field is zero
  // there rather than the neighbourhood average.
  double contact_distance = 1e-9;
};

void validate(const TightnessConfig& cfg);

// body - clothed, vertex by vertex.
TightnessField naive_tightness(const Vertices& clothed, const Vertices& body);

// exp(-theta^2 / (2 sigma^2)) with theta the angle between the unit normals,
// in degrees.
double angular_gaussian_weight(const Vec3& n1, const Vec3& n2, double sigma_deg);

// Weighted mean of (v_c - v_i) over the body vertices inside the double cone
// along n_i and the k nearest, each weighted by the normal kernel. Sums run in
// ascending body vertex order. Vertices in contact with the body get zero.
TightnessField one_to_many_tightness(const Vertices& clothed, const Vertices& clothed_normals, const TriMesh& body,
                                     const TightnessConfig& cfg);
TightnessField one_to_many_tightness(const Vertices& clothed, const Vertices& clothed_normals, const TriMesh& body,
                                     const KdTree& body_index, const TightnessConfig& cfg);

// (F - B) / 2 with F from the clothed template onto the body mesh and B from
// the body template onto the clothed mesh. Normals are computed when absent.
TightnessField bidirectional_tightness(const TriMesh& clothed_tpl, const TriMesh& body_tpl, const TriMesh& body_mesh,
                                       const TriMesh& clothed_mesh, const TightnessConfig& cfg);

// tightness.xyz plus mask.upper / mask.lower indicators from per-vertex
// Garment labels.
GeometryImage tightness_to_gi(const SkinnedTemplate& tpl, const TightnessField& field,
                              const std::vector<int>& labels, int resolution = 224);

struct PredictionOutput {
  GeometryImage gi;         // tightness.xyz, mask.upper, mask.lower, valid
  std::string provenance;   // "baseline", "external" or "ground_truth"
};

// Checks the channels a prediction must carry and the mask ranges.
void validate(const PredictionOutput& prediction);

// Per-vertex field and garment probabilities (columns upper, lower) read back
// from a prediction.
TightnessField prediction_field(const PredictionOutput& prediction, const SkinnedTemplate& tpl);
Eigen::MatrixXd prediction_masks(const PredictionOutput& prediction, const SkinnedTemplate& tpl);

struct BaselineConfig {
  double max_magnitude = 0.15;
  int smoothing_rows = 2;  // half-width of the box filter over ring rows
};

// Non-learned stand-in for the tightness network. Each texel row of a chart
// is one ring around a body-part tube; the looseness of a ring is its robust
// radius about the componentwise median minus the same quantity on
// `reference` (the unclothed template in the same pose), clamped and
// smoothed across rows. Garment texels from the template prior move inward
// along the normal by that amount.
PredictionOutput baseline_predict(const GeometryImage& gi, const GeometryImage& reference,
                                  const SkinnedTemplate& tpl, const BaselineConfig& cfg = {});

class BridgeError : public Error {
 public:
  BridgeError(const std::string& what, int exit_code, std::string diagnostics)
      : Error(what + (diagnostics.empty() ? "" : "\n" + diagnostics)),
        exit_code(exit_code), diagnostics(std::move(diagnostics)) {}
  int exit_code;  // -1 when the command did not exit normally
  std::string diagnostics;
};

// Writes `input` to work_dir/input.cgi, runs `command` through /bin/sh with
// {input} and {output} replaced by the quoted paths, and reads back
// work_dir/output.cgi. Stdout and stderr go to work_dir/bridge.log.
PredictionOutput external_predict(const GeometryImage& input, const std::string& command, double timeout_seconds,
                                  const std::filesystem::path& work_dir);

}  // namespace tightcap
