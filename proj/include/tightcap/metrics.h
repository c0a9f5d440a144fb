#pragma once

#include <cstdint>
#include <string>

#include "tightcap/mesh.h"

namespace tightcap {

// Metro-style symmetric surface distances. mean/rms/max are fractions of
// `normalizer`; error_mm is the mean expressed in millimeters.
struct MetricReport {
  double mean = 0;
  double rms = 0;
  double max = 0;
  double error_mm = 0;
  double normalizer = 1;
  int samples_per_side = 0;  // surface samples drawn on each mesh
};

// Dense area-uniform samples on both surfaces (at least 10 per vertex),
// distances to the other surface's closest point.
MetricReport hausdorff_metrics(const TriMesh& a, const TriMesh& b, double normalizer,
                               int samples_per_vertex = 10, std::uint64_t seed = 0x5eed);

// One-sided mean distance from samples on `a` to the surface of `b`, in
// mesh units.
double mean_surface_distance(const TriMesh& a, const TriMesh& b, int samples_per_vertex = 10,
                             std::uint64_t seed = 0x5eed);

// Symmetric mean distance in mesh units (the un-normalized `mean`).
double symmetric_mean_distance(const TriMesh& a, const TriMesh& b);

// Intersection over union of two binary masks of equal size.
double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

}  // namespace tightcap
