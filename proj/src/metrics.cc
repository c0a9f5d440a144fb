#include "tightcap/metrics.h"

#include <algorithm>
#include <cmath>

#include "tightcap/spatial.h"

namespace tightcap {

namespace {

// Distances below `floor` are projection round-off of a point lying on the
// target surface and are reported as zero.
std::vector<double> sample_distances(const TriMesh& from, const AabbTree& to, int samples_per_vertex,
                                     std::uint64_t seed, double floor) {
  const int count = std::max(1000, samples_per_vertex * from.num_vertices());
  const auto s = sample_surface(from.vertices, from.faces, count, seed);
  std::vector<double> d(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double x = std::sqrt(to.closest(s.points.row(i).transpose()).squared_distance);
    d[i] = x <= floor ? 0.0 : x;
  }
  return d;
}

double roundoff_floor(const TriMesh& a, const TriMesh& b) {
  return 1e-12 * std::max(bounding_box(a.vertices).diagonal(), bounding_box(b.vertices).diagonal());
}

void require_nonempty(const TriMesh& m, const char* which) {
  if (m.num_vertices() == 0 || m.num_faces() == 0)
    throw ArgumentError(std::string("hausdorff_metrics: mesh ") + which + " is empty");
}

}  // namespace

MetricReport hausdorff_metrics(const TriMesh& a, const TriMesh& b, double normalizer, int samples_per_vertex,
                               std::uint64_t seed) {
  require_nonempty(a, "a");
  require_nonempty(b, "b");
  if (!(normalizer > 0)) throw ArgumentError("hausdorff_metrics: normalizer must be positive");
  const AabbTree ta(a.vertices, a.faces), tb(b.vertices, b.faces);
  const double floor = roundoff_floor(a, b);
  const auto dab = sample_distances(a, tb, samples_per_vertex, seed, floor);
  const auto dba = sample_distances(b, ta, samples_per_vertex, seed + 1, floor);
  double sum = 0, sq = 0, mx = 0;
  for (const auto* side : {&dab, &dba})
    for (double d : *side) {
      sum += d;
      sq += d * d;
      mx = std::max(mx, d);
    }
  const double n = static_cast<double>(dab.size() + dba.size());
  MetricReport r;
  r.normalizer = normalizer;
  r.mean = sum / n / normalizer;
  r.rms = std::sqrt(sq / n) / normalizer;
  r.max = mx / normalizer;
  r.error_mm = r.mean * normalizer * 1000.0;
  r.samples_per_side = static_cast<int>(std::min(dab.size(), dba.size()));
  return r;
}

double mean_surface_distance(const TriMesh& a, const TriMesh& b, int samples_per_vertex, std::uint64_t seed) {
  require_nonempty(a, "a");
  require_nonempty(b, "b");
  const AabbTree tb(b.vertices, b.faces);
  const auto d = sample_distances(a, tb, samples_per_vertex, seed, roundoff_floor(a, b));
  double s = 0;
  for (double x : d) s += x;
  return s / static_cast<double>(d.size());
}

double symmetric_mean_distance(const TriMesh& a, const TriMesh& b) {
  return hausdorff_metrics(a, b, 1.0).mean;
}

double mask_iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size()) throw ArgumentError("mask_iou: size mismatch");
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]);
    uni += (a[i] || b[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace tightcap
