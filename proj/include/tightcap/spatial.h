#pragma once

#include <limits>
#include <memory>
#include <vector>

#include "tightcap/mesh.h"

namespace tightcap {

// Static kd-tree over a point set. Results equal exhaustive search: knn is
// ordered by (distance, id).
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(Vertices points, int leaf_size = 8);

  int size() const { return static_cast<int>(points_.rows()); }
  const Vertices& points() const { return points_; }

  std::vector<int> knn(const Vec3& p, int k) const;
  int nearest(const Vec3& p) const;
  std::vector<int> radius(const Vec3& p, double r) const;
  // Double cone around +/- axis, full aperture in degrees, optional range cap.
  // Points coincident with the origin are excluded. Sorted by id.
  std::vector<int> cone(const Vec3& origin, const Vec3& axis, double aperture_deg,
                        double max_range = std::numeric_limits<double>::infinity()) const;

 private:
  struct Node {
    Vec3 lo, hi;
    int begin = 0, end = 0;    // range into order_
    int left = -1, right = -1;
  };
  int build(int begin, int end, int depth);

  Vertices points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int leaf_size_ = 8;
};

struct SurfaceHit {
  int face = -1;
  Vec3 point = Vec3::Zero();
  Vec3 bary = Vec3::Zero();
  double squared_distance = std::numeric_limits<double>::infinity();
};

// Bounding-volume hierarchy over triangles for exact closest-point queries.
class AabbTree {
 public:
  AabbTree() = default;
  AabbTree(const Vertices& v, const Faces& f);

  bool empty() const { return faces_.rows() == 0; }
  // Ties resolved to the lowest face id.
  SurfaceHit closest(const Vec3& p) const;

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1, right = -1;
    int begin = 0, end = 0;
  };
  int build(int begin, int end);
  void query(int node, const Vec3& p, SurfaceHit& best) const;

  Vertices vertices_;
  Faces faces_;
  std::vector<int> order_;
  std::vector<Eigen::AlignedBox3d> face_boxes_;
  std::vector<Node> nodes_;
};

// Spatial acceleration over a mesh's vertices and (optionally) its faces.
class SpatialIndex {
 public:
  SpatialIndex() = default;
  explicit SpatialIndex(const TriMesh& mesh, bool with_faces = true);

  const KdTree& vertices() const { return kd_; }
  const AabbTree& faces() const { return aabb_; }
  bool has_faces() const { return !aabb_.empty(); }

 private:
  KdTree kd_;
  AabbTree aabb_;
};

std::vector<int> knn_query(const SpatialIndex& index, const Vec3& p, int k);
std::vector<int> cone_query(const SpatialIndex& index, const Vec3& origin, const Vec3& axis,
                            double aperture_deg,
                            double max_range = std::numeric_limits<double>::infinity());

// True when (v - origin) lies inside the double cone. Shared predicate so the
// indexed and exhaustive paths agree on the cone boundary.
bool in_double_cone(const Vec3& v, const Vec3& origin, const Vec3& axis, double cos_half,
                    double max_range);

}  // namespace tightcap
