#include "tightcap/spatial.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "tightcap/geometry.h"

namespace tightcap {

namespace {

double box_squared_distance(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  double d = 0;
  for (int k = 0; k < 3; ++k) {
    const double e = std::max({lo(k) - p(k), 0.0, p(k) - hi(k)});
    d += e * e;
  }
  return d;
}

struct Candidate {
  double d2;
  int id;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && id < o.id); }
};

}  // namespace

KdTree::KdTree(Vertices points, int leaf_size) : points_(std::move(points)), leaf_size_(leaf_size) {
  order_.resize(static_cast<size_t>(points_.rows()));
  std::iota(order_.begin(), order_.end(), 0);
  if (!order_.empty()) {
    nodes_.reserve(2 * order_.size() / static_cast<size_t>(leaf_size_) + 2);
    build(0, static_cast<int>(order_.size()), 0);
  }
}

int KdTree::build(int begin, int end, int depth) {
  Node node;
  node.begin = begin;
  node.end = end;
  node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  for (int i = begin; i < end; ++i) {
    node.lo = node.lo.cwiseMin(points_.row(order_[i]).transpose());
    node.hi = node.hi.cwiseMax(points_.row(order_[i]).transpose());
  }
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= leaf_size_) return id;
  int axis = 0;
  (node.hi - node.lo).maxCoeff(&axis);
  (void)depth;
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    return points_(a, axis) < points_(b, axis) || (points_(a, axis) == points_(b, axis) && a < b);
  });
  const int l = build(begin, mid, depth + 1);
  const int r = build(mid, end, depth + 1);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

std::vector<int> KdTree::knn(const Vec3& p, int k) const {
  std::vector<int> out;
  if (k < 1 || nodes_.empty()) return out;
  k = std::min(k, size());
  std::priority_queue<Candidate> heap;  // max-heap on (d2, id)
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[stack.back()];
    stack.pop_back();
    const double bd = box_squared_distance(p, n.lo, n.hi);
    if (static_cast<int>(heap.size()) == k && bd > heap.top().d2) continue;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int id = order_[i];
        const Candidate c{(points_.row(id).transpose() - p).squaredNorm(), id};
        if (static_cast<int>(heap.size()) < k) heap.push(c);
        else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      continue;
    }
    const double dl = box_squared_distance(p, nodes_[n.left].lo, nodes_[n.left].hi);
    const double dr = box_squared_distance(p, nodes_[n.right].lo, nodes_[n.right].hi);
    // Push the farther child first so the nearer one is expanded next.
    if (dl <= dr) {
      stack.push_back(n.right);
      stack.push_back(n.left);
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  out.resize(heap.size());
  for (int i = static_cast<int>(heap.size()) - 1; i >= 0; --i) {
    out[i] = heap.top().id;
    heap.pop();
  }
  return out;
}

int KdTree::nearest(const Vec3& p) const {
  const auto r = knn(p, 1);
  return r.empty() ? -1 : r.front();
}

std::vector<int> KdTree::radius(const Vec3& p, double r) const {
  std::vector<int> out;
  if (nodes_.empty()) return out;
  const double r2 = r * r;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[stack.back()];
    stack.pop_back();
    if (box_squared_distance(p, n.lo, n.hi) > r2) continue;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i)
        if ((points_.row(order_[i]).transpose() - p).squaredNorm() <= r2) out.push_back(order_[i]);
      continue;
    }
    stack.push_back(n.left);
    stack.push_back(n.right);
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool in_double_cone(const Vec3& v, const Vec3& origin, const Vec3& axis, double cos_half, double max_range) {
  const Vec3 d = v - origin;
  const double len = d.norm();
  if (len == 0.0 || len > max_range) return false;
  if (cos_half <= 0.0) return true;  // lobes of half-angle >= 90 cover every direction
  return std::abs(d.dot(axis)) >= len * cos_half;
}

std::vector<int> KdTree::cone(const Vec3& origin, const Vec3& axis, double aperture_deg, double max_range) const {
  std::vector<int> out;
  if (nodes_.empty()) return out;
  const double half = 0.5 * aperture_deg * M_PI / 180.0;
  const double cos_half = std::cos(half);
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[stack.back()];
    stack.pop_back();
    const Vec3 c = 0.5 * (n.lo + n.hi);
    const double rho = 0.5 * (n.hi - n.lo).norm();
    const Vec3 d = c - origin;
    const double len = d.norm();
    if (len - rho > max_range) continue;
    if (len > rho && half < 0.5 * M_PI) {
      const double alpha = std::asin(std::min(1.0, rho / len));
      const double cosb = std::min(1.0, std::abs(d.dot(axis)) / len);
      const double beta = std::acos(cosb);
      if (beta - alpha > half + 1e-12) continue;
    }
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i)
        if (in_double_cone(points_.row(order_[i]).transpose(), origin, axis, cos_half, max_range))
          out.push_back(order_[i]);
      continue;
    }
    stack.push_back(n.left);
    stack.push_back(n.right);
  }
  std::sort(out.begin(), out.end());
  return out;
}

AabbTree::AabbTree(const Vertices& v, const Faces& f) : vertices_(v), faces_(f) {
  order_.resize(static_cast<size_t>(f.rows()));
  std::iota(order_.begin(), order_.end(), 0);
  face_boxes_.resize(order_.size());
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    Eigen::AlignedBox3d b;
    for (int k = 0; k < 3; ++k) b.extend(Vec3(v.row(f(i, k))));
    face_boxes_[i] = b;
  }
  if (!order_.empty()) build(0, static_cast<int>(order_.size()));
}

int AabbTree::build(int begin, int end) {
  Node node;
  node.begin = begin;
  node.end = end;
  for (int i = begin; i < end; ++i) node.box.extend(face_boxes_[order_[i]]);
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= 4) return id;
  int axis = 0;
  node.box.sizes().maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    const double ca = face_boxes_[a].center()(axis), cb = face_boxes_[b].center()(axis);
    return ca < cb || (ca == cb && a < b);
  });
  const int l = build(begin, mid);
  const int r = build(mid, end);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

void AabbTree::query(int node, const Vec3& p, SurfaceHit& best) const {
  const Node& n = nodes_[node];
  if (n.box.squaredExteriorDistance(p) > best.squared_distance) return;
  if (n.left < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const int f = order_[i];
      const auto cp = closest_point_on_triangle<double>(p, vertices_.row(faces_(f, 0)), vertices_.row(faces_(f, 1)),
                                                        vertices_.row(faces_(f, 2)));
      if (cp.squared_distance < best.squared_distance ||
          (cp.squared_distance == best.squared_distance && f < best.face)) {
        best.face = f;
        best.point = cp.point;
        best.bary = cp.bary;
        best.squared_distance = cp.squared_distance;
      }
    }
    return;
  }
  const double dl = nodes_[n.left].box.squaredExteriorDistance(p);
  const double dr = nodes_[n.right].box.squaredExteriorDistance(p);
  if (dl <= dr) {
    query(n.left, p, best);
    query(n.right, p, best);
  } else {
    query(n.right, p, best);
    query(n.left, p, best);
  }
}

SurfaceHit AabbTree::closest(const Vec3& p) const {
  SurfaceHit best;
  if (!nodes_.empty()) query(0, p, best);
  return best;
}

SpatialIndex::SpatialIndex(const TriMesh& mesh, bool with_faces) : kd_(mesh.vertices) {
  if (with_faces && mesh.num_faces() > 0) aabb_ = AabbTree(mesh.vertices, mesh.faces);
}

std::vector<int> knn_query(const SpatialIndex& index, const Vec3& p, int k) {
  if (k < 1) throw ArgumentError("knn_query: k must be >= 1");
  return index.vertices().knn(p, k);
}

std::vector<int> cone_query(const SpatialIndex& index, const Vec3& origin, const Vec3& axis, double aperture_deg,
                            double max_range) {
  const double len = axis.norm();
  if (len == 0.0) throw ArgumentError("cone_query: zero axis");
  if (!(aperture_deg > 0.0 && aperture_deg <= 360.0)) throw ArgumentError("cone_query: aperture must be in (0, 360]");
  return index.vertices().cone(origin, axis / len, aperture_deg, max_range);
}

}  // namespace tightcap
