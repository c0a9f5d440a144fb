#include "tightcap/deform.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>

#include "tightcap/spatial.h"

namespace tightcap {

void EDGraph::reset() {
  node_rot.assign(static_cast<size_t>(num_nodes()), Mat3::Identity());
  node_trans = Vertices::Zero(num_nodes(), 3);
}

namespace {

std::vector<int> farthest_point_sample(const Vertices& v, int count) {
  const int n = static_cast<int>(v.rows());
  std::vector<int> picked;
  picked.reserve(static_cast<size_t>(count));
  std::vector<double> dist(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  int next = 0;
  for (int s = 0; s < count; ++s) {
    picked.push_back(next);
    const Vec3 p = v.row(next).transpose();
    int best = -1;
    double best_d = -1;
    for (int i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], (v.row(i).transpose() - p).squaredNorm());
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    next = best;
  }
  return picked;
}

// Bounded Dijkstra over mesh edges from every node. Returns, per vertex, the
// reached (node, distance) pairs sorted by distance then node id.
std::vector<std::vector<std::pair<double, int>>> geodesic_reach(const Vertices& v,
                                                               const std::vector<std::vector<int>>& adj,
                                                               const std::vector<int>& node_vertex,
                                                               double radius) {
  const int nv = static_cast<int>(v.rows());
  std::vector<std::vector<std::pair<double, int>>> reach(static_cast<size_t>(nv));
  std::vector<double> dist(static_cast<size_t>(nv), std::numeric_limits<double>::infinity());
  std::vector<int> touched;
  for (int k = 0; k < static_cast<int>(node_vertex.size()); ++k) {
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[node_vertex[k]] = 0;
    touched.push_back(node_vertex[k]);
    heap.emplace(0.0, node_vertex[k]);
    while (!heap.empty()) {
      const auto [d, i] = heap.top();
      heap.pop();
      if (d > dist[i]) continue;
      reach[i].emplace_back(d, k);
      for (int j : adj[i]) {
        const double nd = d + (v.row(i) - v.row(j)).norm();
        if (nd <= radius && nd < dist[j]) {
          if (std::isinf(dist[j])) touched.push_back(j);
          dist[j] = nd;
          heap.emplace(nd, j);
        }
      }
    }
    for (int i : touched) dist[i] = std::numeric_limits<double>::infinity();
    touched.clear();
  }
  for (auto& r : reach) std::sort(r.begin(), r.end());
  return reach;
}

Mat3 rot_of(const Eigen::VectorXd& x, int k) { return rotation_from_axis_angle(Vec3(x.segment<3>(6 * k))); }
Vec3 trans_of(const Eigen::VectorXd& x, int k) { return x.segment<3>(6 * k + 3); }

}  // namespace

EDGraph sample_ed_graph(const TriMesh& mesh, int node_count, const EDGraphOptions& opts) {
  const int nv = mesh.num_vertices();
  if (node_count < 1 || node_count > nv)
    throw ArgumentError("sample_ed_graph: node count " + std::to_string(node_count) + " outside [1, " +
                        std::to_string(nv) + "]");
  if (opts.bind_k < 2) throw ArgumentError("sample_ed_graph: bind_k must be at least 2");
  EDGraph g;
  g.vertex_rest = mesh.vertices;
  g.node_vertex = node_count == nv ? [&] {
    std::vector<int> all(static_cast<size_t>(nv));
    for (int i = 0; i < nv; ++i) all[i] = i;
    return all;
  }()
                                   : farthest_point_sample(mesh.vertices, node_count);
  g.node_rest.resize(node_count, 3);
  for (int k = 0; k < node_count; ++k) g.node_rest.row(k) = mesh.vertices.row(g.node_vertex[k]);
  g.reset();

  // Geodesic (edge-path) distances keep bindings and neighbors from crossing
  // gaps between nearby body parts. The search radius grows until every
  // vertex sees bind_k + 1 nodes; isolated pieces fall back to Euclidean.
  const auto adj = vertex_adjacency(nv, mesh.faces);
  const double area = mesh.num_faces() > 0 ? surface_area(mesh.vertices, mesh.faces) : 0.0;
  const BoundingBox box = bounding_box(mesh.vertices);
  double radius = area > 0 ? 3.0 * std::sqrt(area / node_count) : box.diagonal() + 1;
  const int k = std::min(opts.bind_k, node_count);
  const int need = std::min(k + 1, node_count);
  std::vector<std::vector<std::pair<double, int>>> reach;
  for (int attempt = 0;; ++attempt) {
    reach = geodesic_reach(mesh.vertices, adj, g.node_vertex, radius);
    bool ok = true;
    for (const auto& r : reach) ok &= static_cast<int>(r.size()) >= need;
    if (ok || attempt >= 4 || radius > 2 * box.diagonal()) break;
    radius *= 2;
  }
  const KdTree tree(g.node_rest);
  for (int i = 0; i < nv; ++i)
    if (static_cast<int>(reach[i].size()) < need) {
      reach[i].clear();
      for (int n : tree.knn(mesh.vertex(i), need))
        reach[i].emplace_back((g.node_rest.row(n) - mesh.vertices.row(i)).norm(), n);
    }

  g.binding_nodes.assign(static_cast<size_t>(nv), {});
  g.binding_weights.assign(static_cast<size_t>(nv), {});
  for (int i = 0; i < nv; ++i) {
    const auto& r = reach[i];
    const double dmax = static_cast<int>(r.size()) > k ? r[k].first : r.back().first * 1.5 + 1e-12;
    double sum = 0;
    for (int j = 0; j < k && j < static_cast<int>(r.size()); ++j) {
      const double x = dmax > 0 ? std::max(0.0, 1.0 - r[j].first / dmax) : 1.0;
      if (x <= 0) continue;
      g.binding_nodes[i].push_back(r[j].second);
      g.binding_weights[i].push_back(x * x);
      sum += x * x;
    }
    if (sum <= 0) {  // every candidate at d_max: equal weights
      g.binding_nodes[i].clear();
      for (int j = 0; j < k && j < static_cast<int>(r.size()); ++j) g.binding_nodes[i].push_back(r[j].second);
      g.binding_weights[i].assign(g.binding_nodes[i].size(), 1.0);
      sum = static_cast<double>(g.binding_nodes[i].size());
    }
    for (double& w : g.binding_weights[i]) w /= sum;
  }

  // Node neighbors: the neighbor_k geodesically closest nodes, symmetrized.
  std::vector<std::set<int>> nb(static_cast<size_t>(node_count));
  std::vector<std::vector<std::pair<double, int>>> node_reach(static_cast<size_t>(node_count));
  {
    std::vector<int> vertex_node(static_cast<size_t>(nv), -1);
    for (int n = 0; n < node_count; ++n) vertex_node[g.node_vertex[n]] = n;
    // reach[i] lists nodes that reached vertex i; invert for node-to-node.
    for (int m = 0; m < node_count; ++m)
      for (const auto& [d, n] : reach[g.node_vertex[m]])
        if (n != m) node_reach[n].emplace_back(d, m);
  }
  for (int n = 0; n < node_count; ++n) {
    auto& r = node_reach[n];
    std::sort(r.begin(), r.end());
    if (static_cast<int>(r.size()) < opts.neighbor_k) {
      r.clear();
      for (int m : tree.knn(g.node_rest.row(n).transpose(), opts.neighbor_k + 1))
        if (m != n) r.emplace_back(0.0, m);
    }
    for (int j = 0; j < opts.neighbor_k && j < static_cast<int>(r.size()); ++j) {
      nb[n].insert(r[j].second);
      nb[r[j].second].insert(n);
    }
  }
  g.node_neighbors.resize(static_cast<size_t>(node_count));
  g.neighbor_weights.resize(static_cast<size_t>(node_count));
  for (int n = 0; n < node_count; ++n) {
    g.node_neighbors[n].assign(nb[n].begin(), nb[n].end());
    g.neighbor_weights[n].assign(nb[n].size(), opts.neighbor_weight);
  }
  return g;
}

void rebase_ed_graph(EDGraph& graph, const Vertices& vertices) {
  if (vertices.rows() != graph.vertex_rest.rows())
    throw ArgumentError("rebase_ed_graph: vertex count differs from the graph's mesh");
  graph.vertex_rest = vertices;
  for (int k = 0; k < graph.num_nodes(); ++k) graph.node_rest.row(k) = vertices.row(graph.node_vertex[k]);
  graph.reset();
}

void validate(const EDGraph& g) {
  const int nn = g.num_nodes();
  if (static_cast<int>(g.node_rot.size()) != nn || g.node_trans.rows() != nn)
    throw ValidationError("ed graph: state arrays differ from the node count");
  for (int k = 0; k < nn; ++k) {
    const Mat3& r = g.node_rot[k];
    if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 || std::abs(r.determinant() - 1) > 1e-6)
      throw ValidationError("ed graph: node " + std::to_string(k) + " rotation is not in SO(3)");
    for (int n : g.node_neighbors[k]) {
      const auto& back = g.node_neighbors[n];
      if (!std::binary_search(back.begin(), back.end(), k))
        throw ValidationError("ed graph: neighbor relation is not symmetric at node " + std::to_string(k));
    }
  }
  for (int i = 0; i < g.num_vertices(); ++i) {
    double sum = 0;
    for (double w : g.binding_weights[i]) {
      if (w < 0) throw ValidationError("ed graph: negative binding weight at vertex " + std::to_string(i));
      sum += w;
    }
    if (std::abs(sum - 1) > 1e-6)
      throw ValidationError("ed graph: binding weights of vertex " + std::to_string(i) + " do not sum to 1");
  }
}

Vec3 warp_point(const EDGraph& g, int i) {
  if (i < 0 || i >= g.num_vertices() || g.binding_nodes[i].empty())
    throw ArgumentError("warp_point: vertex " + std::to_string(i) + " is not bound");
  // v + sum_k w_k ((R_k - I)(v - g_k) + t_k): the blend rewritten with the
  // unit weight sum, so the identity state reproduces v exactly.
  const Vec3 v = g.vertex_rest.row(i).transpose();
  Vec3 d = Vec3::Zero();
  for (size_t j = 0; j < g.binding_nodes[i].size(); ++j) {
    const int k = g.binding_nodes[i][j];
    const Vec3 gk = g.node_rest.row(k).transpose();
    d += g.binding_weights[i][j] *
         (Mat3(g.node_rot[k] - Mat3::Identity()) * (v - gk) + g.node_trans.row(k).transpose());
  }
  return v + d;
}

Vertices warp_vertices(const EDGraph& g) {
  Vertices out(g.num_vertices(), 3);
  for (int i = 0; i < g.num_vertices(); ++i) out.row(i) = warp_point(g, i).transpose();
  return out;
}

Eigen::VectorXd arap_residuals(const EDGraph& g) {
  size_t pairs = 0;
  for (const auto& nb : g.node_neighbors) pairs += nb.size();
  Eigen::VectorXd r(static_cast<Eigen::Index>(3 * pairs));
  Eigen::Index row = 0;
  for (int k = 0; k < g.num_nodes(); ++k) {
    const Vec3 gk = g.node_rest.row(k).transpose();
    for (size_t j = 0; j < g.node_neighbors[k].size(); ++j) {
      const int n = g.node_neighbors[k][j];
      const Vec3 gn = g.node_rest.row(n).transpose();
      const Vec3 d = (gk + g.node_trans.row(k).transpose()) - (gn + g.node_trans.row(n).transpose()) -
                     g.node_rot[k] * (gk - gn);
      r.segment<3>(row) = std::sqrt(g.neighbor_weights[k][j]) * d;
      row += 3;
    }
  }
  return r;
}

Eigen::VectorXd ed_state(const EDGraph& g) {
  Eigen::VectorXd x(6 * g.num_nodes());
  for (int k = 0; k < g.num_nodes(); ++k) {
    x.segment<3>(6 * k) = axis_angle_from_rotation(g.node_rot[k]);
    x.segment<3>(6 * k + 3) = g.node_trans.row(k).transpose();
  }
  return x;
}

void set_ed_state(EDGraph& g, const Eigen::VectorXd& x) {
  if (x.size() != 6 * g.num_nodes()) throw ArgumentError("set_ed_state: state size mismatch");
  for (int k = 0; k < g.num_nodes(); ++k) {
    g.node_rot[k] = rot_of(x, k);
    g.node_trans.row(k) = trans_of(x, k).transpose();
  }
}

void ed_retract(Eigen::VectorXd& x, const Eigen::VectorXd& delta) {
  for (Eigen::Index k = 0; 6 * k < x.size(); ++k) {
    const Mat3 r = rotation_from_axis_angle(Vec3(delta.segment<3>(6 * k))) *
                   rotation_from_axis_angle(Vec3(x.segment<3>(6 * k)));
    x.segment<3>(6 * k) = axis_angle_from_rotation(r);
    x.segment<3>(6 * k + 3) += delta.segment<3>(6 * k + 3);
  }
}

WarpLinearization linearize_warp(const EDGraph& g, int i, const Eigen::VectorXd& x, bool with_jacobian) {
  const auto& nodes = g.binding_nodes[i];
  const auto& w = g.binding_weights[i];
  const int m = static_cast<int>(nodes.size());
  WarpLinearization out;
  Vec3 d = Vec3::Zero();
  if (with_jacobian) out.jacobian.setZero(3, 6 * m);
  out.params.resize(static_cast<size_t>(6 * m));
  const Vec3 v = g.vertex_rest.row(i).transpose();
  for (int j = 0; j < m; ++j) {
    const int k = nodes[j];
    const Vec3 gk = g.node_rest.row(k).transpose();
    const Mat3 r = rot_of(x, k);
    const Vec3 arm = r * (v - gk);
    d += w[j] * (Mat3(r - Mat3::Identity()) * (v - gk) + trans_of(x, k));
    for (int c = 0; c < 6; ++c) out.params[6 * j + c] = 6 * k + c;
    if (with_jacobian) {
      out.jacobian.block<3, 3>(0, 6 * j) = -w[j] * skew(arm);
      out.jacobian.block<3, 3>(0, 6 * j + 3) = w[j] * Mat3::Identity();
    }
  }
  out.position = v + d;
  return out;
}

ResidualBlock ed_point_block(const EDGraph& graph, int vertex_id, const Vec3& target, double weight) {
  ResidualBlock b;
  b.kind = "point";
  b.dim = 3;
  b.weight = weight;
  b.params = linearize_warp(graph, vertex_id, ed_state(graph), false).params;
  b.evaluate = [&graph, vertex_id, target](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    auto lin = linearize_warp(graph, vertex_id, x, jac != nullptr);
    r = lin.position - target;
    if (jac) *jac = std::move(lin.jacobian);
    return true;
  };
  return b;
}

ResidualBlock ed_plane_block(const EDGraph& graph, int vertex_id, const Vec3& target, const Vec3& normal,
                             double weight) {
  ResidualBlock b;
  b.kind = "plane";
  b.dim = 1;
  b.weight = weight;
  b.params = linearize_warp(graph, vertex_id, ed_state(graph), false).params;
  b.evaluate = [&graph, vertex_id, target, normal](const Eigen::VectorXd& x, Eigen::VectorXd& r,
                                                   Eigen::MatrixXd* jac) {
    auto lin = linearize_warp(graph, vertex_id, x, jac != nullptr);
    r.resize(1);
    r(0) = normal.dot(lin.position - target);
    if (jac) *jac = normal.transpose() * lin.jacobian;
    return true;
  };
  return b;
}

ResidualBlock ed_arap_block(const EDGraph& graph, int k, int n, double weight) {
  const auto& nb = graph.node_neighbors[k];
  const auto it = std::lower_bound(nb.begin(), nb.end(), n);
  if (it == nb.end() || *it != n) throw ArgumentError("ed_arap_block: nodes are not neighbors");
  const double s = std::sqrt(graph.neighbor_weights[k][static_cast<size_t>(it - nb.begin())]);
  const Vec3 d = graph.node_rest.row(k).transpose() - graph.node_rest.row(n).transpose();
  ResidualBlock b;
  b.kind = "arap";
  b.dim = 3;
  b.weight = weight;
  b.params = {6 * k, 6 * k + 1, 6 * k + 2, 6 * k + 3, 6 * k + 4, 6 * k + 5, 6 * n + 3, 6 * n + 4, 6 * n + 5};
  b.evaluate = [k, n, s, d](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    const Vec3 rd = rot_of(x, k) * d;
    r = s * (d + trans_of(x, k) - trans_of(x, n) - rd);
    if (jac) {
      jac->resize(3, 9);
      jac->block<3, 3>(0, 0) = s * skew(rd);
      jac->block<3, 3>(0, 3) = s * Mat3::Identity();
      jac->block<3, 3>(0, 6) = -s * Mat3::Identity();
    }
    return true;
  };
  return b;
}

std::vector<ResidualBlock> ed_arap_blocks(const EDGraph& graph, double weight) {
  std::vector<ResidualBlock> out;
  for (int k = 0; k < graph.num_nodes(); ++k)
    for (int n : graph.node_neighbors[k]) out.push_back(ed_arap_block(graph, k, n, weight));
  return out;
}

}  // namespace tightcap
