#pragma once

#include <vector>

#include "tightcap/geometry.h"
#include "tightcap/mesh.h"
#include "tightcap/solver.h"

namespace tightcap {

// Embedded deformation graph over a rest mesh. Node k carries a rigid map
// G_k(v) = R_k (v - g_k) + g_k + t_k; vertices blend the maps of their bound
// nodes.
struct EDGraph {
  Vertices node_rest;
  std::vector<Mat3> node_rot;
  Vertices node_trans;
  std::vector<std::vector<int>> node_neighbors;        // symmetric
  std::vector<std::vector<double>> neighbor_weights;   // parallel to node_neighbors
  Vertices vertex_rest;
  std::vector<std::vector<int>> binding_nodes;          // per vertex
  std::vector<std::vector<double>> binding_weights;     // per vertex, sums to 1
  std::vector<int> node_vertex;                         // vertex each node was sampled at

  int num_nodes() const { return static_cast<int>(node_rest.rows()); }
  int num_vertices() const { return static_cast<int>(vertex_rest.rows()); }
  void reset();  // identity state
};

struct EDGraphOptions {
  int bind_k = 4;
  int neighbor_k = 6;
  double neighbor_weight = 1.0;
};

// Farthest-point node subsample (seeded at vertex 0). Each vertex binds its
// bind_k nearest nodes with weights (1 - d/d_max)^2 normalized, d_max the
// distance to the (bind_k+1)-th node; neighbors are the neighbor_k nearest
// nodes, symmetrized. Distances are shortest edge paths on the mesh.
EDGraph sample_ed_graph(const TriMesh& mesh, int node_count, const EDGraphOptions& opts = {});

// Moves the graph onto another embedding of the same mesh (e.g. a posed copy)
// while keeping nodes, neighbors and bindings; the state is reset.
void rebase_ed_graph(EDGraph& graph, const Vertices& vertices);

void validate(const EDGraph& graph);

Vec3 warp_point(const EDGraph& graph, int vertex_id);
Vertices warp_vertices(const EDGraph& graph);

// One 3-vector per directed neighbor pair (k, n), in node order then
// neighbor order: sqrt(w) * ((g_k + t_k) - (g_n + t_n) - R_k (g_k - g_n)).
Eigen::VectorXd arap_residuals(const EDGraph& graph);

// Solver state: 6 entries per node, [rotation vector, translation]. The
// retraction composes a left increment, R <- exp(d) R.
Eigen::VectorXd ed_state(const EDGraph& graph);
void set_ed_state(EDGraph& graph, const Eigen::VectorXd& x);
void ed_retract(Eigen::VectorXd& x, const Eigen::VectorXd& delta);

// Residual block for the warped position of one vertex minus `target`,
// optionally projected: r = P (v_i(x) - target) with P = I (dim 3) or a row
// vector (dim 1).
ResidualBlock ed_point_block(const EDGraph& graph, int vertex_id, const Vec3& target, double weight);
ResidualBlock ed_plane_block(const EDGraph& graph, int vertex_id, const Vec3& target, const Vec3& normal,
                             double weight);
// ARAP residual for directed pair (k, n).
ResidualBlock ed_arap_block(const EDGraph& graph, int k, int n, double weight);
std::vector<ResidualBlock> ed_arap_blocks(const EDGraph& graph, double weight);

// Warped vertex and its Jacobian (3 x 6m over the bound nodes' state entries)
// at state x.
struct WarpLinearization {
  Vec3 position;
  Eigen::MatrixXd jacobian;
  std::vector<int> params;
};
WarpLinearization linearize_warp(const EDGraph& graph, int vertex_id, const Eigen::VectorXd& x,
                                 bool with_jacobian = true);

}  // namespace tightcap
