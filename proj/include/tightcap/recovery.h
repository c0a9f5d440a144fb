#pragma once

#include <Eigen/Sparse>

#include <vector>

#include "tightcap/solver.h"
#include "tightcap/template.h"
#include "tightcap/tightness.h"

namespace tightcap {

struct RecoveryConfig {
  double lambda_fit = 1;
  double lambda_smooth = 0.1;
  double lambda_reg = 0.05;
  int smoothing_rings = 2;
  double smoothing_sigma = 0;  // meters; 0 means the mean edge length
  int max_outer_iters = 5;
  int cg_max_iters = 2000;
  double cg_tolerance = 1e-14;
};

void validate(const RecoveryConfig& cfg);

// M_V + T, vertex by vertex.
Vertices recover_direct(const Vertices& m_v, const TightnessField& field);

// Row-stochastic Gaussian smoothing over each vertex and its `rings`-ring
// neighbourhood, weights exp(-d^2 / (2 sigma^2)) on the distances in `v`.
using SmoothingMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
SmoothingMatrix gaussian_smoothing(const Vertices& v, const Faces& f, int rings, double sigma);

// Residual blocks over vertex unknowns x (3 entries per vertex).
ResidualBlock recovery_fit_block(int vertex_id, const Vec3& target, double weight);
ResidualBlock recovery_reg_block(int vertex_id, const Vec3& warp, double weight);
// x_i - sum_j K_ij x_j over row i of the smoothing matrix.
ResidualBlock recovery_smooth_block(int vertex_id, const SmoothingMatrix& kernel, double weight);

struct RecoveryResult {
  Vertices vertices;
  std::vector<double> energies;  // solver cost history, starting at M_V + T
  double seconds = 0;
};

// Least squares on lambda_fit |M - (M_V + T)|^2 + lambda_smooth |M - K M|^2 +
// lambda_reg |M - M_warp|^2, started from M_V + T. K is built on M_V.
RecoveryResult recover_shape(const Vertices& m_v, const Faces& faces, const TightnessField& field,
                             const Vertices& m_warp, const RecoveryConfig& cfg);

// Body energy of a candidate (same terms as recover_shape).
double body_energy(const Vertices& m, const Vertices& m_v, const Faces& faces, const TightnessField& field,
                   const Vertices& m_warp, const RecoveryConfig& cfg);

// Per-vertex unary costs for labels body, upper, lower from garment
// probabilities (columns upper, lower): -log of the clamped probability, with
// body = 1 - upper - lower.
Eigen::MatrixXd garment_unaries(const Eigen::MatrixXd& probabilities, double epsilon = 1e-6);

struct SegmentationResult {
  std::vector<int> labels;
  std::vector<double> energies;  // unary argmax start, then after every sweep
  int sweeps = 0;
};

// Potts MRF on an arbitrary graph: sum_i U(i, l_i) + w * #{edges with
// differing labels}. Iterated conditional modes from the unary argmax in
// vertex order; a vertex keeps its label on ties. Stops after a sweep with no
// change or after max_sweeps.
double mrf_energy(const Eigen::MatrixXd& unary, const std::vector<std::pair<int, int>>& edges, double weight,
                  const std::vector<int>& labels);
SegmentationResult icm_segment(const Eigen::MatrixXd& unary, const std::vector<std::pair<int, int>>& edges,
                               double weight, int max_sweeps = 50);

// Garment labels on the template mesh from predicted probabilities.
SegmentationResult segment_clothing(const Faces& faces, const Eigen::MatrixXd& probabilities, double pairwise_weight,
                                    int max_sweeps = 50);

// Per-vertex orthonormal frame (tangent along the atlas u direction,
// bitangent, normal) as the columns of each matrix.
std::vector<Mat3> surface_frames(const Vertices& v, const SkinnedTemplate& tpl);

struct RetargetResult {
  TriMesh garment;               // faces whose three vertices are garment
  std::vector<int> template_ids; // garment vertex -> template vertex
};

// Moves the clothing offset onto a new body: garment vertex i goes to
// target_i - R_i T_i, where R_i maps the source body frame at i (source body
// = M_V + T) onto the target body frame.
RetargetResult retarget(const std::vector<int>& labels, const Vertices& m_v, const TightnessField& field,
                        const Vertices& target_body, const SkinnedTemplate& tpl);

}  // namespace tightcap
