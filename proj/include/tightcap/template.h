#pragma once

#include <Eigen/Sparse>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tightcap/mesh.h"

namespace tightcap {

// Joint tree with per-joint pose parameters. Rest frames are axis aligned;
// rest_offsets[j] is the rest position of j relative to its parent (absolute
// for the root).
struct JointRig {
  std::vector<std::string> names;
  std::vector<int> parents;  // -1 for the root; parents precede children
  std::vector<Vec3> rest_offsets;
  std::vector<Vec3> theta;     // axis-angle, local
  std::vector<double> scale;   // along the bone direction, local
  Vec3 translation = Vec3::Zero();

  int size() const { return static_cast<int>(parents.size()); }
  int find(const std::string& name) const;  // -1 if absent
  std::vector<Vec3> rest_positions() const;
  void reset_pose();
};

// Throws ValidationError on cycles, multiple roots, bad parent order or
// non-positive scales.
void validate(const JointRig& rig);

enum class Garment : int { body = 0, upper = 1, lower = 2 };

// Rectangular UV region of one surface part.
struct Chart {
  std::string part;
  Eigen::Vector2d min = Eigen::Vector2d::Zero();
  Eigen::Vector2d max = Eigen::Vector2d::Zero();
};

using SkinWeights = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct SkinnedTemplate {
  static constexpr int kFormatVersion = 1;

  TriMesh mesh;
  JointRig rig;
  SkinWeights skin_weights;  // vertices x joints
  UVs uv;                    // per-vertex sample location in the atlas
  Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor> face_uv;  // per corner
  std::vector<int> face_chart;  // -1 marks faces bridging two charts
  std::vector<Chart> charts;
  std::map<std::string, std::vector<int>> boundary_rings;  // closed, ordered loops
  std::vector<int> vertex_chart;
  std::vector<int> garment_prior;  // Garment per vertex

  int num_vertices() const { return mesh.num_vertices(); }
};

// All SkinnedTemplate invariants; throws ValidationError with the first
// violation found.
void validate(const SkinnedTemplate& tpl);

// Directory container: mesh.ply (binary) plus template.json.
void save_template(const SkinnedTemplate& tpl, const std::filesystem::path& dir);
SkinnedTemplate load_template(const std::filesystem::path& dir);

// FNV-1a over the float32 bit patterns of the atlas (uv, face_uv, charts).
std::uint32_t uv_version_hash(const SkinnedTemplate& tpl);

// World transforms of a rig: x -> A_j (x - P_j) + P_j + u_j, where P_j is
// the rest joint position. Keeping u_j separate keeps the identity pose exact.
struct JointTransforms {
  std::vector<Mat3> rotation;  // accumulated rotation Rg_j
  std::vector<Mat3> linear;    // A_j = Rg_j * Sc_j
  std::vector<Vec3> pivot;     // P_j
  std::vector<Vec3> shift;     // u_j, excluding the global translation
  std::vector<Vec3> joint;     // posed joint positions P_j + u_j + m
};

// Per-joint bone direction used by the scale term (first child, or the
// joint's own offset for leaves).
std::vector<Vec3> bone_directions(const JointRig& rig);

JointTransforms joint_transforms(const JointRig& rig);

// Linear blend skinning of the template rest vertices under `rig`.
Vertices skeletal_warp(const SkinnedTemplate& tpl, const JointRig& rig);

// Posed joint positions only.
std::vector<Vec3> posed_joints(const JointRig& rig);

// 1-to-4 split of every face touching a boundary ring, with conforming
// splits of their neighbours. Every new vertex is an edge midpoint.
SkinnedTemplate refine_garment_boundaries(const SkinnedTemplate& tpl);

// Body proportions of the synthetic humanoid, meters.
struct SynthSpec {
  double height_scale = 1.0;
  double hip_width = 0.17;   // trunk half-width at the hips
  double waist_width = 0.14;
  double chest_width = 0.16;
  double trunk_depth = 0.11;
  double trunk_length = 0.58;  // crotch to shoulder
  double neck_radius = 0.055;
  double head_radius = 0.10;
  double upper_arm_length = 0.28;
  double forearm_length = 0.25;
  double hand_length = 0.08;
  double arm_radius = 0.048;
  double thigh_length = 0.42;
  double shin_length = 0.40;
  double foot_length = 0.07;
  double leg_radius = 0.072;
  double edge_length = 0.02;  // target mesh resolution
  double clothing_offset = 0.03;
  std::uint64_t pose_seed = 0;
};

void validate(const SynthSpec& spec);

SkinnedTemplate generate_synthetic_template(const SynthSpec& spec);

// Names of the joints generate_synthetic_template creates, in rig order.
const std::vector<std::string>& synthetic_joint_names();

struct JointFitOptions {
  double theta_reg = 1e-5;
  double scale_reg = 1e-5;
  int iterations = 50;
};

// Least-squares fit of (theta, scale, translation) so that the posed joints
// match `targets` (by name). Missing targets throw ArgumentError naming the
// joint when they are listed in `required`.
JointRig fit_joints(const JointRig& rest, const std::map<std::string, Vec3>& targets,
                    const std::vector<std::string>& required, const JointFitOptions& opts = {});

}  // namespace tightcap
