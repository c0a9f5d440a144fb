#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tightcap/deform.h"
#include "tightcap/metrics.h"
#include "tightcap/spatial.h"
#include "tightcap/template.h"

namespace tightcap {

// Pinhole camera looking down its +z axis; image x right, y down. Pixel (i, j)
// covers [i, i+1) x [j, j+1).
struct Camera {
  Mat3 rotation = Mat3::Identity();  // rows: image right, image down, optical axis (world frame)
  Vec3 center = Vec3::Zero();
  double focal = 1;
  double cx = 0, cy = 0;
  int width = 0, height = 0;
  double weight = 1;
  std::string role;  // "boundary", "torso" or "ring"
  std::string part;  // e.g. "wrist_l", "upper_torso", "body"

  Vec3 axis() const { return rotation.row(2).transpose(); }
  Vec3 to_camera(const Vec3& p) const { return rotation * (p - center); }
  Vec2 project(const Vec3& p) const {
    const Vec3 q = to_camera(p);
    return Vec2(focal * q.x() / q.z() + cx, focal * q.y() / q.z() + cy);
  }
  // d project / d p (2 x 3).
  Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& p) const;
};

struct CameraRig {
  std::vector<Camera> cameras;
};

// Joints the rig needs.
const std::vector<std::string>& camera_rig_joints();

// 30 cameras: an orthogonal pair at each of neck, wrists and ankles (weight 1),
// five views around the upper and five around the lower torso (weight 0.5),
// and ten around the whole body (weight 1).
CameraRig build_camera_rig(const BoundingBox& scan_box, const std::map<std::string, Vec3>& joints,
                           int resolution = 512);

struct SilhouetteObs {
  int camera = -1;
  std::vector<Vec2> points;   // pixels
  std::vector<Vec2> normals;  // unit, pointing out of the mask
};

struct Silhouette {
  int width = 0, height = 0;
  std::vector<std::uint8_t> mask;  // row-major
  std::vector<float> depth;        // camera z of the nearest surface, +inf outside
  SilhouetteObs obs;

  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height && mask[y * width + x]; }
};

// Rasterized coverage of the mesh (pixel centers) with a depth buffer, plus
// contour samples between 4-adjacent inside/outside pixels. Normals are the
// negated gradient of the mask blurred with a 1.5 px Gaussian. Samples within
// two pixels of the image border are dropped.
Silhouette render_silhouette(const TriMesh& mesh, const Camera& camera);

struct RegistrationConfig {
  double lambda_reg_s = 10;
  double lambda_point_d = 0.5;
  double lambda_plane_d = 1.5;
  double lambda_reg_d = 7;
  double lambda_point_v = 1;
  double lambda_plane_v = 1.5;
  double lambda_reg_v = 1;
  int nodes_s = 1407;
  int nodes_d = 2103;
  int bind_k = 4;
  int icp_iterations = 6;
  int gn_steps = 4;
  double gate_distance = 0.05;  // fraction of the scan bbox diagonal
  double gate_angle_deg = 60;
  int resolution = 512;
};

void validate(const RegistrationConfig& cfg);

// Closest point on the scan surface for every query vertex, with the scan
// normal interpolated there. Pairs beyond the distance gate or with normals
// more than the angle gate apart are invalid.
struct Correspondences {
  Vertices targets;
  Vertices normals;
  std::vector<std::uint8_t> valid;
  int count() const;
};
struct ScanSurface {
  TriMesh mesh;  // with normals
  AabbTree tree;
  double diagonal = 0;
  explicit ScanSurface(const TriMesh& scan);
};
Correspondences find_correspondences(const Vertices& v, const Vertices& normals, const ScanSurface& scan,
                                     double gate_distance, double gate_angle_deg);

struct StageReport {
  std::string stage;
  std::vector<double> energies;  // solver cost at the start of each ICP iteration, then the final cost
  std::vector<int> correspondences;
  double seconds = 0;
};

struct SilhouetteStageResult {
  EDGraph graph;
  Vertices m_s;
  Vertices m_warp;
  StageReport report;
};

// Silhouette stage on the coarse ED graph. `graph` must be sampled on the
// template topology and rebased onto `warped`.
SilhouetteStageResult stage_silhouette(const Vertices& warped, const Faces& faces, EDGraph graph,
                                       const TriMesh& scan, const CameraRig& rig, const RegistrationConfig& cfg);

struct StageResult {
  Vertices vertices;
  StageReport report;
};

StageResult stage_pointcloud(const Vertices& m_s, const Faces& faces, EDGraph graph, const TriMesh& scan,
                             const RegistrationConfig& cfg);
StageResult stage_pervertex(const Vertices& m_d, const Faces& faces, const TriMesh& scan,
                            const RegistrationConfig& cfg);

// Residual blocks shared by the stages (exposed for gradient checks).
ResidualBlock silhouette_block(const EDGraph& graph, const Camera& camera, int vertex_id, const Vec2& point,
                               const Vec2& normal, double weight);
ResidualBlock vertex_point_block(int vertex_id, const Vec3& target, double weight);
ResidualBlock vertex_plane_block(int vertex_id, const Vec3& target, const Vec3& normal, double weight);
// Uniform Laplacian of the offsets x - base at vertex i.
ResidualBlock offset_laplacian_block(int vertex_id, const std::vector<int>& neighbors, const Vertices& base,
                                     double weight);

struct AlignmentResult {
  Faces faces;
  JointRig joints;  // J_mv
  Vertices m_init;  // skeletal warp by J_mv
  Vertices m_warp;
  Vertices m_s, m_d, m_v;
  MetricReport metrics_s, metrics_d, metrics_v;
  std::vector<StageReport> stages;

  TriMesh mesh(const Vertices& v) const;
};

// Stage errors are rethrown as StageError with the stage tag prefixed.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what) : Error(stage + ": " + what), stage(stage) {}
  std::string stage;
};

AlignmentResult align_full(const SkinnedTemplate& tpl, const TriMesh& scan, const std::map<std::string, Vec3>& joints,
                           const RegistrationConfig& cfg);

// Joints file: JSON {"joints": [{"name": ..., "x": ..., "y": ..., "z": ...}, ...]}.
std::map<std::string, Vec3> load_joints(const std::filesystem::path& path);
void save_joints(const std::filesystem::path& path, const std::map<std::string, Vec3>& joints);

// One PLY per stage (m_init, m_warp, m_s, m_d, m_v) and metrics.json. Stage
// timings are left out so that the export is deterministic.
void export_alignment(const AlignmentResult& result, const std::filesystem::path& dir);
AlignmentResult load_alignment(const std::filesystem::path& dir);

}  // namespace tightcap
