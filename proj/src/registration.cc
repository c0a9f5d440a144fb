#include "tightcap/registration.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "tightcap/parallel.h"

namespace tightcap {

namespace {

constexpr double kNear = 0.01;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Vec3 orthogonal_unit(const Vec3& d, const Vec3& ref) {
  Vec3 a = ref - ref.dot(d) * d;
  if (a.norm() < 1e-6) a = Vec3::UnitX() - Vec3::UnitX().dot(d) * d;
  if (a.norm() < 1e-6) a = Vec3::UnitY() - Vec3::UnitY().dot(d) * d;
  return a.normalized();
}

// Camera at distance 3r from `target` looking along `forward`, framing a
// sphere of radius r at 80% of the image; image up follows world +z when
// possible.
Camera look_at(const Vec3& target, const Vec3& forward_in, double r, int res, double weight, std::string role,
               std::string part) {
  const Vec3 f = forward_in.normalized();
  Vec3 right = f.cross(Vec3::UnitZ());
  if (right.norm() < 1e-6) right = f.cross(Vec3::UnitY());
  right.normalize();
  const Vec3 down = f.cross(right);
  Camera c;
  c.rotation.row(0) = right.transpose();
  c.rotation.row(1) = down.transpose();
  c.rotation.row(2) = f.transpose();
  const double dist = 3.0 * r;
  c.center = target - dist * f;
  c.focal = 0.4 * res * std::sqrt(dist * dist - r * r) / r;
  c.cx = c.cy = 0.5 * res;
  c.width = c.height = res;
  c.weight = weight;
  c.role = std::move(role);
  c.part = std::move(part);
  return c;
}

const Vec3& joint_at(const std::map<std::string, Vec3>& joints, const std::string& name) {
  const auto it = joints.find(name);
  if (it == joints.end()) throw ArgumentError("missing joint '" + name + "'");
  return it->second;
}

std::vector<float> gaussian_blur(const std::vector<std::uint8_t>& mask, int w, int h, double sigma) {
  const int rad = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<size_t>(2 * rad + 1));
  double sum = 0;
  for (int i = -rad; i <= rad; ++i) sum += k[i + rad] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& x : k) x /= sum;
  std::vector<float> tmp(mask.size()), out(mask.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -rad; i <= rad; ++i) {
        const int xx = std::clamp(x + i, 0, w - 1);
        s += k[i + rad] * mask[y * w + xx];
      }
      tmp[y * w + x] = static_cast<float>(s);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -rad; i <= rad; ++i) {
        const int yy = std::clamp(y + i, 0, h - 1);
        s += k[i + rad] * tmp[yy * w + x];
      }
      out[y * w + x] = static_cast<float>(s);
    }
  return out;
}

// Gradient of a pixel-center sampled image at a continuous pixel position.
Vec2 image_gradient(const std::vector<float>& img, int w, int h, const Vec2& p) {
  auto at = [&](int x, int y) {
    return static_cast<double>(img[std::clamp(y, 0, h - 1) * w + std::clamp(x, 0, w - 1)]);
  };
  auto grad = [&](int x, int y) { return Vec2(0.5 * (at(x + 1, y) - at(x - 1, y)), 0.5 * (at(x, y + 1) - at(x, y - 1))); };
  const double fx = p.x() - 0.5, fy = p.y() - 0.5;
  const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  return (1 - ax) * (1 - ay) * grad(x0, y0) + ax * (1 - ay) * grad(x0 + 1, y0) + (1 - ax) * ay * grad(x0, y0 + 1) +
         ax * ay * grad(x0 + 1, y0 + 1);
}

Vec3 interpolated_normal(const TriMesh& m, const SurfaceHit& hit) {
  Vec3 n = Vec3::Zero();
  for (int c = 0; c < 3; ++c) n += hit.bary(c) * m.normals.row(m.faces(hit.face, c)).transpose();
  if (n.norm() < 1e-12) {
    const Vec3 a = m.vertex(m.faces(hit.face, 0)), b = m.vertex(m.faces(hit.face, 1)), c = m.vertex(m.faces(hit.face, 2));
    n = (b - a).cross(c - a);
  }
  return n.normalized();
}

Vertices normals_of(const Vertices& v, const Faces& f) {
  TriMesh m;
  m.vertices = v;
  m.faces = f;
  return vertex_normals(m).normals;
}

SolveOptions stage_solve_options(const RegistrationConfig& cfg) {
  SolveOptions so;
  so.max_outer_iters = cfg.gn_steps;
  so.cg_max_iters = 300;
  so.cg_tolerance = 1e-8;
  return so;
}

}  // namespace

Eigen::Matrix<double, 2, 3> Camera::project_jacobian(const Vec3& p) const {
  const Vec3 q = to_camera(p);
  Eigen::Matrix<double, 2, 3> d;
  d << focal / q.z(), 0, -focal * q.x() / (q.z() * q.z()), 0, focal / q.z(), -focal * q.y() / (q.z() * q.z());
  return d * rotation;
}

const std::vector<std::string>& camera_rig_joints() {
  static const std::vector<std::string> names = {"neck",    "wrist_l", "wrist_r",    "ankle_l",   "ankle_r",
                                                 "hip_l",   "hip_r",   "shoulder_l", "shoulder_r"};
  return names;
}

CameraRig build_camera_rig(const BoundingBox& box, const std::map<std::string, Vec3>& joints, int res) {
  for (const auto& name : camera_rig_joints()) joint_at(joints, name);
  if (res < 16) throw ArgumentError("build_camera_rig: resolution below 16 pixels");
  const double diag = box.diagonal();
  if (!(diag > 0)) throw ArgumentError("build_camera_rig: empty scan bounding box");
  CameraRig rig;
  const Vec3 sh_l = joint_at(joints, "shoulder_l"), sh_r = joint_at(joints, "shoulder_r");
  const Vec3 hip_l = joint_at(joints, "hip_l"), hip_r = joint_at(joints, "hip_r");
  const Vec3 neck = joint_at(joints, "neck");
  const Vec3 mid_sh = 0.5 * (sh_l + sh_r), mid_hip = 0.5 * (hip_l + hip_r);
  Vec3 up = neck - mid_hip;
  up = up.norm() > 1e-9 ? Vec3(up.normalized()) : Vec3::UnitZ();
  const Vec3 lateral = orthogonal_unit(up, sh_l - sh_r);
  const Vec3 front = up.cross(lateral);

  // Boundary pairs: two axes orthogonal to the limb and to each other.
  const double rb = 0.09 * diag;
  auto limb_dir = [&](const std::string& joint, const std::string& mid, const std::string& root) {
    const Vec3 j = joint_at(joints, joint);
    const auto it = joints.find(mid);
    const Vec3 from = it != joints.end() ? it->second : joint_at(joints, root);
    const Vec3 d = j - from;
    return d.norm() > 1e-9 ? Vec3(d.normalized()) : up;
  };
  struct Boundary {
    std::string name;
    Vec3 dir, ref;
  };
  const std::vector<Boundary> parts = {
      {"neck", up, lateral},
      {"wrist_l", limb_dir("wrist_l", "elbow_l", "shoulder_l"), up},
      {"wrist_r", limb_dir("wrist_r", "elbow_r", "shoulder_r"), up},
      {"ankle_l", limb_dir("ankle_l", "knee_l", "hip_l"), lateral},
      {"ankle_r", limb_dir("ankle_r", "knee_r", "hip_r"), lateral},
  };
  for (const auto& p : parts) {
    const Vec3 a1 = orthogonal_unit(p.dir, p.ref);
    const Vec3 a2 = p.dir.cross(a1).normalized();
    const Vec3 target = joint_at(joints, p.name);
    rig.cameras.push_back(look_at(target, a1, rb, res, 1.0, "boundary", p.name));
    rig.cameras.push_back(look_at(target, a2, rb, res, 1.0, "boundary", p.name));
  }

  // Torso halves: five azimuths each around the trunk axis.
  const double rt = std::max(0.6 * (neck - mid_hip).norm(), 0.05 * diag);
  const Vec3 upper = (2.0 * mid_sh + mid_hip) / 3.0, lower = (2.0 * mid_hip + mid_sh) / 3.0;
  for (const auto& [name, center] : {std::pair<std::string, Vec3>{"upper_torso", upper}, {"lower_torso", lower}})
    for (int i = 0; i < 5; ++i) {
      const double phi = 2 * M_PI * i / 5;
      const Vec3 a = std::cos(phi) * front + std::sin(phi) * lateral;
      rig.cameras.push_back(look_at(center, -a, rt, res, 0.5, "torso", name));
    }

  // Full-body ring about world z.
  for (int i = 0; i < 10; ++i) {
    const double phi = 2 * M_PI * i / 10;
    const Vec3 a(std::cos(phi), std::sin(phi), 0);
    rig.cameras.push_back(look_at(box.center(), -a, 0.5 * diag, res, 1.0, "ring", "body"));
  }
  return rig;
}

Silhouette render_silhouette(const TriMesh& mesh, const Camera& cam) {
  Silhouette s;
  s.width = cam.width;
  s.height = cam.height;
  s.obs.camera = -1;
  const int w = cam.width, h = cam.height;
  s.mask.assign(static_cast<size_t>(w) * h, 0);
  s.depth.assign(static_cast<size_t>(w) * h, std::numeric_limits<float>::infinity());
  const int nv = mesh.num_vertices();
  std::vector<Vec3> q(static_cast<size_t>(nv));
  for (int i = 0; i < nv; ++i) {
    const Vec3 c = cam.to_camera(mesh.vertex(i));
    q[i] = Vec3(cam.focal * c.x() / c.z() + cam.cx, cam.focal * c.y() / c.z() + cam.cy, c.z());
  }
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const Vec3& a = q[mesh.faces(f, 0)];
    const Vec3& b = q[mesh.faces(f, 1)];
    const Vec3& c = q[mesh.faces(f, 2)];
    if (a.z() < kNear || b.z() < kNear || c.z() < kNear) continue;
    const double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
    if (area == 0 || !std::isfinite(area)) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}) - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}) - 0.5)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const double w0 = ((b.x() - px) * (c.y() - py) - (b.y() - py) * (c.x() - px)) / area;
        const double w1 = ((c.x() - px) * (a.y() - py) - (c.y() - py) * (a.x() - px)) / area;
        const double w2 = 1 - w0 - w1;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        const double inv_z = w0 / a.z() + w1 / b.z() + w2 / c.z();
        const float z = static_cast<float>(1.0 / inv_z);
        const size_t id = static_cast<size_t>(y) * w + x;
        s.mask[id] = 1;
        s.depth[id] = std::min(s.depth[id], z);
      }
  }

  const std::vector<float> blur = gaussian_blur(s.mask, w, h, 1.5);
  auto add = [&](const Vec2& p, const Vec2& fallback) {
    if (p.x() < 2 || p.y() < 2 || p.x() > w - 2 || p.y() > h - 2) return;
    Vec2 g = image_gradient(blur, w, h, p);
    Vec2 n = g.norm() > 1e-6 ? Vec2(-g.normalized()) : fallback;
    s.obs.points.push_back(p);
    s.obs.normals.push_back(n);
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!s.inside(x, y)) continue;
      if (!s.inside(x + 1, y)) add(Vec2(x + 1.0, y + 0.5), Vec2(1, 0));
      if (!s.inside(x - 1, y)) add(Vec2(x, y + 0.5), Vec2(-1, 0));
      if (!s.inside(x, y + 1)) add(Vec2(x + 0.5, y + 1.0), Vec2(0, 1));
      if (!s.inside(x, y - 1)) add(Vec2(x + 0.5, y), Vec2(0, -1));
    }
  return s;
}

void validate(const RegistrationConfig& c) {
  for (double l : {c.lambda_reg_s, c.lambda_point_d, c.lambda_plane_d, c.lambda_reg_d, c.lambda_point_v,
                   c.lambda_plane_v, c.lambda_reg_v})
    if (!(l >= 0)) throw ArgumentError("registration config: weights must be non-negative");
  if (c.nodes_s < 1 || c.nodes_d < 1 || c.bind_k < 2) throw ArgumentError("registration config: bad graph sizes");
  if (c.icp_iterations < 1 || c.gn_steps < 1) throw ArgumentError("registration config: iteration counts must be positive");
  if (!(c.gate_distance > 0) || !(c.gate_angle_deg > 0)) throw ArgumentError("registration config: gates must be positive");
  if (c.resolution < 16) throw ArgumentError("registration config: resolution below 16 pixels");
}

int Correspondences::count() const {
  int n = 0;
  for (auto v : valid) n += v;
  return n;
}

ScanSurface::ScanSurface(const TriMesh& scan) : mesh(with_normals(scan)), tree(mesh.vertices, mesh.faces) {
  if (scan.num_vertices() < 3 || scan.num_faces() < 1) throw ArgumentError("scan needs at least 3 vertices and a face");
  diagonal = bounding_box(scan.vertices).diagonal();
}

Correspondences find_correspondences(const Vertices& v, const Vertices& normals, const ScanSurface& scan,
                                     double gate_distance, double gate_angle_deg) {
  const int n = static_cast<int>(v.rows());
  Correspondences c;
  c.targets.resize(n, 3);
  c.normals.resize(n, 3);
  c.valid.assign(static_cast<size_t>(n), 0);
  const double cos_gate = std::cos(gate_angle_deg * M_PI / 180.0);
  parallel_for(n, [&](int i) {
    const Vec3 p = v.row(i).transpose();
    const SurfaceHit hit = scan.tree.closest(p);
    const Vec3 sn = interpolated_normal(scan.mesh, hit);
    c.targets.row(i) = hit.point.transpose();
    c.normals.row(i) = sn.transpose();
    const Vec3 vn = normals.row(i).transpose();
    c.valid[i] = std::sqrt(hit.squared_distance) <= gate_distance && vn.norm() > 0 && vn.dot(sn) >= cos_gate * vn.norm();
  });
  return c;
}

ResidualBlock silhouette_block(const EDGraph& graph, const Camera& camera, int vertex_id, const Vec2& point,
                               const Vec2& normal, double weight) {
  ResidualBlock b;
  b.kind = "silhouette";
  b.dim = 1;
  b.weight = weight;
  b.params = linearize_warp(graph, vertex_id, ed_state(graph), false).params;
  const Mat3 rot = camera.rotation;
  const Vec3 center = camera.center;
  const double f = camera.focal, cx = camera.cx, cy = camera.cy;
  b.evaluate = [&graph, vertex_id, point, normal, rot, center, f, cx, cy](const Eigen::VectorXd& x, Eigen::VectorXd& r,
                                                                        Eigen::MatrixXd* jac) {
    auto lin = linearize_warp(graph, vertex_id, x, jac != nullptr);
    const Vec3 q = rot * (lin.position - center);
    r.resize(1);
    if (q.z() < kNear) {  // behind the camera: no contribution
      r(0) = 0;
      if (jac) jac->setZero(1, lin.jacobian.cols());
      return true;
    }
    const Vec2 proj(f * q.x() / q.z() + cx, f * q.y() / q.z() + cy);
    r(0) = normal.dot(proj - point);
    if (jac) {
      Eigen::Matrix<double, 2, 3> dp;
      dp << f / q.z(), 0, -f * q.x() / (q.z() * q.z()), 0, f / q.z(), -f * q.y() / (q.z() * q.z());
      *jac = normal.transpose() * dp * rot * lin.jacobian;
    }
    return true;
  };
  return b;
}

ResidualBlock vertex_point_block(int i, const Vec3& target, double weight) {
  ResidualBlock b;
  b.kind = "point";
  b.dim = 3;
  b.weight = weight;
  b.params = {3 * i, 3 * i + 1, 3 * i + 2};
  b.evaluate = [i, target](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    r = x.segment<3>(3 * i) - target;
    if (jac) jac->setIdentity(3, 3);
    return true;
  };
  return b;
}

ResidualBlock vertex_plane_block(int i, const Vec3& target, const Vec3& normal, double weight) {
  ResidualBlock b;
  b.kind = "plane";
  b.dim = 1;
  b.weight = weight;
  b.params = {3 * i, 3 * i + 1, 3 * i + 2};
  b.evaluate = [i, target, normal](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    r.resize(1);
    r(0) = normal.dot(x.segment<3>(3 * i) - target);
    if (jac) *jac = normal.transpose();
    return true;
  };
  return b;
}

ResidualBlock offset_laplacian_block(int i, const std::vector<int>& nb, const Vertices& base, double weight) {
  ResidualBlock b;
  b.kind = "laplacian";
  b.dim = 3;
  b.weight = weight;
  b.params = {3 * i, 3 * i + 1, 3 * i + 2};
  for (int j : nb)
    for (int c = 0; c < 3; ++c) b.params.push_back(3 * j + c);
  const double inv = nb.empty() ? 0.0 : 1.0 / static_cast<double>(nb.size());
  Vec3 base_lap = base.row(i).transpose();
  for (int j : nb) base_lap -= inv * base.row(j).transpose();
  b.evaluate = [i, nb, inv, base_lap](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    Vec3 lap = x.segment<3>(3 * i);
    for (int j : nb) lap -= inv * x.segment<3>(3 * j);
    r = lap - base_lap;
    if (jac) {
      jac->setZero(3, static_cast<Eigen::Index>(3 * (nb.size() + 1)));
      jac->block<3, 3>(0, 0).setIdentity();
      for (size_t k = 0; k < nb.size(); ++k) jac->block<3, 3>(0, static_cast<Eigen::Index>(3 * (k + 1))) = -inv * Mat3::Identity();
    }
    return true;
  };
  return b;
}

SilhouetteStageResult stage_silhouette(const Vertices& warped, const Faces& faces, EDGraph graph,
                                       const TriMesh& scan, const CameraRig& rig, const RegistrationConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (graph.num_vertices() != warped.rows()) throw ArgumentError("stage_silhouette: graph does not match the template");
  const int nc = static_cast<int>(rig.cameras.size());
  std::vector<SilhouetteObs> scan_obs(static_cast<size_t>(nc));
  parallel_for(nc, [&](int j) {
    scan_obs[j] = render_silhouette(scan, rig.cameras[j]).obs;
    scan_obs[j].camera = j;
  });
  const double cos_gate = std::cos(cfg.gate_angle_deg * M_PI / 180.0);
  const double diag = bounding_box(scan.vertices).diagonal();
  const double gate3d = cfg.gate_distance * diag;
  const double depth_tol = 0.005 * diag;

  SilhouetteStageResult out;
  out.report.stage = "silhouette";
  Eigen::VectorXd x = ed_state(graph);
  const auto arap = ed_arap_blocks(graph, cfg.lambda_reg_s);
  TriMesh current;
  current.faces = faces;
  for (int it = 0; it < cfg.icp_iterations; ++it) {
    set_ed_state(graph, x);
    current.vertices = warp_vertices(graph);
    const Vertices vn = normals_of(current.vertices, faces);
    // Per view: template contour vertices, then scan-point matching.
    std::vector<std::vector<ResidualBlock>> per_view(static_cast<size_t>(nc));
    parallel_for(nc, [&](int j) {
      const Camera& cam = rig.cameras[j];
      const Silhouette tpl_sil = render_silhouette(current, cam);
      std::vector<int> cand;
      std::vector<Vec2> cand_n;
      Vertices cand_p(0, 3);
      std::vector<Vec3> pts;
      for (int i = 0; i < current.num_vertices(); ++i) {
        const Vec3 p = current.vertex(i);
        const Vec3 q = cam.to_camera(p);
        if (q.z() < kNear) continue;
        const Vec2 uv = cam.project(p);
        const int px = static_cast<int>(std::floor(uv.x())), py = static_cast<int>(std::floor(uv.y()));
        if (px < 1 || py < 1 || px >= cam.width - 1 || py >= cam.height - 1) continue;
        if (q.z() > tpl_sil.depth[static_cast<size_t>(py) * cam.width + px] + depth_tol)
          continue;  // occluded
        bool rim = false;
        for (int dy = -1; dy <= 1 && !rim; ++dy)
          for (int dx = -1; dx <= 1 && !rim; ++dx) rim = !tpl_sil.inside(px + dx, py + dy);
        if (!rim) continue;
        const Vec3 n3 = vn.row(i).transpose();
        const Vec2 n2 = cam.project_jacobian(p) * n3;
        if (n2.norm() < 1e-9) continue;
        cand.push_back(i);
        cand_n.push_back(n2.normalized());
        pts.emplace_back(uv.x(), uv.y(), 0.0);
      }
      if (cand.empty()) return;
      cand_p.resize(static_cast<Eigen::Index>(pts.size()), 3);
      for (size_t k = 0; k < pts.size(); ++k) cand_p.row(static_cast<Eigen::Index>(k)) = pts[k].transpose();
      const KdTree tree(cand_p);
      const auto& obs = scan_obs[j];
      struct Match {
        int vertex;
        Vec2 point, normal;
      };
      std::vector<Match> matches;
      for (size_t k = 0; k < obs.points.size(); ++k) {
        const Vec3 p(obs.points[k].x(), obs.points[k].y(), 0.0);
        const int c = tree.nearest(p);
        const double depth = cam.to_camera(current.vertex(cand[c])).z();
        const double gate_px = cam.focal * gate3d / depth;
        if ((cand_p.row(c).transpose() - p).norm() > gate_px) continue;
        if (cand_n[c].dot(obs.normals[k]) < cos_gate) continue;
        matches.push_back({cand[c], obs.points[k], obs.normals[k]});
      }
      const double w = matches.empty() ? 0.0 : cam.weight / static_cast<double>(matches.size());
      for (const auto& m : matches) per_view[j].push_back(silhouette_block(graph, cam, m.vertex, m.point, m.normal, w));
    });
    std::vector<ResidualBlock> blocks;
    int count = 0;
    for (auto& v : per_view) {
      count += static_cast<int>(v.size());
      for (auto& b : v) blocks.push_back(std::move(b));
    }
    if (count == 0) throw StageError("silhouette", "no silhouette correspondences in any view");
    out.report.correspondences.push_back(count);
    blocks.insert(blocks.end(), arap.begin(), arap.end());
    const SolveResult res = solve(blocks, x, stage_solve_options(cfg), ed_retract);
    out.report.energies.push_back(res.cost_history.front());
    x = res.params;
    if (it == 0) {
      set_ed_state(graph, x);
      out.m_warp = warp_vertices(graph);
    }
    if (it + 1 == cfg.icp_iterations) out.report.energies.push_back(res.cost_history.back());
  }
  set_ed_state(graph, x);
  out.m_s = warp_vertices(graph);
  out.graph = std::move(graph);
  out.report.seconds = seconds_since(t0);
  return out;
}

StageResult stage_pointcloud(const Vertices& m_s, const Faces& faces, EDGraph graph, const TriMesh& scan,
                             const RegistrationConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (graph.num_vertices() != m_s.rows()) throw ArgumentError("stage_pointcloud: graph does not match the template");
  const ScanSurface surf(scan);
  StageResult out;
  out.report.stage = "pointcloud";
  Eigen::VectorXd x = ed_state(graph);
  const auto arap = ed_arap_blocks(graph, cfg.lambda_reg_d);
  for (int it = 0; it < cfg.icp_iterations; ++it) {
    set_ed_state(graph, x);
    const Vertices v = warp_vertices(graph);
    const Correspondences c =
        find_correspondences(v, normals_of(v, faces), surf, cfg.gate_distance * surf.diagonal, cfg.gate_angle_deg);
    std::vector<ResidualBlock> blocks;
    for (int i = 0; i < static_cast<int>(v.rows()); ++i) {
      if (!c.valid[i]) continue;
      const Vec3 t = c.targets.row(i).transpose(), n = c.normals.row(i).transpose();
      if (cfg.lambda_point_d > 0) blocks.push_back(ed_point_block(graph, i, t, cfg.lambda_point_d));
      if (cfg.lambda_plane_d > 0) blocks.push_back(ed_plane_block(graph, i, t, n, cfg.lambda_plane_d));
    }
    out.report.correspondences.push_back(c.count());
    if (blocks.empty()) throw StageError("pointcloud", "no valid correspondences");
    blocks.insert(blocks.end(), arap.begin(), arap.end());
    const SolveResult res = solve(blocks, x, stage_solve_options(cfg), ed_retract);
    out.report.energies.push_back(res.cost_history.front());
    x = res.params;
    if (it + 1 == cfg.icp_iterations) out.report.energies.push_back(res.cost_history.back());
  }
  set_ed_state(graph, x);
  out.vertices = warp_vertices(graph);
  out.report.seconds = seconds_since(t0);
  return out;
}

StageResult stage_pervertex(const Vertices& m_d, const Faces& faces, const TriMesh& scan,
                            const RegistrationConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const ScanSurface surf(scan);
  const int nv = static_cast<int>(m_d.rows());
  const auto adj = vertex_adjacency(nv, faces);
  StageResult out;
  out.report.stage = "pervertex";
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(m_d.data(), 3 * nv);
  std::vector<ResidualBlock> reg;
  if (cfg.lambda_reg_v > 0)
    for (int i = 0; i < nv; ++i) reg.push_back(offset_laplacian_block(i, adj[i], m_d, cfg.lambda_reg_v));
  for (int it = 0; it < cfg.icp_iterations; ++it) {
    const Vertices v = Eigen::Map<const Vertices>(x.data(), nv, 3);
    const Correspondences c =
        find_correspondences(v, normals_of(v, faces), surf, cfg.gate_distance * surf.diagonal, cfg.gate_angle_deg);
    std::vector<ResidualBlock> blocks;
    for (int i = 0; i < nv; ++i) {
      if (!c.valid[i]) continue;
      const Vec3 t = c.targets.row(i).transpose(), n = c.normals.row(i).transpose();
      if (cfg.lambda_point_v > 0) blocks.push_back(vertex_point_block(i, t, cfg.lambda_point_v));
      if (cfg.lambda_plane_v > 0) blocks.push_back(vertex_plane_block(i, t, n, cfg.lambda_plane_v));
    }
    out.report.correspondences.push_back(c.count());
    if (blocks.empty()) throw StageError("pervertex", "no valid correspondences");
    blocks.insert(blocks.end(), reg.begin(), reg.end());
    const SolveResult res = solve(blocks, x, stage_solve_options(cfg));
    out.report.energies.push_back(res.cost_history.front());
    x = res.params;
    if (it + 1 == cfg.icp_iterations) out.report.energies.push_back(res.cost_history.back());
  }
  out.vertices = Eigen::Map<const Vertices>(x.data(), nv, 3);
  out.report.seconds = seconds_since(t0);
  return out;
}

TriMesh AlignmentResult::mesh(const Vertices& v) const {
  TriMesh m;
  m.vertices = v;
  m.faces = faces;
  return m;
}

AlignmentResult align_full(const SkinnedTemplate& tpl, const TriMesh& scan, const std::map<std::string, Vec3>& joints,
                           const RegistrationConfig& cfg) {
  validate(cfg);
  if (scan.num_vertices() < 3 || scan.num_faces() < 1) throw ArgumentError("align_full: degenerate scan");
  std::vector<std::string> required = camera_rig_joints();
  for (const auto& name : required)
    if (!joints.count(name)) throw ArgumentError("align_full: missing joint '" + name + "'");
  int known = 0;
  for (const auto& [name, p] : joints) known += tpl.rig.find(name) >= 0;
  if (known < 14) throw ArgumentError("align_full: need at least 14 template joints, got " + std::to_string(known));

  AlignmentResult res;
  res.faces = tpl.mesh.faces;
  res.joints = fit_joints(tpl.rig, joints, required);
  res.m_init = skeletal_warp(tpl, res.joints);
  const double diag = bounding_box(scan.vertices).diagonal();
  const CameraRig rig = build_camera_rig(bounding_box(scan.vertices), joints, cfg.resolution);
  EDGraphOptions go;
  go.bind_k = cfg.bind_k;

  try {
    EDGraph coarse = sample_ed_graph(tpl.mesh, std::min(cfg.nodes_s, tpl.num_vertices()), go);
    rebase_ed_graph(coarse, res.m_init);
    auto s = stage_silhouette(res.m_init, res.faces, std::move(coarse), scan, rig, cfg);
    res.m_s = std::move(s.m_s);
    res.m_warp = std::move(s.m_warp);
    res.stages.push_back(std::move(s.report));
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError("silhouette", e.what());
  }
  try {
    EDGraph fine = sample_ed_graph(tpl.mesh, std::min(cfg.nodes_d, tpl.num_vertices()), go);
    rebase_ed_graph(fine, res.m_s);
    auto d = stage_pointcloud(res.m_s, res.faces, std::move(fine), scan, cfg);
    res.m_d = std::move(d.vertices);
    res.stages.push_back(std::move(d.report));
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError("pointcloud", e.what());
  }
  try {
    auto v = stage_pervertex(res.m_d, res.faces, scan, cfg);
    res.m_v = std::move(v.vertices);
    res.stages.push_back(std::move(v.report));
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError("pervertex", e.what());
  }
  res.metrics_s = hausdorff_metrics(res.mesh(res.m_s), scan, diag);
  res.metrics_d = hausdorff_metrics(res.mesh(res.m_d), scan, diag);
  res.metrics_v = hausdorff_metrics(res.mesh(res.m_v), scan, diag);
  return res;
}

std::map<std::string, Vec3> load_joints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_joints: cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    std::map<std::string, Vec3> out;
    for (const auto& r : j.at("joints"))
      out[r.at("name").get<std::string>()] = Vec3(r.at("x").get<double>(), r.at("y").get<double>(), r.at("z").get<double>());
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("load_joints: " + path.string() + ": " + e.what());
  }
}

void save_joints(const std::filesystem::path& path, const std::map<std::string, Vec3>& joints) {
  nlohmann::json j;
  j["joints"] = nlohmann::json::array();
  for (const auto& [name, p] : joints) j["joints"].push_back({{"name", name}, {"x", p.x()}, {"y", p.y()}, {"z", p.z()}});
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw Error("save_joints: cannot write " + path.string());
}

namespace {

nlohmann::json report_json(const MetricReport& m) {
  return {{"mean", m.mean}, {"rms", m.rms},         {"max", m.max},
          {"error_mm", m.error_mm}, {"normalizer", m.normalizer}, {"samples_per_side", m.samples_per_side}};
}

MetricReport report_from(const nlohmann::json& j) {
  MetricReport m;
  m.mean = j.at("mean");
  m.rms = j.at("rms");
  m.max = j.at("max");
  m.error_mm = j.at("error_mm");
  m.normalizer = j.at("normalizer");
  m.samples_per_side = j.at("samples_per_side");
  return m;
}

}  // namespace

void export_alignment(const AlignmentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_ply(dir / "m_init.ply", r.mesh(r.m_init));
  save_ply(dir / "m_warp.ply", r.mesh(r.m_warp));
  save_ply(dir / "m_s.ply", r.mesh(r.m_s));
  save_ply(dir / "m_d.ply", r.mesh(r.m_d));
  save_ply(dir / "m_v.ply", r.mesh(r.m_v));
  nlohmann::json j;
  j["metrics"] = {{"m_s", report_json(r.metrics_s)}, {"m_d", report_json(r.metrics_d)}, {"m_v", report_json(r.metrics_v)}};
  j["stages"] = nlohmann::json::array();
  for (const auto& s : r.stages)
    j["stages"].push_back({{"stage", s.stage}, {"energies", s.energies}, {"correspondences", s.correspondences}});
  nlohmann::json rig;
  rig["names"] = r.joints.names;
  rig["parents"] = r.joints.parents;
  rig["theta"] = nlohmann::json::array();
  for (const auto& t : r.joints.theta) rig["theta"].push_back({t.x(), t.y(), t.z()});
  rig["scale"] = r.joints.scale;
  rig["translation"] = {r.joints.translation.x(), r.joints.translation.y(), r.joints.translation.z()};
  j["joints"] = rig;
  std::ofstream out(dir / "metrics.json");
  out << j.dump(2) << "\n";
  if (!out) throw Error("export_alignment: cannot write " + (dir / "metrics.json").string());
}

AlignmentResult load_alignment(const std::filesystem::path& dir) {
  AlignmentResult r;
  const TriMesh v = load_mesh(dir / "m_v.ply");
  r.faces = v.faces;
  r.m_v = v.vertices;
  r.m_init = load_mesh(dir / "m_init.ply").vertices;
  r.m_warp = load_mesh(dir / "m_warp.ply").vertices;
  r.m_s = load_mesh(dir / "m_s.ply").vertices;
  r.m_d = load_mesh(dir / "m_d.ply").vertices;
  std::ifstream in(dir / "metrics.json");
  if (!in) throw ParseError("load_alignment: missing metrics.json in " + dir.string());
  try {
    nlohmann::json j;
    in >> j;
    r.metrics_s = report_from(j.at("metrics").at("m_s"));
    r.metrics_d = report_from(j.at("metrics").at("m_d"));
    r.metrics_v = report_from(j.at("metrics").at("m_v"));
    const auto& rig = j.at("joints");
    r.joints.names = rig.at("names").get<std::vector<std::string>>();
    r.joints.parents = rig.at("parents").get<std::vector<int>>();
    for (const auto& t : rig.at("theta")) r.joints.theta.emplace_back(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
    r.joints.scale = rig.at("scale").get<std::vector<double>>();
    const auto& m = rig.at("translation");
    r.joints.translation = Vec3(m[0].get<double>(), m[1].get<double>(), m[2].get<double>());
    for (const auto& s : j.at("stages")) {
      StageReport sr;
      sr.stage = s.at("stage");
      sr.energies = s.at("energies").get<std::vector<double>>();
      sr.correspondences = s.at("correspondences").get<std::vector<int>>();
      sr.seconds = s.value("seconds", 0.0);
      r.stages.push_back(sr);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("load_alignment: " + std::string(e.what()));
  }
  return r;
}

}  // namespace tightcap
