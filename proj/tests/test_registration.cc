#include <random>

#include "doctest.h"
#include "test_util.h"
#include "tightcap/fixtures.h"
#include "tightcap/registration.h"

using namespace tightcap;

namespace {

const SkinnedTemplate& default_template() {
  static const SkinnedTemplate tpl = generate_synthetic_template(SynthSpec{});
  return tpl;
}

Camera sphere_camera(double dist, double focal, int res) {
  Camera c;
  c.rotation << 1, 0, 0, 0, -1, 0, 0, 0, -1;  // looking down -z from +z
  c.center = Vec3(0, 0, dist);
  c.focal = focal;
  c.cx = c.cy = 0.5 * res;
  c.width = c.height = res;
  return c;
}

TriMesh offset_along_normals(TriMesh m, double d) {
  m = with_normals(m);
  m.vertices += d * m.normals;
  return with_normals(m);
}

void randomize(EDGraph& g, std::uint64_t seed, double rot, double trans) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  for (int k = 0; k < g.num_nodes(); ++k) {
    g.node_rot[k] = rotation_from_axis_angle(rot * Vec3(n(rng), n(rng), n(rng)));
    g.node_trans.row(k) = trans * Vec3(n(rng), n(rng), n(rng)).transpose();
  }
}

RegistrationConfig small_config() {
  RegistrationConfig c;
  c.nodes_s = 60;
  c.nodes_d = 120;
  return c;
}

}  // namespace

TEST_CASE("camera rig layout") {
  const auto& tpl = default_template();
  const auto joints = joint_map(tpl.rig);
  const CameraRig rig = build_camera_rig(bounding_box(tpl.mesh.vertices), joints);
  REQUIRE(rig.cameras.size() == 30);
  std::map<std::string, int> roles;
  for (const auto& c : rig.cameras) {
    ++roles[c.role];
    CHECK((c.rotation * c.rotation.transpose() - Mat3::Identity()).norm() < 1e-12);
    CHECK(c.rotation.determinant() == doctest::Approx(1.0));
    CHECK(c.weight == (c.role == "torso" ? 0.5 : 1.0));
  }
  CHECK(roles == std::map<std::string, int>{{"boundary", 10}, {"ring", 10}, {"torso", 10}});
  for (int p = 0; p < 5; ++p) {
    const Camera& a = rig.cameras[2 * p];
    const Camera& b = rig.cameras[2 * p + 1];
    CHECK(a.part == b.part);
    CHECK(std::abs(a.axis().dot(b.axis())) < 1e-9);
    const Vec2 q = a.project(joints.at(a.part));
    CHECK((q - Vec2(a.cx, a.cy)).norm() < 1e-6);
  }
  auto missing = joints;
  missing.erase("ankle_r");
  try {
    build_camera_rig(bounding_box(tpl.mesh.vertices), missing);
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("ankle_r") != std::string::npos);
  }
}

TEST_CASE("sphere silhouette is a disk of the analytic radius") {
  const double r = 1.0, dist = 4.0, f = 200.0;
  const int res = 256;
  const Camera cam = sphere_camera(dist, f, res);
  const Silhouette s = render_silhouette(make_icosphere(5, r), cam);
  const double radius = f * r / std::sqrt(dist * dist - r * r);
  REQUIRE(s.obs.points.size() > 200);
  for (size_t k = 0; k < s.obs.points.size(); ++k) {
    const Vec2 d = s.obs.points[k] - Vec2(cam.cx, cam.cy);
    CHECK(std::abs(d.norm() - radius) < 1.0);
    CHECK(s.obs.normals[k].dot(d.normalized()) > 0.95);
    CHECK(s.obs.normals[k].norm() == doctest::Approx(1.0));
  }
  CHECK(s.inside(res / 2, res / 2));
  CHECK(s.depth[(res / 2) * res + res / 2] == doctest::Approx(dist - r).epsilon(1e-3));

  const Silhouette empty = render_silhouette(TriMesh{}, cam);
  CHECK(empty.obs.points.empty());
  // Faces behind the camera are not drawn.
  const Silhouette behind = render_silhouette(make_icosphere(2, 0.5, Vec3(0, 0, 6)), cam);
  CHECK(behind.obs.points.empty());
}

TEST_CASE("correspondences equal exhaustive closest points") {
  const TriMesh scan = with_normals(make_icosphere(3, 1.0));
  const ScanSurface surf(scan);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.3, 1.3);
  Vertices q(300, 3), qn(300, 3);
  for (int i = 0; i < 300; ++i) {
    q.row(i) = Vec3(u(rng), u(rng), u(rng)).transpose();
    qn.row(i) = q.row(i).normalized();
  }
  const Correspondences c = find_correspondences(q, qn, surf, 0.2, 60);
  int valid = 0;
  for (int i = 0; i < 300; ++i) {
    const Vec3 p = q.row(i).transpose();
    double best = 1e300;
    for (int f = 0; f < scan.num_faces(); ++f) {
      const auto cp = closest_point_on_triangle<double>(p, scan.vertex(scan.faces(f, 0)), scan.vertex(scan.faces(f, 1)),
                                                        scan.vertex(scan.faces(f, 2)));
      best = std::min(best, cp.squared_distance);
    }
    const double d = (c.targets.row(i).transpose() - p).squaredNorm();
    CHECK(d == doctest::Approx(best).epsilon(1e-12));
    const bool expect = std::sqrt(best) <= 0.2;
    CHECK(static_cast<bool>(c.valid[i]) == expect);
    valid += c.valid[i];
  }
  CHECK(valid > 10);
  // Flipped normals fail the angle gate.
  const Correspondences flipped = find_correspondences(q, -qn, surf, 10.0, 60);
  CHECK(flipped.count() == 0);
}

TEST_CASE("registration residual Jacobians agree with central differences") {
  const TriMesh m = with_normals(make_icosphere(3, 0.5));
  EDGraph g = sample_ed_graph(m, 50);
  // Normalized image units keep central differences free of cancellation.
  Camera cam = sphere_camera(3.0, 1.0, 512);
  cam.cx = cam.cy = 0;
  const auto adj = vertex_adjacency(m.num_vertices(), m.faces);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0, 1);
  for (std::uint64_t s = 0; s < 10; ++s) {
    randomize(g, 300 + s, 0.5, 0.1);
    const Eigen::VectorXd x = ed_state(g);
    const int v = static_cast<int>((53 * s + 7) % m.num_vertices());
    const Vec2 nrm = Vec2(n(rng), n(rng)).normalized();
    const auto sb = silhouette_block(g, cam, v, Vec2(0.05, -0.1), nrm, 0.7);
    CHECK(check_gradient(sb, x, 1e-6, ed_retract) < 1e-4);

    Eigen::VectorXd y(3 * m.num_vertices());
    for (int i = 0; i < y.size(); ++i) y(i) = n(rng);
    const Vec3 t(n(rng), n(rng), n(rng));
    CHECK(check_gradient(vertex_point_block(v, t, 1.0), y, 1e-6) < 1e-4);
    CHECK(check_gradient(vertex_plane_block(v, t, t.normalized(), 1.5), y, 1e-6) < 1e-4);
    CHECK(check_gradient(offset_laplacian_block(v, adj[v], m.vertices, 1.0), y, 1e-6) < 1e-4);
  }
}

TEST_CASE("point and per-vertex stages are fixpoints on their own input") {
  const TriMesh m = with_normals(make_icosphere(3, 0.5));
  const auto cfg = small_config();
  EDGraph g = sample_ed_graph(m, cfg.nodes_d);
  const StageResult d = stage_pointcloud(m.vertices, m.faces, g, m, cfg);
  CHECK((d.vertices - m.vertices).cwiseAbs().maxCoeff() < 1e-6);
  const StageResult v = stage_pervertex(m.vertices, m.faces, m, cfg);
  CHECK((v.vertices - m.vertices).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(v.report.correspondences.front() == m.num_vertices());

  TriMesh tiny;
  tiny.vertices = Vertices::Zero(2, 3);
  CHECK_THROWS_AS(stage_pointcloud(m.vertices, m.faces, g, tiny, cfg), ArgumentError);
}

TEST_CASE("point stage follows a 5 mm normal offset") {
  const TriMesh m = with_normals(make_icosphere(4, 0.5));
  const TriMesh scan = offset_along_normals(m, 0.005);
  const auto cfg = small_config();
  const StageResult d = stage_pointcloud(m.vertices, m.faces, sample_ed_graph(m, cfg.nodes_d), scan, cfg);
  TriMesh out = m;
  out.vertices = d.vertices;
  CHECK(mean_surface_distance(out, scan) < 0.001);
  CHECK(d.vertices.rows() == m.vertices.rows());
}

TEST_CASE("per-vertex stage captures wrinkles the graph cannot") {
  const TriMesh m = with_normals(make_icosphere(5, 0.5));
  TriMesh scan = m;
  Eigen::VectorXd h(m.num_vertices());
  for (int i = 0; i < m.num_vertices(); ++i) {
    const Vec3 p = m.vertex(i);
    h(i) = 0.002 * std::sin(40 * p.x()) * std::sin(40 * p.y()) * std::sin(40 * p.z());
    scan.vertices.row(i) += h(i) * m.normals.row(i);
  }
  scan = with_normals(scan);
  auto cfg = small_config();
  const StageResult d = stage_pointcloud(m.vertices, m.faces, sample_ed_graph(m, cfg.nodes_d), scan, cfg);
  const StageResult v = stage_pervertex(m.vertices, m.faces, scan, cfg);
  auto captured = [&](const Vertices& out) {
    double num = 0;
    for (int i = 0; i < m.num_vertices(); ++i) num += (out.row(i) - m.vertices.row(i)).dot(m.normals.row(i)) * h(i);
    return num / h.squaredNorm();
  };
  CHECK(captured(v.vertices) >= 0.8);
  CHECK(captured(d.vertices) < 0.5);
}

TEST_CASE("align_full on the posed template itself") {
  const auto& tpl = default_template();
  JointRig pose = named_pose(tpl.rig, "A");
  TriMesh scan;
  scan.vertices = skeletal_warp(tpl, pose);
  scan.faces = tpl.mesh.faces;
  const AlignmentResult r = align_full(tpl, scan, joint_map(pose), RegistrationConfig{});
  CHECK(r.metrics_v.error_mm < 1.0);
  CHECK(r.m_v.rows() == tpl.num_vertices());
  CHECK(r.faces == tpl.mesh.faces);
  CHECK(r.stages.size() == 3);

  const auto dir = testing::temp_dir("align_rt");
  export_alignment(r, dir);
  const AlignmentResult back = load_alignment(dir);
  CHECK((back.m_v - r.m_v).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(back.faces == r.faces);
  CHECK(back.metrics_v.mean == r.metrics_v.mean);
  CHECK(back.joints.theta.size() == r.joints.theta.size());
}

TEST_CASE("align_full recovers a uniformly scaled template") {
  const auto& tpl = default_template();
  const Vec3 c = tpl.mesh.vertices.colwise().mean().transpose();
  TriMesh scan = tpl.mesh;
  scan.vertices = ((tpl.mesh.vertices.rowwise() - c.transpose()) * 1.05).rowwise() + c.transpose();
  auto joints = joint_map(tpl.rig);
  for (auto& [name, p] : joints) p = c + 1.05 * (p - c);
  const AlignmentResult r = align_full(tpl, scan, joints, RegistrationConfig{});
  const double diag = bounding_box(scan.vertices).diagonal();
  CHECK(r.metrics_s.mean < 0.01);
  CHECK(mean_surface_distance(r.mesh(r.m_v), scan) < 0.01 * diag);
}

TEST_CASE("align_full errors name missing joints and bad configs") {
  const auto& tpl = default_template();
  auto joints = joint_map(tpl.rig);
  joints.erase("wrist_l");
  try {
    align_full(tpl, tpl.mesh, joints, RegistrationConfig{});
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("wrist_l") != std::string::npos);
  }
  RegistrationConfig bad;
  bad.icp_iterations = 0;
  CHECK_THROWS_AS(align_full(tpl, tpl.mesh, joint_map(tpl.rig), bad), ArgumentError);
}

TEST_CASE("joints file round trip") {
  const auto dir = testing::temp_dir("joints");
  const auto joints = joint_map(default_template().rig);
  save_joints(dir / "j.json", joints);
  const auto back = load_joints(dir / "j.json");
  CHECK(back.size() == joints.size());
  for (const auto& [name, p] : joints) CHECK((back.at(name) - p).norm() < 1e-12);
  CHECK_THROWS_AS(load_joints(dir / "none.json"), ParseError);
}
