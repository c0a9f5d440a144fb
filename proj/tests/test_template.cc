#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "test_util.h"
#include "tightcap/geometry.h"
#include "tightcap/template.h"

using namespace tightcap;

namespace {

const SkinnedTemplate& default_template() {
  static const SkinnedTemplate tpl = generate_synthetic_template(SynthSpec{});
  return tpl;
}

JointRig random_pose(const JointRig& rest, std::uint64_t seed, double angle = 0.4) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  JointRig r = rest;
  for (int j = 0; j < r.size(); ++j) {
    r.theta[j] = angle * Vec3(u(rng), u(rng), u(rng));
    r.scale[j] = 1.0 + 0.1 * u(rng);
  }
  r.translation = Vec3(u(rng), u(rng), u(rng));
  return r;
}

void rewrite_json(const std::filesystem::path& dir, const std::function<void(nlohmann::json&)>& edit) {
  nlohmann::json j;
  {
    std::ifstream in(dir / "template.json");
    in >> j;
  }
  edit(j);
  std::ofstream out(dir / "template.json");
  out << j.dump();
}

}  // namespace

TEST_CASE("default synthetic template satisfies the template contract") {
  const auto& tpl = default_template();
  CHECK_NOTHROW(validate(tpl));
  CHECK(tpl.num_vertices() >= 2000);
  CHECK(tpl.rig.size() >= 17);
  CHECK(euler_characteristic(tpl.mesh) == 2);
  CHECK(is_closed_oriented_manifold(tpl.mesh.faces));
  for (const char* ring : {"neck", "wrist_l", "wrist_r", "waist", "ankle_l", "ankle_r"})
    CHECK(tpl.boundary_rings.count(ring) == 1);
  // Outward orientation: positive enclosed volume.
  double vol = 0;
  for (int f = 0; f < tpl.mesh.num_faces(); ++f)
    vol += tpl.mesh.vertex(tpl.mesh.faces(f, 0)).dot(
               tpl.mesh.vertex(tpl.mesh.faces(f, 1)).cross(tpl.mesh.vertex(tpl.mesh.faces(f, 2)))) / 6.0;
  CHECK(vol > 0.02);
  std::set<int> priors(tpl.garment_prior.begin(), tpl.garment_prior.end());
  CHECK(priors == std::set<int>{0, 1, 2});
}

TEST_CASE("arm length passes through to the rig") {
  SynthSpec s;
  SynthSpec l = s;
  l.upper_arm_length *= 2;
  l.forearm_length *= 2;
  const auto a = generate_synthetic_template(s);
  const auto b = generate_synthetic_template(l);
  for (const char* name : {"wrist_l", "elbow_r"}) {
    const int j = a.rig.find(name);
    CHECK((b.rig.rest_offsets[j] - 2.0 * a.rig.rest_offsets[j]).norm() < 1e-6);
  }
  SynthSpec bad;
  bad.arm_radius = -1;
  CHECK_THROWS_AS(generate_synthetic_template(bad), ArgumentError);
}

TEST_CASE("template container round trip is bit exact") {
  const auto dir = testing::temp_dir("tpl_rt");
  SkinnedTemplate tpl = default_template();
  tpl.rig.theta[6] = Vec3(0.1f, -0.2f, 0.3f);
  tpl.rig.scale[2] = 1.25;
  save_template(tpl, dir);
  const auto back = load_template(dir);
  CHECK(back.mesh.vertices == tpl.mesh.vertices);
  CHECK(back.mesh.faces == tpl.mesh.faces);
  CHECK(back.mesh.colors == tpl.mesh.colors);
  CHECK(back.uv == tpl.uv);
  CHECK(back.face_uv == tpl.face_uv);
  CHECK(back.face_chart == tpl.face_chart);
  CHECK(back.vertex_chart == tpl.vertex_chart);
  CHECK(back.garment_prior == tpl.garment_prior);
  CHECK(back.boundary_rings == tpl.boundary_rings);
  CHECK(back.rig.names == tpl.rig.names);
  CHECK(back.rig.parents == tpl.rig.parents);
  CHECK(back.rig.rest_offsets == tpl.rig.rest_offsets);
  CHECK(back.rig.theta == tpl.rig.theta);
  CHECK(back.rig.scale == tpl.rig.scale);
  CHECK(Eigen::MatrixXd(back.skin_weights) == Eigen::MatrixXd(tpl.skin_weights));
  CHECK(uv_version_hash(back) == uv_version_hash(tpl));
}

TEST_CASE("template loader rejects invalid weights and rigs") {
  const auto dir = testing::temp_dir("tpl_bad");
  save_template(default_template(), dir);
  rewrite_json(dir, [](nlohmann::json& j) {
    for (auto& w : j["skin_weights"]["values"][0]) w = w.get<double>() * 0.8;
  });
  CHECK_THROWS_AS(load_template(dir), ValidationError);

  save_template(default_template(), dir);
  rewrite_json(dir, [](nlohmann::json& j) { j["rig"]["parents"][3] = 3; });
  CHECK_THROWS_AS(load_template(dir), ValidationError);

  save_template(default_template(), dir);
  rewrite_json(dir, [](nlohmann::json& j) { j["atlas"]["uv"][0] = 0.5; });
  CHECK_THROWS_AS(load_template(dir), ValidationError);
}

TEST_CASE("skeletal_warp identity, translation and commutation") {
  const auto& tpl = default_template();
  JointRig rig = tpl.rig;
  CHECK(skeletal_warp(tpl, rig) == tpl.mesh.vertices);
  rig.translation = Vec3(0.5, 0, 0);
  const Vertices shifted = skeletal_warp(tpl, rig);
  for (int i = 0; i < tpl.num_vertices(); ++i)
    CHECK(shifted.row(i) == (tpl.mesh.vertices.row(i).transpose() + Vec3(0.5, 0, 0)).transpose());

  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    JointRig p = random_pose(tpl.rig, seed);
    const Vertices with_m = skeletal_warp(tpl, p);
    const Vec3 m = p.translation;
    p.translation.setZero();
    const Vertices without = skeletal_warp(tpl, p);
    CHECK((with_m - (without.rowwise() + m.transpose())).cwiseAbs().maxCoeff() < 1e-12);
  }
  JointRig wrong = tpl.rig;
  wrong.parents.pop_back();
  CHECK_THROWS_AS(skeletal_warp(tpl, wrong), ArgumentError);
}

TEST_CASE("rotating the wrist moves the hand rigidly about the joint") {
  const auto& tpl = default_template();
  const int wrist = tpl.rig.find("wrist_l");
  JointRig rig = tpl.rig;
  rig.theta[wrist] = Vec3(0, 0, M_PI / 2);
  const Vertices posed = skeletal_warp(tpl, rig);
  const Vec3 pivot = tpl.rig.rest_positions()[wrist];
  const Mat3 r = rotation_from_axis_angle(Vec3(0, 0, M_PI / 2));
  int hand = 0;
  for (int i = 0; i < tpl.num_vertices(); ++i) {
    if (tpl.skin_weights.coeff(i, wrist) != 1.0) continue;
    ++hand;
    const Vec3 oracle = r * (tpl.mesh.vertex(i) - pivot) + pivot;
    CHECK((posed.row(i).transpose() - oracle).norm() < 1e-9);
  }
  CHECK(hand > 20);
}

TEST_CASE("bone scale lengthens the bone and keeps children on it") {
  const auto& tpl = default_template();
  JointRig rig = tpl.rig;
  const int elbow = rig.find("elbow_l"), wrist = rig.find("wrist_l");
  rig.scale[elbow] = 1.5;
  const auto q = posed_joints(rig);
  const auto p = tpl.rig.rest_positions();
  CHECK((q[wrist] - q[elbow]).norm() == doctest::Approx(1.5 * (p[wrist] - p[elbow]).norm()));
  CHECK((q[elbow] - p[elbow]).norm() < 1e-12);
}

TEST_CASE("fit_joints recovers a posed skeleton") {
  const auto& tpl = default_template();
  const JointRig target = random_pose(tpl.rig, 9, 0.25);
  const auto q = posed_joints(target);
  std::map<std::string, Vec3> targets;
  for (int j = 0; j < tpl.rig.size(); ++j) targets[tpl.rig.names[j]] = q[j];
  const JointRig fit = fit_joints(tpl.rig, targets, synthetic_joint_names());
  const auto f = posed_joints(fit);
  double worst = 0;
  for (int j = 0; j < tpl.rig.size(); ++j) worst = std::max(worst, (f[j] - q[j]).norm());
  CHECK(worst < 2e-3);

  targets.erase("wrist_r");
  try {
    fit_joints(tpl.rig, targets, synthetic_joint_names());
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("wrist_r") != std::string::npos);
  }
}

TEST_CASE("refine_garment_boundaries splits ring neighbourhoods") {
  SkinnedTemplate tpl = default_template();
  SkinnedTemplate none = tpl;
  none.boundary_rings.clear();
  const auto same = refine_garment_boundaries(none);
  CHECK(same.mesh.vertices == none.mesh.vertices);
  CHECK(same.mesh.faces == none.mesh.faces);

  SkinnedTemplate one = tpl;
  one.boundary_rings = {{"wrist_l", tpl.boundary_rings.at("wrist_l")}};
  const auto& ring = one.boundary_rings.at("wrist_l");
  const std::set<int> rs(ring.begin(), ring.end());
  std::set<std::pair<int, int>> nbhd_edges;
  for (int f = 0; f < tpl.mesh.num_faces(); ++f) {
    bool touch = false;
    for (int c = 0; c < 3; ++c) touch |= rs.count(tpl.mesh.faces(f, c)) > 0;
    if (!touch) continue;
    for (int c = 0; c < 3; ++c) {
      const int a = tpl.mesh.faces(f, c), b = tpl.mesh.faces(f, (c + 1) % 3);
      nbhd_edges.insert({std::min(a, b), std::max(a, b)});
    }
  }
  const auto refined = refine_garment_boundaries(one);
  CHECK(refined.num_vertices() == tpl.num_vertices() + static_cast<int>(nbhd_edges.size()));
  CHECK_NOTHROW(validate(refined));
  CHECK(euler_characteristic(refined.mesh) == 2);
  CHECK(is_closed_oriented_manifold(refined.mesh.faces));
  CHECK(refined.boundary_rings.at("wrist_l").size() == 2 * ring.size());

  // Every new vertex sits on the midpoint of an original neighbourhood edge.
  for (int i = tpl.num_vertices(); i < refined.num_vertices(); ++i) {
    double best = 1e9;
    for (const auto& [a, b] : nbhd_edges)
      best = std::min(best, (refined.mesh.vertex(i) - 0.5 * (tpl.mesh.vertex(a) + tpl.mesh.vertex(b))).norm());
    CHECK(best < 1e-6);
  }

  const auto all = refine_garment_boundaries(tpl);
  CHECK_NOTHROW(validate(all));
  const auto dir = testing::temp_dir("tpl_refined");
  save_template(all, dir);
  const auto back = load_template(dir);
  CHECK(back.mesh.vertices == all.mesh.vertices);
  CHECK(back.uv == all.uv);
  CHECK(Eigen::MatrixXd(back.skin_weights) == Eigen::MatrixXd(all.skin_weights));
}
