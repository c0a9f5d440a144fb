#include "tightcap/fixtures.h"

#include <cmath>
#include <random>

#include "tightcap/geometry.h"

namespace tightcap {

SynthSpec FixtureSpec::default_subject() {
  SynthSpec s;
  s.height_scale = 1.02;
  s.hip_width *= 0.97;
  s.waist_width *= 1.04;
  s.chest_width *= 1.04;
  s.trunk_depth *= 1.03;
  s.upper_arm_length *= 1.03;
  s.arm_radius *= 0.96;
  s.leg_radius *= 1.04;
  s.edge_length = 0.015;
  return s;
}

void validate(const FixtureSpec& s) {
  validate(s.body);
  if (!(s.offset >= 0) || !std::isfinite(s.offset)) throw ArgumentError("fixture: offset must be non-negative");
  if (!(s.noise >= 0)) throw ArgumentError("fixture: noise must be non-negative");
  if (s.pose != "T" && s.pose != "A" && s.pose != "W") throw ArgumentError("fixture: unknown pose '" + s.pose + "'");
  if (s.smoothing < 0) throw ArgumentError("fixture: smoothing must be non-negative");
}

JointRig named_pose(const JointRig& rest, const std::string& pose) {
  JointRig r = rest;
  r.reset_pose();
  auto set = [&](const std::string& name, const Vec3& theta) {
    const int j = r.find(name);
    if (j < 0) throw ArgumentError("named_pose: rig has no joint '" + name + "'");
    r.theta[j] = theta;
  };
  const double deg = M_PI / 180.0;
  // Slight leg abduction in every pose keeps the trouser legs apart.
  set("hip_l", Vec3(0, -8 * deg, 0));
  set("hip_r", Vec3(0, 8 * deg, 0));
  if (pose == "T") return r;
  if (pose == "A") {
    set("shoulder_l", Vec3(0, 45 * deg, 0));
    set("shoulder_r", Vec3(0, -45 * deg, 0));
    return r;
  }
  if (pose == "W") {
    set("shoulder_l", Vec3(0, 35 * deg, 0));
    set("shoulder_r", Vec3(0, -35 * deg, 0));
    set("elbow_l", Vec3(0, 0, 40 * deg));
    set("elbow_r", Vec3(0, 0, -40 * deg));
    set("spine", Vec3(0, 0, 12 * deg));
    set("hip_l", Vec3(-20 * deg, -8 * deg, 0));
    set("knee_l", Vec3(30 * deg, 0, 0));
    set("hip_r", Vec3(10 * deg, 8 * deg, 0));
    return r;
  }
  throw ArgumentError("named_pose: unknown pose '" + pose + "'");
}

std::map<std::string, Vec3> joint_map(const JointRig& rig) {
  const auto q = posed_joints(rig);
  std::map<std::string, Vec3> out;
  for (int j = 0; j < rig.size(); ++j) out[rig.names[j]] = q[j];
  return out;
}

Fixture make_fixture(const FixtureSpec& spec) {
  validate(spec);
  const SkinnedTemplate subject = generate_synthetic_template(spec.body);
  Fixture fx;
  fx.pose = named_pose(subject.rig, spec.pose);
  fx.body.vertices = skeletal_warp(subject, fx.pose);
  fx.body.faces = subject.mesh.faces;
  fx.body = with_normals(fx.body);
  fx.body_garment = subject.garment_prior;
  fx.joints = joint_map(fx.pose);

  const int nv = fx.body.num_vertices();
  const auto adj = vertex_adjacency(nv, fx.body.faces);
  std::vector<double> g(static_cast<size_t>(nv));
  for (int i = 0; i < nv; ++i) g[i] = fx.body_garment[i] != static_cast<int>(Garment::body);
  Vertices n = fx.body.normals;
  // Soften the cuffs and the normal field so the shell stays smooth.
  for (int pass = 0; pass < spec.smoothing; ++pass) {
    std::vector<double> g2(g);
    Vertices n2 = n;
    for (int i = 0; i < nv; ++i) {
      if (adj[i].empty()) continue;
      double s = 0;
      Vec3 m = Vec3::Zero();
      for (int j : adj[i]) {
        s += g[j];
        m += n.row(j).transpose();
      }
      g2[i] = 0.5 * g[i] + 0.5 * s / static_cast<double>(adj[i].size());
      n2.row(i) = (0.5 * n.row(i).transpose() + 0.5 * m / static_cast<double>(adj[i].size())).normalized().transpose();
    }
    g.swap(g2);
    n = n2;
  }
  // Fully clothed interior: the indicator only ramps across the cuffs.
  for (int i = 0; i < nv; ++i)
    if (fx.body_garment[i] != static_cast<int>(Garment::body)) g[i] = std::max(g[i], smoothstep(0.0, 0.5, g[i]));

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> jitter(0.0, 1.0);
  fx.gap.resize(static_cast<size_t>(nv));
  fx.scan.faces = fx.body.faces;
  fx.scan.vertices.resize(nv, 3);
  fx.scan.colors.resize(nv, 3);
  for (int i = 0; i < nv; ++i) {
    fx.gap[i] = spec.offset * g[i];
    const double e = spec.noise > 0 ? spec.noise * jitter(rng) : 0.0;
    fx.scan.vertices.row(i) = fx.body.vertices.row(i) + (fx.gap[i] + e) * n.row(i);
    const int lab = fx.body_garment[i];
    fx.scan.colors.row(i) = lab == 1 ? Vec3(0.2, 0.3, 0.8).transpose()
                            : lab == 2 ? Vec3(0.3, 0.25, 0.2).transpose()
                                       : Vec3(0.9, 0.75, 0.65).transpose();
  }
  fx.scan = with_normals(fx.scan);
  return fx;
}

}  // namespace tightcap
