#include <algorithm>
#include <cmath>

#include "tightcap/geometry.h"
#include "tightcap/solver.h"
#include "tightcap/template.h"

namespace tightcap {

int JointRig::find(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

std::vector<Vec3> JointRig::rest_positions() const {
  std::vector<Vec3> p(rest_offsets.size());
  for (int j = 0; j < size(); ++j) p[j] = parents[j] < 0 ? rest_offsets[j] : Vec3(p[parents[j]] + rest_offsets[j]);
  return p;
}

void JointRig::reset_pose() {
  theta.assign(parents.size(), Vec3::Zero());
  scale.assign(parents.size(), 1.0);
  translation.setZero();
}

void validate(const JointRig& rig) {
  const int n = rig.size();
  if (n == 0) throw ValidationError("rig: no joints");
  if (static_cast<int>(rig.rest_offsets.size()) != n || static_cast<int>(rig.theta.size()) != n ||
      static_cast<int>(rig.scale.size()) != n || static_cast<int>(rig.names.size()) != n)
    throw ValidationError("rig: per-joint arrays differ in length");
  int roots = 0;
  for (int j = 0; j < n; ++j) {
    const int p = rig.parents[j];
    if (p == j) throw ValidationError("rig: joint " + std::to_string(j) + " is its own parent");
    if (p < -1 || p >= n) throw ValidationError("rig: joint " + std::to_string(j) + " has invalid parent");
    if (p < 0) ++roots;
    // Walk up; a cycle never reaches the root within n steps.
    int cur = j;
    for (int steps = 0; cur >= 0; ++steps) {
      if (steps > n) throw ValidationError("rig: cyclic parents at joint " + std::to_string(j));
      cur = rig.parents[cur];
    }
    if (p > j) throw ValidationError("rig: joint " + std::to_string(j) + " precedes its parent");
    if (!(rig.scale[j] > 0)) throw ValidationError("rig: non-positive scale at joint " + std::to_string(j));
  }
  if (roots != 1) throw ValidationError("rig: expected a single root, found " + std::to_string(roots));
}

std::vector<Vec3> bone_directions(const JointRig& rig) {
  std::vector<Vec3> d(rig.parents.size(), Vec3::Zero());
  std::vector<int> first_child(rig.parents.size(), -1);
  for (int j = 0; j < rig.size(); ++j) {
    const int p = rig.parents[j];
    if (p >= 0 && first_child[p] < 0) first_child[p] = j;
  }
  for (int j = 0; j < rig.size(); ++j) {
    const Vec3 o = first_child[j] >= 0 ? rig.rest_offsets[first_child[j]] : rig.rest_offsets[j];
    const double len = o.norm();
    d[j] = len > 0 ? Vec3(o / len) : Vec3::UnitZ();
  }
  return d;
}

JointTransforms joint_transforms(const JointRig& rig) {
  const int n = rig.size();
  const auto p = rig.rest_positions();
  const auto dirs = bone_directions(rig);
  JointTransforms t;
  t.rotation.resize(n);
  t.linear.resize(n);
  t.pivot = p;
  t.shift.resize(n);
  t.joint.resize(n);
  for (int j = 0; j < n; ++j) {
    const int par = rig.parents[j];
    const Mat3 local = rotation_from_axis_angle(rig.theta[j]);
    t.rotation[j] = par < 0 ? local : Mat3(t.rotation[par] * local);
    const Mat3 sc = Mat3::Identity() + (rig.scale[j] - 1.0) * dirs[j] * dirs[j].transpose();
    t.linear[j] = t.rotation[j] * sc;
    t.shift[j] = par < 0 ? Vec3::Zero()
                         : Vec3(t.shift[par] + (t.linear[par] - Mat3::Identity()) * (p[j] - p[par]));
    t.joint[j] = p[j] + t.shift[j] + rig.translation;
  }
  return t;
}

std::vector<Vec3> posed_joints(const JointRig& rig) { return joint_transforms(rig).joint; }

Vertices skeletal_warp(const SkinnedTemplate& tpl, const JointRig& rig) {
  if (rig.size() != tpl.rig.size() || rig.parents != tpl.rig.parents)
    throw ArgumentError("skeletal_warp: rig does not match the template joint tree");
  const auto t = joint_transforms(rig);
  std::vector<Mat3> delta(t.linear.size());
  for (size_t j = 0; j < delta.size(); ++j) delta[j] = t.linear[j] - Mat3::Identity();
  const Vertices& rest = tpl.mesh.vertices;
  Vertices out(rest.rows(), 3);
  for (Eigen::Index i = 0; i < rest.rows(); ++i) {
    const Vec3 x = rest.row(i).transpose();
    Vec3 d = Vec3::Zero();
    for (SkinWeights::InnerIterator it(tpl.skin_weights, i); it; ++it) {
      const int j = static_cast<int>(it.col());
      d += it.value() * (delta[j] * (x - t.pivot[j]) + t.shift[j]);
    }
    out.row(i) = (x + d + rig.translation).transpose();
  }
  return out;
}

namespace {

// Inverse right Jacobian of SO(3): d log(R exp(delta)) / d delta at 0.
Mat3 inverse_right_jacobian(const Vec3& w) {
  const double th = w.norm();
  const Mat3 k = skew(w);
  if (th < 1e-6) return Mat3::Identity() + 0.5 * k + (1.0 / 12.0) * k * k;
  const double c = 1.0 / (th * th) - (1.0 + std::cos(th)) / (2.0 * th * std::sin(th));
  return Mat3::Identity() + 0.5 * k + c * k * k;
}

}  // namespace

JointRig fit_joints(const JointRig& rest, const std::map<std::string, Vec3>& targets,
                    const std::vector<std::string>& required, const JointFitOptions& opts) {
  for (const auto& name : required) {
    if (rest.find(name) < 0) throw ArgumentError("fit_joints: rig has no joint '" + name + "'");
    if (!targets.count(name)) throw ArgumentError("fit_joints: missing joint '" + name + "'");
  }
  const int n = rest.size();
  const int np = 4 * n + 3;
  const int s_off = 3 * n, m_off = 4 * n;
  const auto p = rest.rest_positions();
  const auto dirs = bone_directions(rest);

  auto unpack = [&](const Eigen::VectorXd& x) {
    JointRig r = rest;
    for (int j = 0; j < n; ++j) {
      r.theta[j] = x.segment<3>(3 * j);
      r.scale[j] = x(s_off + j);
    }
    r.translation = x.segment<3>(m_off);
    return r;
  };

  std::vector<int> all(np);
  for (int k = 0; k < np; ++k) all[k] = k;

  std::vector<ResidualBlock> blocks;
  for (const auto& [name, target] : targets) {
    const int c = rest.find(name);
    if (c < 0) continue;
    // Path from c up to the root: ancestor joint and the child on the path.
    std::vector<std::pair<int, int>> chain;
    for (int k = c; rest.parents[k] >= 0; k = rest.parents[k]) chain.emplace_back(rest.parents[k], k);
    ResidualBlock b;
    b.kind = "joint";
    b.dim = 3;
    b.params = all;
    b.evaluate = [=, &unpack](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
      const auto t = joint_transforms(unpack(x));
      r = t.joint[c] - target;
      if (jac) {
        jac->setZero(3, np);
        for (const auto& [j, k] : chain) {
          jac->block<3, 3>(0, 3 * j) = -skew(Vec3(t.joint[c] - t.joint[j])) * t.rotation[j];
          jac->col(s_off + j) = t.rotation[j] * dirs[j] * dirs[j].dot(p[k] - p[j]);
        }
        jac->block<3, 3>(0, m_off).setIdentity();
      }
      return true;
    };
    blocks.push_back(std::move(b));
  }
  for (int j = 0; j < n; ++j) {
    ResidualBlock rt;
    rt.kind = "theta_reg";
    rt.dim = 3;
    rt.weight = opts.theta_reg;
    rt.params = {3 * j, 3 * j + 1, 3 * j + 2};
    rt.evaluate = [j](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
      const Vec3 w = x.segment<3>(3 * j);
      r = w;
      if (jac) *jac = inverse_right_jacobian(w);
      return true;
    };
    blocks.push_back(std::move(rt));
    ResidualBlock rs;
    rs.kind = "scale_reg";
    rs.dim = 1;
    rs.weight = opts.scale_reg;
    rs.params = {s_off + j};
    rs.evaluate = [j, s_off](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
      r = Eigen::VectorXd::Constant(1, x(s_off + j) - 1.0);
      if (jac) *jac = Eigen::MatrixXd::Ones(1, 1);
      return true;
    };
    blocks.push_back(std::move(rs));
  }

  Eigen::VectorXd x0(np);
  for (int j = 0; j < n; ++j) {
    x0.segment<3>(3 * j) = rest.theta[j];
    x0(s_off + j) = rest.scale[j];
  }
  x0.segment<3>(m_off) = rest.translation;

  const Retraction plus = [n, s_off](Eigen::VectorXd& x, const Eigen::VectorXd& d) {
    for (int j = 0; j < n; ++j) {
      const Mat3 r = rotation_from_axis_angle(Vec3(x.segment<3>(3 * j))) *
                     rotation_from_axis_angle(Vec3(d.segment<3>(3 * j)));
      x.segment<3>(3 * j) = axis_angle_from_rotation(r);
    }
    x.tail(x.size() - s_off) += d.tail(d.size() - s_off);
  };
  SolveOptions so;
  so.max_outer_iters = opts.iterations;
  const auto res = solve(blocks, x0, so, plus);
  JointRig out = unpack(res.params);
  for (double& s : out.scale) s = std::max(s, 1e-3);
  return out;
}

}  // namespace tightcap
