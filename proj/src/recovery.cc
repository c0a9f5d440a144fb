#include "tightcap/recovery.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace tightcap {

namespace {

void check_rows(const char* op, Eigen::Index expected, Eigen::Index got, const char* what) {
  if (expected != got)
    throw ArgumentError(std::string(op) + ": " + what + " has " + std::to_string(got) + " rows, expected " +
                        std::to_string(expected));
}

ResidualBlock offset_block(const char* kind, int i, const Vec3& target, double weight) {
  ResidualBlock b;
  b.kind = kind;
  b.params = {3 * i, 3 * i + 1, 3 * i + 2};
  b.dim = 3;
  b.weight = weight;
  b.evaluate = [i, target](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* j) {
    r = x.segment<3>(3 * i) - target;
    if (j) *j = Eigen::MatrixXd::Identity(3, 3);
    return true;
  };
  return b;
}

std::vector<ResidualBlock> body_blocks(const Vertices& m_v, const Faces& faces, const TightnessField& field,
                                       const Vertices& m_warp, const RecoveryConfig& cfg) {
  const int n = static_cast<int>(m_v.rows());
  std::vector<ResidualBlock> blocks;
  const Vertices target = recover_direct(m_v, field);
  for (int i = 0; i < n; ++i)
    if (cfg.lambda_fit > 0) blocks.push_back(recovery_fit_block(i, target.row(i).transpose(), cfg.lambda_fit));
  if (cfg.lambda_smooth > 0) {
    const double sigma = cfg.smoothing_sigma > 0 ? cfg.smoothing_sigma : mean_edge_length(m_v, faces);
    const SmoothingMatrix k = gaussian_smoothing(m_v, faces, cfg.smoothing_rings, sigma);
    for (int i = 0; i < n; ++i) blocks.push_back(recovery_smooth_block(i, k, cfg.lambda_smooth));
  }
  if (cfg.lambda_reg > 0)
    for (int i = 0; i < n; ++i) blocks.push_back(recovery_reg_block(i, m_warp.row(i).transpose(), cfg.lambda_reg));
  return blocks;
}

Eigen::VectorXd flatten(const Vertices& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()); }

Vertices unflatten(const Eigen::VectorXd& x) {
  return Eigen::Map<const Vertices>(x.data(), x.size() / 3, 3);
}

}  // namespace

void validate(const RecoveryConfig& cfg) {
  if (cfg.lambda_fit < 0 || cfg.lambda_smooth < 0 || cfg.lambda_reg < 0)
    throw ArgumentError("recovery: weights must be non-negative");
  if (cfg.lambda_fit == 0 && cfg.lambda_smooth == 0 && cfg.lambda_reg == 0)
    throw ArgumentError("recovery: at least one weight must be positive");
  if (cfg.smoothing_rings < 1) throw ArgumentError("recovery: smoothing_rings must be at least 1");
  if (cfg.smoothing_sigma < 0) throw ArgumentError("recovery: smoothing_sigma must be non-negative");
  if (cfg.max_outer_iters < 1 || cfg.cg_max_iters < 1) throw ArgumentError("recovery: bad solver limits");
}

Vertices recover_direct(const Vertices& m_v, const TightnessField& field) {
  check_rows("recover_direct", m_v.rows(), field.vectors.rows(), "field");
  return m_v + field.vectors;
}

SmoothingMatrix gaussian_smoothing(const Vertices& v, const Faces& f, int rings, double sigma) {
  if (!(sigma > 0)) throw ArgumentError("gaussian_smoothing: sigma must be positive");
  const int n = static_cast<int>(v.rows());
  const auto hood = ring_neighborhoods(vertex_adjacency(n, f), rings);
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < n; ++i) {
    std::vector<int> ids = hood[i];
    ids.push_back(i);
    std::sort(ids.begin(), ids.end());
    double sum = 0;
    std::vector<double> w;
    for (int j : ids) {
      const double d2 = (v.row(j) - v.row(i)).squaredNorm();
      w.push_back(std::exp(-d2 / (2 * sigma * sigma)));
      sum += w.back();
    }
    for (size_t k = 0; k < ids.size(); ++k) trip.emplace_back(i, ids[k], w[k] / sum);
  }
  SmoothingMatrix k(n, n);
  k.setFromTriplets(trip.begin(), trip.end());
  return k;
}

ResidualBlock recovery_fit_block(int i, const Vec3& target, double weight) {
  return offset_block("fit", i, target, weight);
}

ResidualBlock recovery_reg_block(int i, const Vec3& warp, double weight) { return offset_block("reg", i, warp, weight); }

ResidualBlock recovery_smooth_block(int i, const SmoothingMatrix& kernel, double weight) {
  std::vector<int> ids;
  std::vector<double> coef;
  for (SmoothingMatrix::InnerIterator it(kernel, i); it; ++it) {
    ids.push_back(static_cast<int>(it.col()));
    coef.push_back((it.col() == i ? 1.0 : 0.0) - it.value());
  }
  ResidualBlock b;
  b.kind = "smooth";
  b.dim = 3;
  b.weight = weight;
  for (int j : ids)
    for (int c = 0; c < 3; ++c) b.params.push_back(3 * j + c);
  b.evaluate = [ids, coef](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    r = Eigen::Vector3d::Zero();
    for (size_t k = 0; k < ids.size(); ++k) r += coef[k] * x.segment<3>(3 * ids[k]);
    if (jac) {
      jac->setZero(3, static_cast<Eigen::Index>(3 * ids.size()));
      for (size_t k = 0; k < ids.size(); ++k)
        jac->block<3, 3>(0, static_cast<Eigen::Index>(3 * k)) = coef[k] * Eigen::Matrix3d::Identity();
    }
    return true;
  };
  return b;
}

RecoveryResult recover_shape(const Vertices& m_v, const Faces& faces, const TightnessField& field,
                             const Vertices& m_warp, const RecoveryConfig& cfg) {
  validate(cfg);
  check_rows("recover_shape", m_v.rows(), field.vectors.rows(), "field");
  check_rows("recover_shape", m_v.rows(), m_warp.rows(), "M_warp");
  const auto t0 = std::chrono::steady_clock::now();
  const auto blocks = body_blocks(m_v, faces, field, m_warp, cfg);
  SolveOptions opts;
  // The problem is linear: undamped Gauss-Newton with a tight inner solve.
  opts.lm_initial = 0;
  opts.max_outer_iters = cfg.max_outer_iters;
  opts.cg_max_iters = cfg.cg_max_iters;
  opts.cg_tolerance = cfg.cg_tolerance;
  opts.convergence_tol = 1e-15;
  const SolveResult s = solve(blocks, flatten(recover_direct(m_v, field)), opts);
  RecoveryResult out;
  out.vertices = unflatten(s.params);
  out.energies = s.cost_history;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

double body_energy(const Vertices& m, const Vertices& m_v, const Faces& faces, const TightnessField& field,
                   const Vertices& m_warp, const RecoveryConfig& cfg) {
  validate(cfg);
  check_rows("body_energy", m_v.rows(), m.rows(), "candidate");
  return evaluate_cost(body_blocks(m_v, faces, field, m_warp, cfg), flatten(m));
}

Eigen::MatrixXd garment_unaries(const Eigen::MatrixXd& p, double eps) {
  if (p.cols() != 2) throw ArgumentError("garment_unaries: expected columns upper, lower");
  if (!(eps > 0 && eps < 1)) throw ArgumentError("garment_unaries: epsilon must lie in (0, 1)");
  constexpr double kTol = 1e-6;
  Eigen::MatrixXd u(p.rows(), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double up = p(i, 0), lo = p(i, 1);
    if (!std::isfinite(up) || !std::isfinite(lo) || up < -kTol || lo < -kTol || up + lo > 1 + kTol)
      throw ArgumentError("garment_unaries: invalid probabilities at vertex " + std::to_string(i));
    const double body = 1 - up - lo;
    u(i, 0) = -std::log(std::clamp(body, eps, 1.0));
    u(i, 1) = -std::log(std::clamp(up, eps, 1.0));
    u(i, 2) = -std::log(std::clamp(lo, eps, 1.0));
  }
  return u;
}

double mrf_energy(const Eigen::MatrixXd& unary, const std::vector<std::pair<int, int>>& edges, double weight,
                  const std::vector<int>& labels) {
  double e = 0;
  for (Eigen::Index i = 0; i < unary.rows(); ++i) e += unary(i, labels[i]);
  for (const auto& [a, b] : edges)
    if (labels[a] != labels[b]) e += weight;
  return e;
}

SegmentationResult icm_segment(const Eigen::MatrixXd& unary, const std::vector<std::pair<int, int>>& edges,
                               double weight, int max_sweeps) {
  if (!(weight >= 0)) throw ArgumentError("icm_segment: pairwise weight must be non-negative");
  if (unary.cols() < 1) throw ArgumentError("icm_segment: no labels");
  const int n = static_cast<int>(unary.rows()), nl = static_cast<int>(unary.cols());
  std::vector<std::vector<int>> adj(static_cast<size_t>(n));
  for (const auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n || a == b) throw ArgumentError("icm_segment: bad edge");
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  SegmentationResult res;
  res.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) unary.row(i).minCoeff(&res.labels[i]);
  res.energies.push_back(mrf_energy(unary, edges, weight, res.labels));
  std::vector<double> cost(static_cast<size_t>(nl));
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      for (int l = 0; l < nl; ++l) cost[l] = unary(i, l);
      for (int j : adj[i])
        for (int l = 0; l < nl; ++l)
          if (res.labels[j] != l) cost[l] += weight;
      int best = res.labels[i];
      for (int l = 0; l < nl; ++l)
        if (cost[l] < cost[best]) best = l;
      if (best != res.labels[i]) {
        res.labels[i] = best;
        changed = true;
      }
    }
    ++res.sweeps;
    const double e = mrf_energy(unary, edges, weight, res.labels);
    if (e > res.energies.back() + 1e-9 * std::max(1.0, std::abs(e)))
      throw Error("icm_segment: energy increased in sweep " + std::to_string(sweep));
    res.energies.push_back(e);
    if (!changed) break;
  }
  return res;
}

SegmentationResult segment_clothing(const Faces& faces, const Eigen::MatrixXd& probabilities, double pairwise_weight,
                                    int max_sweeps) {
  if (faces.size() > 0 && faces.maxCoeff() >= probabilities.rows())
    throw ArgumentError("segment_clothing: faces reference vertices beyond the probabilities");
  return icm_segment(garment_unaries(probabilities), unique_edges(faces), pairwise_weight, max_sweeps);
}

std::vector<Mat3> surface_frames(const Vertices& v, const SkinnedTemplate& tpl) {
  const int n = static_cast<int>(v.rows());
  check_rows("surface_frames", tpl.num_vertices(), n, "vertices");
  TriMesh m;
  m.vertices = v;
  m.faces = tpl.mesh.faces;
  const Vertices normals = vertex_normals(m).normals;
  std::vector<Vec3> tangent(static_cast<size_t>(n), Vec3::Zero());
  for (int f = 0; f < m.num_faces(); ++f) {
    if (tpl.face_chart[f] < 0) continue;
    const int a = m.faces(f, 0), b = m.faces(f, 1), c = m.faces(f, 2);
    const Vec3 e1 = m.vertex(b) - m.vertex(a), e2 = m.vertex(c) - m.vertex(a);
    const Vec2 d1(tpl.face_uv(f, 2) - tpl.face_uv(f, 0), tpl.face_uv(f, 3) - tpl.face_uv(f, 1));
    const Vec2 d2(tpl.face_uv(f, 4) - tpl.face_uv(f, 0), tpl.face_uv(f, 5) - tpl.face_uv(f, 1));
    const double det = d1.x() * d2.y() - d2.x() * d1.y();
    if (std::abs(det) < 1e-20) continue;
    // dp/du, weighted by the face's uv area through the determinant sign.
    const Vec3 t = (e1 * d2.y() - e2 * d1.y()) * (det > 0 ? 1.0 : -1.0);
    for (int k : {a, b, c}) tangent[k] += t;
  }
  std::vector<Mat3> frames(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Vec3 nrm = normals.row(i).transpose();
    if (nrm.norm() < 1e-12) nrm = Vec3::UnitZ();
    Vec3 t = tangent[i] - tangent[i].dot(nrm) * nrm;
    if (t.norm() < 1e-12) {
      t = std::abs(nrm.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
      t = (t - t.dot(nrm) * nrm).eval();
    }
    t.normalize();
    frames[i].col(0) = t;
    frames[i].col(1) = nrm.cross(t);
    frames[i].col(2) = nrm;
  }
  return frames;
}

RetargetResult retarget(const std::vector<int>& labels, const Vertices& m_v, const TightnessField& field,
                        const Vertices& target_body, const SkinnedTemplate& tpl) {
  const int n = tpl.num_vertices();
  check_rows("retarget", n, m_v.rows(), "M_V");
  check_rows("retarget", n, field.vectors.rows(), "field");
  check_rows("retarget", n, target_body.rows(), "target body");
  check_rows("retarget", n, static_cast<Eigen::Index>(labels.size()), "labels");
  const Vertices source = recover_direct(m_v, field);
  const auto fs = surface_frames(source, tpl);
  const auto ft = surface_frames(target_body, tpl);
  TriMesh full;
  full.vertices.resize(n, 3);
  full.faces = tpl.mesh.faces;
  std::vector<bool> keep(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    keep[i] = labels[i] != static_cast<int>(Garment::body);
    const Vec3 t = field.vectors.row(i).transpose();
    // Identical frames leave the offset untouched bit for bit.
    const Vec3 moved = fs[i] == ft[i] ? t : Vec3(ft[i] * (fs[i].transpose() * t));
    full.vertices.row(i) = target_body.row(i) - moved.transpose();
  }
  RetargetResult out;
  std::vector<int> old_to_new;
  out.garment = submesh(full, keep, &old_to_new);
  out.template_ids.assign(static_cast<size_t>(out.garment.num_vertices()), -1);
  for (int i = 0; i < n; ++i)
    if (old_to_new[i] >= 0) out.template_ids[old_to_new[i]] = i;
  return out;
}

}  // namespace tightcap
