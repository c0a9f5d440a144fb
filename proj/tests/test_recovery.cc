#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.h"
#include "test_util.h"
#include "tightcap/metrics.h"
#include "tightcap/recovery.h"

using namespace tightcap;

namespace {

const SkinnedTemplate& default_template() {
  static const SkinnedTemplate tpl = generate_synthetic_template(SynthSpec{});
  return tpl;
}

TriMesh sphere(double r, int subdivisions = 5) { return with_normals(make_icosphere(subdivisions, r)); }

TriMesh with_vertices(const TriMesh& m, const Vertices& v) {
  TriMesh out;
  out.vertices = v;
  out.faces = m.faces;
  return out;
}

// Standard deviation of the distance to the origin.
double radial_roughness(const Vertices& v) {
  const Eigen::VectorXd r = v.rowwise().norm();
  return std::sqrt((r.array() - r.mean()).square().mean());
}

}  // namespace

TEST_CASE("recover_direct adds the field") {
  const TriMesh s = sphere(0.3, 3);
  TightnessField zero;
  zero.vectors.setZero(s.num_vertices(), 3);
  CHECK(recover_direct(s.vertices, zero) == s.vertices);
  const Vertices body = 0.9 * s.vertices;
  CHECK(recover_direct(s.vertices, naive_tightness(s.vertices, body)) == s.vertices + (body - s.vertices));
  CHECK((recover_direct(s.vertices, naive_tightness(s.vertices, body)) - body).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(recover_direct(s.vertices.topRows(5), zero), ArgumentError);
}

TEST_CASE("gaussian smoothing rows are normalized") {
  const TriMesh s = sphere(0.3, 3);
  const SmoothingMatrix k = gaussian_smoothing(s.vertices, s.faces, 2, mean_edge_length(s.vertices, s.faces));
  const Eigen::VectorXd sums = k * Eigen::VectorXd::Ones(s.num_vertices());
  CHECK((sums.array() - 1).abs().maxCoeff() < 1e-12);
  CHECK(k.coeff(0, 0) > 0);
  CHECK(k.nonZeros() > 10 * s.num_vertices());
  CHECK_THROWS_AS(gaussian_smoothing(s.vertices, s.faces, 2, 0), ArgumentError);
}

TEST_CASE("recovery residual Jacobians agree with central differences") {
  const TriMesh s = sphere(0.3, 2);
  const SmoothingMatrix k = gaussian_smoothing(s.vertices, s.faces, 2, mean_edge_length(s.vertices, s.faces));
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd x(3 * s.num_vertices());
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = g(rng);
    const int v = trial * 7 % s.num_vertices();
    CHECK(check_gradient(recovery_fit_block(v, Vec3(0.1, 0.2, 0.3), 1.0), x, 1e-6) < 1e-4);
    CHECK(check_gradient(recovery_reg_block(v, Vec3(-0.1, 0, 0.3), 0.05), x, 1e-6) < 1e-4);
    CHECK(check_gradient(recovery_smooth_block(v, k, 0.1), x, 1e-6) < 1e-4);
  }
}

TEST_CASE("recover_shape without smoothing and regularizer is the direct recovery") {
  const TriMesh c = sphere(0.3, 4);
  const TightnessField f = naive_tightness(c.vertices, 0.93 * c.vertices);
  RecoveryConfig cfg;
  cfg.lambda_smooth = 0;
  cfg.lambda_reg = 0;
  const RecoveryResult r = recover_shape(c.vertices, c.faces, f, c.vertices, cfg);
  CHECK((r.vertices - recover_direct(c.vertices, f)).cwiseAbs().maxCoeff() < 1e-10);
  // Fixed point: the output is the optimum for the layer it maps back to.
  const RecoveryResult again = recover_shape(r.vertices - f.vectors, c.faces, f, c.vertices, cfg);
  CHECK((again.vertices - r.vertices).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("recover_shape on concentric spheres") {
  const double r = 0.3;
  for (double delta : {0.01, 0.03, 0.05}) {
    CAPTURE(delta);
    const TriMesh clothed = sphere(r), body = sphere(r - delta);
    const TightnessField f = bidirectional_tightness(clothed, body, body, clothed, TightnessConfig{});
    const RecoveryConfig cfg;
    const RecoveryResult out = recover_shape(clothed.vertices, clothed.faces, f, clothed.vertices, cfg);
    const double err = symmetric_mean_distance(with_vertices(clothed, out.vertices), body);
    CHECK(err < 0.05 * delta);
    const double e_out = body_energy(out.vertices, clothed.vertices, clothed.faces, f, clothed.vertices, cfg);
    const double e_start =
        body_energy(recover_direct(clothed.vertices, f), clothed.vertices, clothed.faces, f, clothed.vertices, cfg);
    CHECK(e_out <= e_start);
    CHECK(out.energies.front() == doctest::Approx(e_start));
    for (size_t k = 1; k < out.energies.size(); ++k) CHECK(out.energies[k] <= out.energies[k - 1]);
  }
}

TEST_CASE("optimized recovery is smoother than direct on a noisy field") {
  const TriMesh clothed = sphere(0.3, 4);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.002, 0.002);
  TightnessField f;
  f.vectors.resize(clothed.num_vertices(), 3);
  for (int i = 0; i < clothed.num_vertices(); ++i) f.vectors.row(i) = -(0.03 + u(rng)) * clothed.normals.row(i);
  const Vertices direct = recover_direct(clothed.vertices, f);
  const RecoveryResult opt = recover_shape(clothed.vertices, clothed.faces, f, clothed.vertices, RecoveryConfig{});
  CHECK(radial_roughness(direct) > radial_roughness(opt.vertices));
}

TEST_CASE("recover_shape input errors") {
  const TriMesh c = sphere(0.3, 2);
  const TightnessField f = naive_tightness(c.vertices, c.vertices);
  RecoveryConfig cfg;
  cfg.lambda_fit = cfg.lambda_smooth = cfg.lambda_reg = 0;
  CHECK_THROWS_AS(recover_shape(c.vertices, c.faces, f, c.vertices, cfg), ArgumentError);
  cfg = {};
  cfg.lambda_reg = -1;
  CHECK_THROWS_AS(recover_shape(c.vertices, c.faces, f, c.vertices, cfg), ArgumentError);
  CHECK_THROWS_AS(recover_shape(c.vertices, c.faces, f, c.vertices.topRows(3), RecoveryConfig{}), ArgumentError);
}

TEST_CASE("garment unaries and probability checks") {
  Eigen::MatrixXd p(3, 2);
  p << 0.2, 0.3, 1.0, 0.0, 0.0, 0.0;
  const Eigen::MatrixXd u = garment_unaries(p);
  CHECK(u(0, 0) == doctest::Approx(-std::log(0.5)));
  CHECK(u(0, 1) == doctest::Approx(-std::log(0.2)));
  CHECK(u(1, 0) == doctest::Approx(-std::log(1e-6)));
  CHECK(u(2, 0) == 0.0);
  Eigen::MatrixXd bad = p;
  bad(0, 0) = 0.9;
  CHECK_THROWS_AS(garment_unaries(bad), ArgumentError);
  bad = p;
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(garment_unaries(bad), ArgumentError);
  bad = p;
  bad(2, 0) = -0.5;
  CHECK_THROWS_AS(garment_unaries(bad), ArgumentError);
}

TEST_CASE("ICM without coupling is the unary argmax") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 3);
  Eigen::MatrixXd un(50, 3);
  for (Eigen::Index i = 0; i < un.size(); ++i) un.data()[i] = u(rng);
  const auto res = icm_segment(un, testing::chain_edges(50), 0.0);
  for (int i = 0; i < 50; ++i) {
    int best = 0;
    un.row(i).minCoeff(&best);
    CHECK(res.labels[i] == best);
  }
}

TEST_CASE("ICM against exhaustive enumeration on chains") {
  std::mt19937_64 rng(1);
  const auto e = testing::chain_edges(10);
  const double w = 0.1;
  int optimal = 0;
  for (int t = 0; t < 100; ++t) {
    const Eigen::MatrixXd un = testing::random_binary_unaries(rng, 10);
    const auto res = icm_segment(un, e, w);
    const double best = testing::enumerate_minimum(un, e, w);
    CHECK(res.energies.back() >= best - 1e-12);
    if (std::abs(res.energies.back() - best) <= 1e-12) ++optimal;
    for (size_t k = 1; k < res.energies.size(); ++k) CHECK(res.energies[k] <= res.energies[k - 1]);
  }
  CHECK(optimal >= 95);
}

TEST_CASE("ICM is equivariant under a label swap") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 2);
  Eigen::MatrixXd un(30, 2);
  for (Eigen::Index i = 0; i < un.size(); ++i) un.data()[i] = u(rng);
  Eigen::MatrixXd swapped(30, 2);
  swapped.col(0) = un.col(1);
  swapped.col(1) = un.col(0);
  const auto e = testing::chain_edges(30);
  const auto a = icm_segment(un, e, 0.4), b = icm_segment(swapped, e, 0.4);
  for (int i = 0; i < 30; ++i) CHECK(a.labels[i] == 1 - b.labels[i]);
}

TEST_CASE("segment_clothing labels a noisy patch as one component") {
  const auto& tpl = default_template();
  const int n = tpl.num_vertices();
  const auto adj = vertex_adjacency(n, tpl.mesh.faces);
  // Patch: 6 rings around a chest vertex.
  int seed = 0;
  const Vec3 chest(0.0, -0.12, 1.3);
  for (int i = 0; i < n; ++i)
    if ((tpl.mesh.vertex(i) - chest).norm() < (tpl.mesh.vertex(seed) - chest).norm()) seed = i;
  std::vector<bool> patch(static_cast<size_t>(n), false);
  patch[seed] = true;
  for (int j : ring_neighborhoods(adj, 6)[seed]) patch[j] = true;
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, 2);
  for (int i = 0; i < n; ++i)
    if (patch[i]) p(i, 0) = 0.9;
  // Single-vertex islands: dropouts inside, a spurious hit outside.
  int shown = 0;
  for (int i = 0; i < n && shown < 4; ++i)
    if (patch[i] && i != seed && i % 7 == 0) {
      p(i, 0) = 0.3;
      ++shown;
    }
  int outside = -1;
  for (int i = 0; i < n && outside < 0; ++i)
    if (!patch[i] && tpl.mesh.vertex(i).z() < 0.5) outside = i;
  p(outside, 0) = 0.9;
  const auto res = segment_clothing(tpl.mesh.faces, p, 1.0);
  for (int i = 0; i < n; ++i)
    CHECK(res.labels[i] == (patch[i] ? static_cast<int>(Garment::upper) : static_cast<int>(Garment::body)));
  for (size_t k = 1; k < res.energies.size(); ++k) CHECK(res.energies[k] <= res.energies[k - 1]);
  CHECK(res.sweeps <= 50);
}

TEST_CASE("retarget keeps the garment on the source body and follows a scaled body") {
  const auto& tpl = default_template();
  const int n = tpl.num_vertices();
  const TriMesh clothed = with_normals(tpl.mesh);
  std::vector<int> labels(static_cast<size_t>(n));
  TightnessField f;
  f.vectors.setZero(n, 3);
  for (int i = 0; i < n; ++i) {
    labels[i] = tpl.garment_prior[i] == static_cast<int>(Garment::upper) ? static_cast<int>(Garment::upper)
                                                                         : static_cast<int>(Garment::body);
    if (labels[i] != static_cast<int>(Garment::body)) f.vectors.row(i) = -0.02 * clothed.normals.row(i);
  }
  const Vertices body = recover_direct(clothed.vertices, f);
  const RetargetResult same = retarget(labels, clothed.vertices, f, body, tpl);
  REQUIRE(same.garment.num_vertices() > 0);
  double worst = 0;
  for (int k = 0; k < same.garment.num_vertices(); ++k)
    worst = std::max(worst, (same.garment.vertex(k) - clothed.vertex(same.template_ids[k])).norm());
  CHECK(worst < 1e-12);

  // Faces kept are exactly those with three garment vertices.
  int expected = 0;
  for (int fi = 0; fi < tpl.mesh.num_faces(); ++fi) {
    bool all = true;
    for (int c = 0; c < 3; ++c) all = all && labels[tpl.mesh.faces(fi, c)] != static_cast<int>(Garment::body);
    expected += all;
  }
  CHECK(same.garment.num_faces() == expected);
  for (int fi = 0; fi < same.garment.num_faces(); ++fi)
    for (int c = 0; c < 3; ++c)
      CHECK(labels[same.template_ids[same.garment.faces(fi, c)]] != static_cast<int>(Garment::body));

  const Vec3 centroid = body.colwise().mean().transpose();
  Vertices scaled = body;
  for (int i = 0; i < n; ++i) scaled.row(i) = (centroid + 1.1 * (body.row(i).transpose() - centroid)).transpose();
  const RetargetResult big = retarget(labels, clothed.vertices, f, scaled, tpl);
  const Vec3 g0 = same.garment.vertices.colwise().mean().transpose();
  const Vec3 g1 = big.garment.vertices.colwise().mean().transpose();
  const Vec3 c1 = scaled.colwise().mean().transpose();
  CHECK((g1 - c1).norm() / (g0 - centroid).norm() == doctest::Approx(1.1).epsilon(0.02));

  CHECK_THROWS_AS(retarget(labels, clothed.vertices, f, body.topRows(4), tpl), ArgumentError);
}
