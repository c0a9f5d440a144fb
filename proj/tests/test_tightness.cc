#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "oracles.h"
#include "test_util.h"
#include "tightcap/fixtures.h"
#include "tightcap/geometry.h"
#include "tightcap/tightness.h"

using namespace tightcap;
using testing::random_sphere_pair;
using testing::tightness_oracle;

namespace {

const SkinnedTemplate& default_template() {
  static const SkinnedTemplate tpl = generate_synthetic_template(SynthSpec{});
  return tpl;
}

TriMesh sphere(double r, int subdivisions = 5) { return with_normals(make_icosphere(subdivisions, r)); }

}  // namespace

TEST_CASE("naive tightness is the vertex difference") {
  const TriMesh s = sphere(0.3, 3);
  CHECK(naive_tightness(s.vertices, s.vertices).vectors.isZero(0));
  const double delta = 0.02;
  const Vertices body = s.vertices - delta * s.normals;
  const TightnessField f = naive_tightness(s.vertices, body);
  for (int i = 0; i < s.num_vertices(); ++i) {
    CHECK(f.vectors.row(i).norm() == doctest::Approx(delta).epsilon(1e-9));
    CHECK(f.vectors.row(i).dot(s.normals.row(i)) < 0);
  }
  CHECK((s.vertices + f.vectors) == body);
  CHECK_THROWS_AS(naive_tightness(s.vertices, body.topRows(3)), ArgumentError);
}

TEST_CASE("angular Gaussian weight values and shape") {
  const Vec3 z = Vec3::UnitZ();
  CHECK(angular_gaussian_weight(z, z, 15) == 1.0);
  const double s = 15.0 * M_PI / 180.0;
  CHECK(angular_gaussian_weight(z, Vec3(std::sin(s), 0, std::cos(s)), 15) == doctest::Approx(std::exp(-0.5)));
  CHECK(angular_gaussian_weight(z, Vec3::UnitX(), 15) == doctest::Approx(1.52e-8).epsilon(0.01));
  CHECK_THROWS_AS(angular_gaussian_weight(2 * z, z, 15), ArgumentError);
  CHECK_NOTHROW(angular_gaussian_weight(1.0005 * z, z, 15));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int k = 0; k < 50; ++k) {
    const Vec3 a = Vec3(g(rng), g(rng), g(rng)).normalized(), b = Vec3(g(rng), g(rng), g(rng)).normalized();
    CHECK(angular_gaussian_weight(a, b, 15) == angular_gaussian_weight(b, a, 15));
  }
  double prev = 2;
  for (int deg = 0; deg <= 180; deg += 5) {
    const double t = deg * M_PI / 180.0;
    const double w = angular_gaussian_weight(z, Vec3(std::sin(t), 0, std::cos(t)), 60);
    CHECK(w < prev);
    prev = w;
  }
}

TEST_CASE("one-to-many equals the exhaustive oracle exactly") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    CAPTURE(seed);
    const auto [clothed, body] = random_sphere_pair(seed);
    REQUIRE(clothed.num_vertices() <= 2000);
    const TightnessConfig cfg = testing::oracle_config(seed);
    const TightnessField a = one_to_many_tightness(clothed.vertices, clothed.normals, body, cfg);
    const TightnessField b = tightness_oracle(clothed.vertices, clothed.normals, body, cfg);
    CHECK(a.vectors == b.vectors);
    CHECK(a.fallback_count() == 0);
  }
}

TEST_CASE("concentric spheres give the gap, bidirectional is tighter") {
  const double r = 0.3;
  for (double delta : {0.01, 0.03, 0.05}) {
    CAPTURE(delta);
    const TriMesh clothed = sphere(r), body = sphere(r - delta);
    TightnessConfig cfg;
    const TightnessField f = one_to_many_tightness(clothed.vertices, clothed.normals, body, cfg);
    for (int i = 0; i < clothed.num_vertices(); ++i) {
      CHECK(f.vectors.row(i).norm() == doctest::Approx(delta).epsilon(0.02));
      CHECK(-f.vectors.row(i).normalized().dot(clothed.normals.row(i)) > 0.97);
    }
    const TightnessField bwd = one_to_many_tightness(body.vertices, body.normals, clothed, cfg);
    // Body and clothed templates share the icosphere topology.
    const TightnessField bi = bidirectional_tightness(clothed, body, body, clothed, cfg);
    CHECK(bi.vectors == 0.5 * (f.vectors - bwd.vectors));
    double err_f = 0, err_b = 0, err_bi = 0;
    for (int i = 0; i < clothed.num_vertices(); ++i) {
      CHECK(bi.vectors.row(i).norm() == doctest::Approx(delta).epsilon(0.01));
      err_f += std::abs(f.vectors.row(i).norm() - delta);
      err_b += std::abs(bwd.vectors.row(i).norm() - delta);
      err_bi += std::abs(bi.vectors.row(i).norm() - delta);
    }
    CHECK(err_bi < err_f);
    CHECK(err_bi < err_b);
  }
}

TEST_CASE("zero gap inputs give zero fields") {
  const TriMesh s = sphere(0.3, 4);
  const TightnessConfig cfg;
  const TightnessField f = one_to_many_tightness(s.vertices, s.normals, s, cfg);
  CHECK(f.vectors.rowwise().norm().maxCoeff() < 1e-6);
  CHECK(bidirectional_tightness(s, s, s, s, cfg).vectors.rowwise().norm().maxCoeff() < 1e-6);
}

TEST_CASE("tightness magnitudes are rigid-motion invariant") {
  const auto [clothed, body] = random_sphere_pair(7);
  const Mat3 rot = rotation_from_axis_angle(Vec3(0.3, -1.1, 0.7));
  const Vec3 t(0.4, -2.0, 1.3);
  auto move = [&](TriMesh m) {
    for (int i = 0; i < m.num_vertices(); ++i) {
      m.vertices.row(i) = (rot * m.vertex(i) + t).transpose();
      m.normals.row(i) = (rot * Vec3(m.normals.row(i).transpose())).transpose();
    }
    return m;
  };
  const TriMesh c2 = move(clothed), b2 = move(body);
  const TightnessConfig cfg;
  const TightnessField a = one_to_many_tightness(clothed.vertices, clothed.normals, body, cfg);
  const TightnessField b = one_to_many_tightness(c2.vertices, c2.normals, b2, cfg);
  for (int i = 0; i < a.size(); ++i) {
    CHECK(std::abs(a.vectors.row(i).norm() - b.vectors.row(i).norm()) < 1e-9);
    CHECK((rot * Vec3(a.vectors.row(i).transpose()) - Vec3(b.vectors.row(i).transpose())).norm() < 1e-9);
  }
}

TEST_CASE("tightness config and input errors") {
  const TriMesh s = sphere(0.3, 2);
  TightnessConfig cfg;
  cfg.knn_k = 0;
  CHECK_THROWS_AS(one_to_many_tightness(s.vertices, s.normals, s, cfg), ArgumentError);
  cfg = {};
  cfg.cone_aperture_deg = 400;
  CHECK_THROWS_AS(validate(cfg), ArgumentError);
  cfg = {};
  TriMesh bare = s;
  bare.normals.resize(0, 3);
  CHECK_THROWS_AS(one_to_many_tightness(s.vertices, s.normals, bare, cfg), ArgumentError);
  CHECK_THROWS_AS(one_to_many_tightness(s.vertices, s.normals.topRows(4), s, cfg), ArgumentError);
}

TEST_CASE("tightness GI: zero field, masks, round trip") {
  const auto& tpl = default_template();
  const int n = tpl.num_vertices();
  TightnessField zero;
  zero.vectors.setZero(n, 3);
  zero.fallback.assign(n, 0);
  const GeometryImage z = tightness_to_gi(tpl, zero, tpl.garment_prior);
  for (const char* c : {"tightness.x", "tightness.y", "tightness.z"})
    for (float v : z.channel(c)) CHECK(v == 0.0f);

  // Texel under a vertex whose whole neighborhood is upper garment.
  const auto adj = vertex_adjacency(n, tpl.mesh.faces);
  const auto ring2 = ring_neighborhoods(adj, 2);
  int inner = -1;
  for (int i = 0; i < n && inner < 0; ++i) {
    if (tpl.garment_prior[i] != static_cast<int>(Garment::upper)) continue;
    bool all = true;
    for (int j : ring2[i]) all = all && tpl.garment_prior[j] == static_cast<int>(Garment::upper);
    if (all) inner = i;
  }
  REQUIRE(inner >= 0);
  const int x = static_cast<int>(tpl.uv(inner, 0) * z.width), y = static_cast<int>(tpl.uv(inner, 1) * z.height);
  CHECK(z.channel("mask.upper")[y * z.width + x] == 1.0f);
  CHECK(z.channel("mask.lower")[y * z.width + x] == 0.0f);

  // Smooth field round trip.
  const Vertices& p = tpl.mesh.vertices;
  TightnessField f = zero;
  for (int i = 0; i < n; ++i) f.vectors.row(i) << 0.02 * std::sin(3 * p(i, 2)), 0.03 * std::cos(2 * p(i, 0)), -0.01 * p(i, 1);
  const PredictionOutput pred{tightness_to_gi(tpl, f, tpl.garment_prior), "ground_truth"};
  CHECK_NOTHROW(validate(pred));
  const TightnessField back = prediction_field(pred, tpl);
  const double diameter = (f.vectors.colwise().maxCoeff() - f.vectors.colwise().minCoeff()).norm();
  CHECK((back.vectors - f.vectors).rowwise().norm().maxCoeff() / diameter < 1e-3);
  const Eigen::MatrixXd masks = prediction_masks(pred, tpl);
  CHECK(masks.minCoeff() >= 0);
  CHECK(masks.maxCoeff() <= 1);
  CHECK(masks(inner, 0) == doctest::Approx(1.0));

  std::vector<int> bad = tpl.garment_prior;
  bad[0] = 7;
  CHECK_THROWS_AS(tightness_to_gi(tpl, f, bad), ArgumentError);
}

TEST_CASE("baseline predictor on unclothed and clothed template fixtures") {
  const auto& tpl = default_template();
  const JointRig pose = named_pose(tpl.rig, "W");
  TriMesh posed = tpl.mesh;
  posed.vertices = skeletal_warp(tpl, pose);
  posed = with_normals(posed);
  const GeometryImage ref = rasterize_gi(tpl, surface_attributes(posed), 224);

  // Smooth sub-centimeter shape variation, no clothing.
  TriMesh bare = posed;
  for (int i = 0; i < bare.num_vertices(); ++i) {
    const Vec3 p = tpl.mesh.vertex(i);
    bare.vertices.row(i) += 0.004 * std::sin(9 * p.z()) * std::cos(5 * p.x()) * bare.normals.row(i);
  }
  bare = with_normals(bare);
  const PredictionOutput pb = baseline_predict(rasterize_gi(tpl, surface_attributes(bare), 224), ref, tpl);
  CHECK_NOTHROW(validate(pb));
  CHECK(pb.provenance == "baseline");
  const auto& valid = pb.gi.channel("valid");
  int n_valid = 0, small = 0;
  for (size_t t = 0; t < pb.gi.texels(); ++t) {
    if (valid[t] < 0.5f) continue;
    ++n_valid;
    const Vec3 d(pb.gi.channel("tightness.x")[t], pb.gi.channel("tightness.y")[t], pb.gi.channel("tightness.z")[t]);
    if (d.norm() < 0.01) ++small;
  }
  CHECK(small >= 0.9 * n_valid);

  // 3 cm clothing over the garment prior.
  std::vector<double> g(static_cast<size_t>(tpl.num_vertices()));
  for (int i = 0; i < tpl.num_vertices(); ++i) g[i] = tpl.garment_prior[i] != static_cast<int>(Garment::body);
  TriMesh clothed = posed;
  for (int i = 0; i < clothed.num_vertices(); ++i) clothed.vertices.row(i) += 0.03 * g[i] * posed.normals.row(i);
  clothed = with_normals(clothed);
  const PredictionOutput pc = baseline_predict(rasterize_gi(tpl, surface_attributes(clothed), 224), ref, tpl);
  double sum = 0;
  int count = 0;
  for (size_t t = 0; t < pc.gi.texels(); ++t) {
    if (pc.gi.channel("valid")[t] < 0.5f) continue;
    if (pc.gi.channel("mask.upper")[t] + pc.gi.channel("mask.lower")[t] < 0.5f) continue;
    sum += Vec3(pc.gi.channel("tightness.x")[t], pc.gi.channel("tightness.y")[t], pc.gi.channel("tightness.z")[t]).norm();
    ++count;
  }
  REQUIRE(count > 0);
  const double mean = sum / count;
  CHECK(mean >= 0.015);
  CHECK(mean <= 0.045);
  for (const char* c : {"mask.upper", "mask.lower"})
    for (float v : pc.gi.channel(c)) CHECK((v >= 0.0f && v <= 1.0f));

  GeometryImage no_normals = ref;
  no_normals.names.erase(no_normals.names.begin() + no_normals.index("normal.x"));
  no_normals.planes.pop_back();
  CHECK_THROWS_AS(baseline_predict(no_normals, ref, tpl), ArgumentError);
}

TEST_CASE("external bridge: copier, failures and contract checks") {
  const auto& tpl = default_template();
  const auto dir = testing::temp_dir("bridge");
  TightnessField f;
  f.vectors = 0.01 * tpl.mesh.vertices;
  f.fallback.assign(tpl.num_vertices(), 0);
  const GeometryImage input = tightness_to_gi(tpl, f, tpl.garment_prior, 64);

  const PredictionOutput copied = external_predict(input, "cp {input} {output}", 10, dir / "copy");
  CHECK(copied.provenance == "external");
  for (const char* c : {"tightness.x", "tightness.y", "tightness.z", "mask.upper", "mask.lower"})
    CHECK(copied.gi.channel(c) == input.channel(c));

  try {
    external_predict(input, "echo failing on {input} >&2; exit 3 # {output}", 10, dir / "fail");
    FAIL("expected a bridge error");
  } catch (const BridgeError& e) {
    CHECK(e.exit_code == 3);
    CHECK(std::string(e.what()).find("exit code 3") != std::string::npos);
    CHECK(e.diagnostics.find("failing on") != std::string::npos);
  }

  GeometryImage other = input;
  other.uv_version ^= 1u;
  write_gi(other, dir / "other.cgi");
  CHECK_THROWS_WITH_AS(external_predict(input, "cp " + (dir / "other.cgi").string() + " {output} # {input}", 10,
                                        dir / "uv"),
                       doctest::Contains("uv_version"), BridgeError);

  CHECK_THROWS_AS(external_predict(input, "echo junk > {output} # {input}", 10, dir / "junk"), BridgeError);

  GeometryImage bare = input;
  for (const char* c : {"mask.lower"}) {
    const int k = bare.index(c);
    bare.names.erase(bare.names.begin() + k);
    bare.planes.erase(bare.planes.begin() + k);
  }
  CHECK_THROWS_WITH_AS(external_predict(bare, "cp {input} {output}", 10, dir / "bare"), doctest::Contains("mask.lower"),
                       BridgeError);

  const auto t0 = std::chrono::steady_clock::now();
  CHECK_THROWS_WITH_AS(external_predict(input, "sleep 20 # {input} {output}", 0.3, dir / "slow"),
                       doctest::Contains("timed out"), BridgeError);
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 5);

  CHECK_THROWS_AS(external_predict(input, "cp {input} out.cgi", 10, dir / "none"), ArgumentError);
}
