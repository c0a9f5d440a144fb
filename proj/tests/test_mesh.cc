#include <algorithm>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "test_util.h"
#include "tightcap/geometry.h"
#include "tightcap/metrics.h"
#include "tightcap/spatial.h"

using namespace tightcap;

namespace {

void write_binary_cube(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  out << "ply\nformat binary_little_endian 1.0\ncomment unit cube\nelement vertex 8\n"
         "property float x\nproperty float y\nproperty float z\n"
         "element face 6\nproperty list uchar int vertex_indices\nend_header\n";
  for (int i = 0; i < 8; ++i) {
    const float p[3] = {float(i & 1), float((i >> 1) & 1), float((i >> 2) & 1)};
    out.write(reinterpret_cast<const char*>(p), sizeof(p));
  }
  const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  for (const auto& q : quads) {
    const unsigned char n = 4;
    out.write(reinterpret_cast<const char*>(&n), 1);
    out.write(reinterpret_cast<const char*>(q), sizeof(q));
  }
}

std::vector<int> brute_knn(const Vertices& pts, const Vec3& p, int k) {
  std::vector<int> ids(static_cast<size_t>(pts.rows()));
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<double> d(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) d[i] = (pts.row(i).transpose() - p).squaredNorm();
  std::sort(ids.begin(), ids.end(), [&](int a, int b) { return d[a] < d[b] || (d[a] == d[b] && a < b); });
  ids.resize(std::min<size_t>(ids.size(), static_cast<size_t>(k)));
  return ids;
}

std::vector<int> brute_cone(const Vertices& pts, const Vec3& o, const Vec3& axis, double aperture) {
  std::vector<int> out;
  for (int i = 0; i < pts.rows(); ++i) {
    const Vec3 d = pts.row(i).transpose() - o;
    if (d.norm() == 0) continue;
    const double a = angle_deg(d, axis);
    if (a <= aperture / 2 || 180.0 - a <= aperture / 2) out.push_back(i);
  }
  return out;
}

}  // namespace

TEST_CASE("load_mesh reads a minimal OBJ") {
  const auto dir = testing::temp_dir("mesh_obj");
  {
    std::ofstream out(dir / "tri.obj");
    out << "# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1\n";
  }
  const TriMesh m = load_mesh(dir / "tri.obj");
  CHECK(m.num_vertices() == 3);
  CHECK(m.num_faces() == 1);
  CHECK(m.has_colors());
  CHECK(m.colors(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("load_mesh reads a binary PLY cube and triangulates quads") {
  const auto dir = testing::temp_dir("mesh_ply");
  write_binary_cube(dir / "cube.ply");
  const TriMesh m = load_mesh(dir / "cube.ply");
  CHECK(m.num_vertices() == 8);
  CHECK(m.num_faces() == 12);
  CHECK(is_closed_oriented_manifold(m.faces));
  CHECK(euler_characteristic(m) == 2);
}

TEST_CASE("load_mesh rejects out-of-range face indices") {
  const auto dir = testing::temp_dir("mesh_bad");
  {
    std::ofstream out(dir / "bad.obj");
    out << "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 6\n";
  }
  CHECK_THROWS_AS(load_mesh(dir / "bad.obj"), ValidationError);
  {
    std::ofstream out(dir / "garbage.obj");
    out << "v 0 0 0\nv 1 zero 0\n";
  }
  try {
    load_mesh(dir / "garbage.obj");
    FAIL("expected parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("PLY save/load keeps colors and extra properties readable") {
  const auto dir = testing::temp_dir("mesh_rt");
  TriMesh m = make_icosphere(1);
  for (int i = 0; i < m.num_vertices(); ++i) m.colors.row(i) << (i % 3) / 2.0, 1.0, 0.0;
  std::vector<int> labels(static_cast<size_t>(m.num_vertices()), 2);
  save_ply(dir / "a.ply", m, {{"garment", labels}});
  save_ply(dir / "b.ply", m, {}, false);
  for (const char* name : {"a.ply", "b.ply"}) {
    const TriMesh r = load_mesh(dir / name);
    CHECK(r.num_vertices() == m.num_vertices());
    CHECK(r.faces == m.faces);
    CHECK((r.vertices - m.vertices).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((r.colors - m.colors).cwiseAbs().maxCoeff() <= 0.5 / 255 + 1e-9);
    CHECK(r.has_normals());
  }
  for (int i = 0; i < m.num_vertices(); ++i) labels[i] = i % 3 - 1;
  save_ply(dir / "c.ply", m, {{"garment", labels}, {"part", std::vector<int>(labels.size(), 7)}});
  save_ply(dir / "d.ply", m, {{"garment", labels}}, false);
  for (const char* name : {"c.ply", "d.ply"}) {
    IntProperties extra;
    load_mesh(dir / name, extra);
    REQUIRE(!extra.empty());
    CHECK(extra[0].first == "garment");
    CHECK(extra[0].second == labels);
    if (std::string(name) == "c.ply") {
      REQUIRE(extra.size() == 2);
      CHECK(extra[1].second == std::vector<int>(labels.size(), 7));
    }
  }
}

TEST_CASE("vertex_normals of a CCW triangle and a cube corner") {
  TriMesh tri;
  tri.vertices.resize(3, 3);
  tri.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  tri.faces.resize(1, 3);
  tri.faces << 0, 1, 2;
  const auto n = vertex_normals(tri);
  for (int i = 0; i < 3; ++i) CHECK((n.normals.row(i) - Eigen::RowVector3d(0, 0, 1)).norm() < 1e-15);

  const auto dir = testing::temp_dir("mesh_cube_n");
  write_binary_cube(dir / "cube.ply");
  const TriMesh cube = load_mesh(dir / "cube.ply");
  const auto cn = vertex_normals(cube);
  // Vertex 7 = (1,1,1): three faces meet, each quad split so areas differ per
  // triangle but each axis receives the same total area.
  CHECK((cn.normals.row(7).transpose() - Vec3(1, 1, 1).normalized()).norm() < 1e-12);
  CHECK((cn.normals.row(0).transpose() - Vec3(-1, -1, -1).normalized()).norm() < 1e-12);
}

TEST_CASE("vertex_normals matches per-face accumulation oracle and flags isolated vertices") {
  TriMesh m = testing::random_mesh(50, 60, 7);
  m.vertices.conservativeResize(51, 3);
  m.vertices.row(50) << 5, 5, 5;  // isolated
  const auto n = vertex_normals(m);
  Vertices oracle = Vertices::Zero(51, 3);
  for (int f = 0; f < m.num_faces(); ++f) {
    const Vec3 a = m.vertex(m.faces(f, 0)), b = m.vertex(m.faces(f, 1)), c = m.vertex(m.faces(f, 2));
    const Vec3 nn = (b - a).cross(c - a).normalized();
    const double area = 0.5 * (b - a).cross(c - a).norm();
    for (int k = 0; k < 3; ++k) oracle.row(m.faces(f, k)) += (area * nn).transpose();
  }
  for (int i = 0; i < 50; ++i) {
    if (oracle.row(i).norm() == 0) continue;
    CHECK((n.normals.row(i) - oracle.row(i).normalized()).norm() < 1e-12);
    CHECK(std::abs(n.normals.row(i).norm() - 1.0) < 1e-6);
  }
  CHECK(n.degenerate[50] == 1);
  CHECK(n.normals.row(50).norm() == 0.0);
}

TEST_CASE("icosphere is a closed genus-0 mesh with outward normals") {
  const TriMesh s = make_icosphere(3);
  CHECK(euler_characteristic(s) == 2);
  CHECK(is_closed_oriented_manifold(s.faces));
  for (int i = 0; i < s.num_vertices(); ++i) CHECK(s.normals.row(i).dot(s.vertices.row(i)) > 0.9);
}

TEST_CASE("knn_query matches exhaustive sort") {
  Vertices grid(10, 3);
  for (int i = 0; i < 10; ++i) grid.row(i) << i % 5, i / 5, 0;
  TriMesh g;
  g.vertices = grid;
  const SpatialIndex gi(g, false);
  CHECK(knn_query(gi, Vec3(2.4, 0.6, 0), 3) == brute_knn(grid, Vec3(2.4, 0.6, 0), 3));
  // Exact ties: (2,0.5) is equidistant to ids 2 and 7; lower id first.
  CHECK(knn_query(gi, Vec3(2, 0.5, 0), 2) == std::vector<int>{2, 7});

  const TriMesh m = testing::random_mesh(20, 10, 3);
  const SpatialIndex idx(m, false);
  CHECK(knn_query(idx, m.vertex(7), 1) == std::vector<int>{7});
  CHECK(knn_query(idx, Vec3::Zero(), 50).size() == 20);
  const SpatialIndex empty;
  CHECK(knn_query(empty, Vec3::Zero(), 3).empty());
  CHECK_THROWS_AS(knn_query(idx, Vec3::Zero(), 0), ArgumentError);
}

TEST_CASE("spatial queries equal exhaustive oracles on random meshes") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 6; ++trial) {
    const int n = 200 + 950 * trial;
    const TriMesh m = testing::random_mesh(n, 10, 100 + trial);
    const SpatialIndex idx(m, false);
    for (int q = 0; q < 25; ++q) {
      const Vec3 p(u(rng), u(rng), u(rng));
      const int k = 1 + q % 23;
      CHECK(knn_query(idx, p, k) == brute_knn(m.vertices, p, k));
      const Vec3 axis = Vec3(u(rng), u(rng), u(rng)).normalized();
      const double ap = 5.0 + 10.0 * q;
      CHECK(cone_query(idx, p, axis, ap) == brute_cone(m.vertices, p, axis, ap));
    }
  }
}

TEST_CASE("cone_query on a sphere returns the polar caps") {
  const TriMesh s = make_icosphere(4);
  const SpatialIndex idx(s, false);
  const auto hits = cone_query(idx, Vec3::Zero(), Vec3::UnitZ(), 30.0);
  std::vector<int> expect;
  for (int i = 0; i < s.num_vertices(); ++i) {
    const double polar = std::acos(std::clamp(s.vertices(i, 2) / s.vertices.row(i).norm(), -1.0, 1.0)) * 180 / M_PI;
    if (polar <= 15.0 || polar >= 165.0) expect.push_back(i);
  }
  CHECK(!expect.empty());
  CHECK(hits == expect);

  const auto all = cone_query(idx, s.vertex(0), Vec3::UnitX(), 360.0);
  CHECK(all.size() == static_cast<size_t>(s.num_vertices() - 1));
  CHECK(cone_query(SpatialIndex{}, Vec3::Zero(), Vec3::UnitZ(), 30.0).empty());
  CHECK_THROWS_AS(cone_query(idx, Vec3::Zero(), Vec3::Zero(), 30.0), ArgumentError);
}

TEST_CASE("AABB closest point equals exhaustive triangle scan") {
  const TriMesh m = make_icosphere(3);
  const AabbTree tree(m.vertices, m.faces);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2, 2);
  for (int q = 0; q < 200; ++q) {
    const Vec3 p(u(rng), u(rng), u(rng));
    double best = 1e300;
    int bf = -1;
    for (int f = 0; f < m.num_faces(); ++f) {
      const auto cp = closest_point_on_triangle<double>(p, m.vertices.row(m.faces(f, 0)),
                                                        m.vertices.row(m.faces(f, 1)), m.vertices.row(m.faces(f, 2)));
      if (cp.squared_distance < best) {
        best = cp.squared_distance;
        bf = f;
      }
    }
    const auto hit = tree.closest(p);
    CHECK(hit.squared_distance == best);
    CHECK(hit.face == bf);
  }
}

TEST_CASE("hausdorff_metrics identity, symmetry and scaled sphere") {
  const TriMesh s = make_icosphere(4);
  const auto self = hausdorff_metrics(s, s, 3.0);
  CHECK(self.mean == 0.0);
  CHECK(self.rms == 0.0);
  CHECK(self.max == 0.0);
  CHECK(self.samples_per_side >= 10 * s.num_vertices());

  TriMesh big = s;
  big.vertices *= 1.01;
  const auto r = hausdorff_metrics(s, big, 2.0);
  CHECK(r.mean == doctest::Approx(0.005).epsilon(0.10));
  CHECK(r.mean <= r.rms);
  CHECK(r.rms <= r.max);
  CHECK(r.error_mm == doctest::Approx(r.mean * r.normalizer * 1000.0));

  // Symmetric definition: swapping arguments with swapped seeds gives the
  // same pooled sample set.
  const auto ab = hausdorff_metrics(s, big, 2.0, 10, 40);
  const auto ba = hausdorff_metrics(big, s, 2.0, 10, 40);
  CHECK(ab.max == doctest::Approx(ba.max).epsilon(0.05));
  CHECK(ab.mean == doctest::Approx(ba.mean).epsilon(0.02));

  CHECK_THROWS_AS(hausdorff_metrics(TriMesh{}, s, 1.0), ArgumentError);
  CHECK_THROWS_AS(hausdorff_metrics(s, s, 0.0), ArgumentError);
}
