#pragma once

#include <cstdint>
#include <limits>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tightcap/types.h"

namespace tightcap {

struct TriMesh {
  Vertices vertices;
  Faces faces;
  Colors colors;     // empty when absent, otherwise RGB in [0,1] per vertex
  Vertices normals;  // empty when absent, otherwise unit per vertex

  int num_vertices() const { return static_cast<int>(vertices.rows()); }
  int num_faces() const { return static_cast<int>(faces.rows()); }
  bool has_colors() const { return colors.rows() == vertices.rows() && colors.rows() > 0; }
  bool has_normals() const { return normals.rows() == vertices.rows() && normals.rows() > 0; }

  Vec3 vertex(int i) const { return vertices.row(i).transpose(); }
};

// Throws ValidationError on out-of-range or repeated face indices and
// non-unit stored normals.
void validate(const TriMesh& mesh);

// OBJ or PLY (ascii / binary_little_endian), chosen by extension. Missing
// colors default to mid-gray.
TriMesh load_mesh(const std::filesystem::path& path);

// Extra integer per-vertex properties written after the standard ones.
using IntProperties = std::vector<std::pair<std::string, std::vector<int>>>;

// Also returns the integer vertex properties beyond position, normal and
// color (PLY only; empty for OBJ).
TriMesh load_mesh(const std::filesystem::path& path, IntProperties& extra);

void save_ply(const std::filesystem::path& path, const TriMesh& mesh,
              const IntProperties& extra = {}, bool binary = true);
void save_obj(const std::filesystem::path& path, const TriMesh& mesh);

struct VertexNormals {
  Vertices normals;
  // 1 where the vertex has no non-degenerate incident face; that normal is 0.
  std::vector<std::uint8_t> degenerate;
};

// Area-weighted average of incident face normals.
VertexNormals vertex_normals(const TriMesh& mesh);

// Convenience: mesh copy with freshly computed normals.
TriMesh with_normals(TriMesh mesh);

Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> face_normals(
    const Vertices& v, const Faces& f);

// Undirected edges (i < j), sorted.
std::vector<std::pair<int, int>> unique_edges(const Faces& f);

// Per-vertex sorted neighbor lists from the face graph.
std::vector<std::vector<int>> vertex_adjacency(int num_vertices, const Faces& f);

// Vertices reachable in at most `rings` edge hops (excluding the vertex).
std::vector<std::vector<int>> ring_neighborhoods(
    const std::vector<std::vector<int>>& adjacency, int rings);

double mean_edge_length(const Vertices& v, const Faces& f);
double surface_area(const Vertices& v, const Faces& f);

struct BoundingBox {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());
  double diagonal() const { return (max - min).norm(); }
  Vec3 center() const { return 0.5 * (min + max); }
};

BoundingBox bounding_box(const Vertices& v);

// Euler characteristic V - E + F.
int euler_characteristic(const TriMesh& mesh);

// True when every undirected edge is shared by exactly two faces with
// opposite orientation.
bool is_closed_oriented_manifold(const Faces& f);

// Area-uniform random surface samples (deterministic given the seed).
struct SurfaceSamples {
  Vertices points;
  std::vector<int> faces;
};
SurfaceSamples sample_surface(const Vertices& v, const Faces& f, int count,
                              std::uint64_t seed);

// Mesh made from the faces whose three vertices all satisfy `keep`. Vertices
// are compacted; `old_to_new` receives -1 for dropped vertices.
TriMesh submesh(const TriMesh& mesh, const std::vector<bool>& keep,
                std::vector<int>* old_to_new = nullptr);

// Subdivided icosahedron projected onto a sphere.
TriMesh make_icosphere(int subdivisions, double radius = 1.0,
                       const Vec3& center = Vec3::Zero());

}  // namespace tightcap
