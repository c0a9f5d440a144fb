#include "tightcap/mesh.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace tightcap {

[[gnu::noinline]] double round_to_float(double x) { return static_cast<double>(static_cast<float>(x)); }

namespace {

std::string lower_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

void fill_default_colors(TriMesh& m) {
  if (!m.has_colors()) m.colors = Colors::Constant(m.num_vertices(), 3, 0.5);
}

// ---------------------------------------------------------------- OBJ

int parse_obj_index(const std::string& tok, int count, int line) {
  const auto slash = tok.find('/');
  const std::string head = tok.substr(0, slash);
  int idx = 0;
  try {
    size_t used = 0;
    idx = std::stoi(head, &used);
    if (used != head.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ParseError("obj line " + std::to_string(line) + ": bad face index '" + tok + "'");
  }
  if (idx < 0) idx = count + idx;  // relative index
  else idx -= 1;
  return idx;
}

TriMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<Vec3> pos, col, nrm;
  std::vector<std::array<int, 3>> tris;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      std::vector<double> vals;
      double x;
      while (ss >> x) vals.push_back(x);
      if (vals.size() != 3 && vals.size() != 6)
        throw ParseError("obj line " + std::to_string(lineno) + ": expected 3 or 6 numbers in 'v'");
      pos.emplace_back(vals[0], vals[1], vals[2]);
      if (vals.size() == 6) col.emplace_back(vals[3], vals[4], vals[5]);
    } else if (tag == "vn") {
      double x, y, z;
      if (!(ss >> x >> y >> z)) throw ParseError("obj line " + std::to_string(lineno) + ": bad 'vn'");
      nrm.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string tok;
      while (ss >> tok) poly.push_back(parse_obj_index(tok, static_cast<int>(pos.size()), lineno));
      if (poly.size() < 3) throw ParseError("obj line " + std::to_string(lineno) + ": face with < 3 vertices");
      for (size_t k = 1; k + 1 < poly.size(); ++k) tris.push_back({poly[0], poly[k], poly[k + 1]});
    }
    // vt, g, o, s, usemtl are accepted and ignored.
  }
  TriMesh m;
  m.vertices.resize(static_cast<Eigen::Index>(pos.size()), 3);
  for (size_t i = 0; i < pos.size(); ++i) m.vertices.row(i) = pos[i].transpose();
  m.faces.resize(static_cast<Eigen::Index>(tris.size()), 3);
  for (size_t i = 0; i < tris.size(); ++i)
    for (int k = 0; k < 3; ++k) m.faces(i, k) = tris[i][k];
  if (!col.empty() && col.size() == pos.size()) {
    m.colors.resize(m.num_vertices(), 3);
    for (size_t i = 0; i < col.size(); ++i) m.colors.row(i) = col[i].transpose();
  }
  if (!nrm.empty() && nrm.size() == pos.size()) {
    m.normals.resize(m.num_vertices(), 3);
    for (size_t i = 0; i < nrm.size(); ++i) m.normals.row(i) = nrm[i].normalized().transpose();
  }
  return m;
}

// ---------------------------------------------------------------- PLY

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

PlyType ply_type(const std::string& s, int line) {
  if (s == "char" || s == "int8") return PlyType::i8;
  if (s == "uchar" || s == "uint8") return PlyType::u8;
  if (s == "short" || s == "int16") return PlyType::i16;
  if (s == "ushort" || s == "uint16") return PlyType::u16;
  if (s == "int" || s == "int32") return PlyType::i32;
  if (s == "uint" || s == "uint32") return PlyType::u32;
  if (s == "float" || s == "float32") return PlyType::f32;
  if (s == "double" || s == "float64") return PlyType::f64;
  throw ParseError("ply header line " + std::to_string(line) + ": unknown type '" + s + "'");
}

int ply_size(PlyType t) {
  switch (t) {
    case PlyType::i8: case PlyType::u8: return 1;
    case PlyType::i16: case PlyType::u16: return 2;
    case PlyType::i32: case PlyType::u32: case PlyType::f32: return 4;
    case PlyType::f64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
  PlyType type = PlyType::f32;
};

struct PlyElement {
  std::string name;
  long count = 0;
  std::vector<PlyProperty> props;
};

class PlyReader {
 public:
  PlyReader(std::istream& in, bool binary, std::streamoff data_start)
      : in_(in), binary_(binary), offset_(data_start) {}

  double read(PlyType t) {
    if (!binary_) {
      std::string tok;
      if (!(in_ >> tok)) fail("unexpected end of ascii data");
      try {
        return std::stod(tok);
      } catch (const std::exception&) {
        fail("bad number '" + tok + "'");
      }
    }
    unsigned char buf[8];
    const int n = ply_size(t);
    if (!in_.read(reinterpret_cast<char*>(buf), n)) fail("truncated binary data");
    offset_ += n;
    switch (t) {
      case PlyType::i8: { std::int8_t v; std::memcpy(&v, buf, 1); return v; }
      case PlyType::u8: return buf[0];
      case PlyType::i16: { std::int16_t v; std::memcpy(&v, buf, 2); return v; }
      case PlyType::u16: { std::uint16_t v; std::memcpy(&v, buf, 2); return v; }
      case PlyType::i32: { std::int32_t v; std::memcpy(&v, buf, 4); return v; }
      case PlyType::u32: { std::uint32_t v; std::memcpy(&v, buf, 4); return v; }
      case PlyType::f32: { float v; std::memcpy(&v, buf, 4); return v; }
      case PlyType::f64: { double v; std::memcpy(&v, buf, 8); return v; }
    }
    return 0;
  }

  [[noreturn]] void fail(const std::string& what) const {
    if (binary_) throw ParseError("ply data at byte offset " + std::to_string(offset_) + ": " + what);
    throw ParseError("ply ascii data: " + what);
  }

 private:
  std::istream& in_;
  bool binary_;
  std::streamoff offset_;
};

TriMesh load_ply(const std::filesystem::path& path, IntProperties* extra) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  int lineno = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw ParseError("ply header truncated at line " + std::to_string(lineno + 1));
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };
  next_line();
  if (line != "ply") throw ParseError("ply line 1: missing 'ply' magic");
  bool binary = false;
  std::vector<PlyElement> elements;
  while (true) {
    next_line();
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else throw ParseError("ply line " + std::to_string(lineno) + ": unsupported format '" + fmt + "'");
    } else if (tag == "element") {
      PlyElement e;
      ss >> e.name >> e.count;
      if (!ss || e.count < 0) throw ParseError("ply line " + std::to_string(lineno) + ": bad element");
      elements.push_back(e);
    } else if (tag == "property") {
      if (elements.empty()) throw ParseError("ply line " + std::to_string(lineno) + ": property before element");
      PlyProperty p;
      std::string t;
      ss >> t;
      if (t == "list") {
        std::string ct, it;
        ss >> ct >> it >> p.name;
        p.is_list = true;
        p.count_type = ply_type(ct, lineno);
        p.type = ply_type(it, lineno);
      } else {
        p.type = ply_type(t, lineno);
        ss >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (tag == "end_header") {
      break;
    } else if (tag == "comment" || tag == "obj_info" || tag.empty()) {
      continue;
    } else {
      throw ParseError("ply line " + std::to_string(lineno) + ": unknown header keyword '" + tag + "'");
    }
  }
  PlyReader reader(in, binary, in.tellg());
  TriMesh m;
  bool have_normals = false, have_colors = false;
  auto standard = [](const std::string& name) {
    for (const char* s : {"x", "y", "z", "nx", "ny", "nz", "red", "green", "blue"})
      if (name == s) return true;
    return false;
  };
  auto integral = [](PlyType t) { return t != PlyType::f32 && t != PlyType::f64; };
  for (const auto& e : elements) {
    if (e.name == "vertex") {
      std::vector<int> slots;  // index into *extra, or -1
      for (const auto& p : e.props) {
        int slot = -1;
        if (extra && !p.is_list && integral(p.type) && !standard(p.name)) {
          slot = static_cast<int>(extra->size());
          extra->emplace_back(p.name, std::vector<int>(static_cast<size_t>(e.count)));
        }
        slots.push_back(slot);
      }
      m.vertices.resize(e.count, 3);
      m.normals.resize(e.count, 3);
      m.colors.resize(e.count, 3);
      m.vertices.setZero();
      m.normals.setZero();
      m.colors.setZero();
      for (long i = 0; i < e.count; ++i) {
        for (size_t pi = 0; pi < e.props.size(); ++pi) {
          const auto& p = e.props[pi];
          if (p.is_list) {
            const int n = static_cast<int>(reader.read(p.count_type));
            for (int k = 0; k < n; ++k) reader.read(p.type);
            continue;
          }
          const double v = reader.read(p.type);
          if (slots[pi] >= 0) (*extra)[slots[pi]].second[static_cast<size_t>(i)] = static_cast<int>(v);
          else if (p.name == "x") m.vertices(i, 0) = v;
          else if (p.name == "y") m.vertices(i, 1) = v;
          else if (p.name == "z") m.vertices(i, 2) = v;
          else if (p.name == "nx") { m.normals(i, 0) = v; have_normals = true; }
          else if (p.name == "ny") m.normals(i, 1) = v;
          else if (p.name == "nz") m.normals(i, 2) = v;
          else if (p.name == "red" || p.name == "green" || p.name == "blue") {
            const int c = p.name == "red" ? 0 : (p.name == "green" ? 1 : 2);
            const bool integral = p.type == PlyType::u8 || p.type == PlyType::u16;
            m.colors(i, c) = integral ? v / (p.type == PlyType::u8 ? 255.0 : 65535.0) : v;
            have_colors = true;
          }
        }
      }
    } else if (e.name == "face") {
      std::vector<std::array<int, 3>> tris;
      tris.reserve(static_cast<size_t>(e.count));
      for (long i = 0; i < e.count; ++i) {
        for (const auto& p : e.props) {
          if (!p.is_list) {
            reader.read(p.type);
            continue;
          }
          const int n = static_cast<int>(reader.read(p.count_type));
          std::vector<int> poly(static_cast<size_t>(std::max(n, 0)));
          for (int k = 0; k < n; ++k) poly[k] = static_cast<int>(reader.read(p.type));
          if (p.name != "vertex_indices" && p.name != "vertex_index") continue;
          if (n < 3) reader.fail("face " + std::to_string(i) + " has fewer than 3 vertices");
          for (int k = 1; k + 1 < n; ++k) tris.push_back({poly[0], poly[k], poly[k + 1]});
        }
      }
      m.faces.resize(static_cast<Eigen::Index>(tris.size()), 3);
      for (size_t i = 0; i < tris.size(); ++i)
        for (int k = 0; k < 3; ++k) m.faces(i, k) = tris[i][k];
    } else {
      for (long i = 0; i < e.count; ++i)
        for (const auto& p : e.props) {
          if (p.is_list) {
            const int n = static_cast<int>(reader.read(p.count_type));
            for (int k = 0; k < n; ++k) reader.read(p.type);
          } else {
            reader.read(p.type);
          }
        }
    }
  }
  if (!have_normals) m.normals.resize(0, 3);
  else
    for (int i = 0; i < m.num_vertices(); ++i) {
      const double n = m.normals.row(i).norm();
      if (n > 0) m.normals.row(i) /= n;
    }
  if (!have_colors) m.colors.resize(0, 3);
  return m;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

void validate(const TriMesh& mesh) {
  const int n = mesh.num_vertices();
  for (int f = 0; f < mesh.num_faces(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int idx = mesh.faces(f, k);
      if (idx < 0 || idx >= n)
        throw ValidationError("face " + std::to_string(f) + " references vertex " + std::to_string(idx) +
                              " but mesh has " + std::to_string(n) + " vertices");
    }
    if (mesh.faces(f, 0) == mesh.faces(f, 1) || mesh.faces(f, 1) == mesh.faces(f, 2) ||
        mesh.faces(f, 0) == mesh.faces(f, 2))
      throw ValidationError("face " + std::to_string(f) + " repeats a vertex");
  }
  if (mesh.has_normals()) {
    for (int i = 0; i < n; ++i)
      if (std::abs(mesh.normals.row(i).norm() - 1.0) > 1e-6)
        throw ValidationError("normal of vertex " + std::to_string(i) + " is not unit length");
  }
  if (mesh.colors.rows() != 0 && mesh.colors.rows() != n)
    throw ValidationError("color count does not match vertex count");
}

TriMesh load_mesh(const std::filesystem::path& path) {
  IntProperties ignored;
  return load_mesh(path, ignored);
}

TriMesh load_mesh(const std::filesystem::path& path, IntProperties& extra) {
  TriMesh m;
  extra.clear();
  const std::string ext = lower_ext(path);
  if (ext == ".obj") m = load_obj(path);
  else if (ext == ".ply") m = load_ply(path, &extra);
  else throw ParseError("unsupported mesh extension '" + ext + "' for " + path.string());
  validate(m);
  fill_default_colors(m);
  return m;
}

void save_ply(const std::filesystem::path& path, const TriMesh& mesh, const IntProperties& extra,
              bool binary) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const bool normals = mesh.has_normals();
  const bool colors = mesh.has_colors();
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
  out << "element vertex " << mesh.num_vertices() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (normals) out << "property float nx\nproperty float ny\nproperty float nz\n";
  if (colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  for (const auto& [name, values] : extra) {
    if (static_cast<int>(values.size()) != mesh.num_vertices())
      throw ArgumentError("property '" + name + "' has wrong length");
    out << "property int " << name << "\n";
  }
  out << "element face " << mesh.num_faces() << "\n";
  out << "property list uchar int vertex_indices\nend_header\n";
  auto to_u8 = [](double c) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
  };
  char buf[64];
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    if (binary) {
      for (int k = 0; k < 3; ++k) put(out, static_cast<float>(mesh.vertices(i, k)));
      if (normals)
        for (int k = 0; k < 3; ++k) put(out, static_cast<float>(mesh.normals(i, k)));
      if (colors)
        for (int k = 0; k < 3; ++k) put(out, to_u8(mesh.colors(i, k)));
      for (const auto& pr : extra) put(out, static_cast<std::int32_t>(pr.second[i]));
    } else {
      for (int k = 0; k < 3; ++k) {
        std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(static_cast<float>(mesh.vertices(i, k))));
        out << (k ? " " : "") << buf;
      }
      if (normals)
        for (int k = 0; k < 3; ++k) {
          std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(static_cast<float>(mesh.normals(i, k))));
          out << " " << buf;
        }
      if (colors)
        for (int k = 0; k < 3; ++k) out << " " << static_cast<int>(to_u8(mesh.colors(i, k)));
      for (const auto& pr : extra) out << " " << pr.second[i];
      out << "\n";
    }
  }
  for (int f = 0; f < mesh.num_faces(); ++f) {
    if (binary) {
      put(out, static_cast<std::uint8_t>(3));
      for (int k = 0; k < 3; ++k) put(out, static_cast<std::int32_t>(mesh.faces(f, k)));
    } else {
      out << "3 " << mesh.faces(f, 0) << " " << mesh.faces(f, 1) << " " << mesh.faces(f, 2) << "\n";
    }
  }
}

void save_obj(const std::filesystem::path& path, const TriMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  char buf[128];
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g", mesh.vertices(i, 0), mesh.vertices(i, 1),
                  mesh.vertices(i, 2));
    out << buf;
    if (mesh.has_colors()) {
      std::snprintf(buf, sizeof(buf), " %.6g %.6g %.6g", mesh.colors(i, 0), mesh.colors(i, 1), mesh.colors(i, 2));
      out << buf;
    }
    out << "\n";
  }
  for (int f = 0; f < mesh.num_faces(); ++f)
    out << "f " << mesh.faces(f, 0) + 1 << " " << mesh.faces(f, 1) + 1 << " " << mesh.faces(f, 2) + 1 << "\n";
}

Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> face_normals(const Vertices& v, const Faces& f) {
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> n(f.rows(), 3);
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    const Vec3 a = v.row(f(i, 0)), b = v.row(f(i, 1)), c = v.row(f(i, 2));
    const Vec3 cr = (b - a).cross(c - a);
    const double len = cr.norm();
    n.row(i) = len > 0 ? Vec3(cr / len).transpose() : Vec3(Vec3::Zero()).transpose();
  }
  return n;
}

VertexNormals vertex_normals(const TriMesh& mesh) {
  if (mesh.num_faces() < 1) throw ArgumentError("vertex_normals: mesh has no faces");
  VertexNormals out;
  out.normals = Vertices::Zero(mesh.num_vertices(), 3);
  out.degenerate.assign(static_cast<size_t>(mesh.num_vertices()), 1);
  for (int f = 0; f < mesh.num_faces(); ++f) {
    const int i0 = mesh.faces(f, 0), i1 = mesh.faces(f, 1), i2 = mesh.faces(f, 2);
    const Vec3 a = mesh.vertex(i0), b = mesh.vertex(i1), c = mesh.vertex(i2);
    // Cross product magnitude is twice the area, so this is area weighting.
    const Vec3 cr = (b - a).cross(c - a);
    for (int i : {i0, i1, i2}) out.normals.row(i) += cr.transpose();
  }
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    const double len = out.normals.row(i).norm();
    if (len > 1e-300) {
      out.normals.row(i) /= len;
      out.degenerate[i] = 0;
    } else {
      out.normals.row(i).setZero();
    }
  }
  return out;
}

TriMesh with_normals(TriMesh mesh) {
  mesh.normals = vertex_normals(mesh).normals;
  return mesh;
}

std::vector<std::pair<int, int>> unique_edges(const Faces& f) {
  std::vector<std::pair<int, int>> e;
  e.reserve(static_cast<size_t>(f.rows()) * 3);
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    for (int k = 0; k < 3; ++k) {
      int a = f(i, k), b = f(i, (k + 1) % 3);
      if (a > b) std::swap(a, b);
      e.emplace_back(a, b);
    }
  std::sort(e.begin(), e.end());
  e.erase(std::unique(e.begin(), e.end()), e.end());
  return e;
}

std::vector<std::vector<int>> vertex_adjacency(int num_vertices, const Faces& f) {
  std::vector<std::vector<int>> adj(static_cast<size_t>(num_vertices));
  for (const auto& [a, b] : unique_edges(f)) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  return adj;
}

std::vector<std::vector<int>> ring_neighborhoods(const std::vector<std::vector<int>>& adjacency, int rings) {
  const int n = static_cast<int>(adjacency.size());
  std::vector<std::vector<int>> out(static_cast<size_t>(n));
  std::vector<int> mark(static_cast<size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    std::vector<int> frontier{i};
    mark[i] = i;
    for (int r = 0; r < rings; ++r) {
      std::vector<int> next;
      for (int v : frontier)
        for (int w : adjacency[v])
          if (mark[w] != i) {
            mark[w] = i;
            next.push_back(w);
            out[i].push_back(w);
          }
      frontier.swap(next);
    }
    std::sort(out[i].begin(), out[i].end());
  }
  return out;
}

double mean_edge_length(const Vertices& v, const Faces& f) {
  const auto edges = unique_edges(f);
  if (edges.empty()) return 0.0;
  double s = 0;
  for (const auto& [a, b] : edges) s += (v.row(a) - v.row(b)).norm();
  return s / static_cast<double>(edges.size());
}

double surface_area(const Vertices& v, const Faces& f) {
  double a = 0;
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    const Vec3 p0 = v.row(f(i, 0)), p1 = v.row(f(i, 1)), p2 = v.row(f(i, 2));
    a += 0.5 * (p1 - p0).cross(p2 - p0).norm();
  }
  return a;
}

BoundingBox bounding_box(const Vertices& v) {
  BoundingBox b;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    b.min = b.min.cwiseMin(v.row(i).transpose());
    b.max = b.max.cwiseMax(v.row(i).transpose());
  }
  return b;
}

int euler_characteristic(const TriMesh& mesh) {
  return mesh.num_vertices() - static_cast<int>(unique_edges(mesh.faces).size()) + mesh.num_faces();
}

bool is_closed_oriented_manifold(const Faces& f) {
  std::map<std::pair<int, int>, int> directed;
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    for (int k = 0; k < 3; ++k) ++directed[{f(i, k), f(i, (k + 1) % 3)}];
  for (const auto& [e, count] : directed) {
    if (count != 1) return false;
    const auto it = directed.find({e.second, e.first});
    if (it == directed.end() || it->second != 1) return false;
  }
  return true;
}

SurfaceSamples sample_surface(const Vertices& v, const Faces& f, int count, std::uint64_t seed) {
  SurfaceSamples s;
  s.points.resize(count, 3);
  s.faces.resize(static_cast<size_t>(count));
  std::vector<double> cdf(static_cast<size_t>(f.rows()));
  double total = 0;
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    const Vec3 p0 = v.row(f(i, 0)), p1 = v.row(f(i, 1)), p2 = v.row(f(i, 2));
    total += 0.5 * (p1 - p0).cross(p2 - p0).norm();
    cdf[i] = total;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int k = 0; k < count; ++k) {
    const double t = uni(rng) * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), t);
    const int fi = static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(), f.rows() - 1));
    double r1 = uni(rng), r2 = uni(rng);
    if (r1 + r2 > 1) {
      r1 = 1 - r1;
      r2 = 1 - r2;
    }
    const Vec3 p0 = v.row(f(fi, 0)), p1 = v.row(f(fi, 1)), p2 = v.row(f(fi, 2));
    s.points.row(k) = (p0 + r1 * (p1 - p0) + r2 * (p2 - p0)).transpose();
    s.faces[k] = fi;
  }
  return s;
}

TriMesh submesh(const TriMesh& mesh, const std::vector<bool>& keep, std::vector<int>* old_to_new) {
  std::vector<int> map(static_cast<size_t>(mesh.num_vertices()), -1);
  std::vector<int> kept_faces;
  for (int f = 0; f < mesh.num_faces(); ++f)
    if (keep[mesh.faces(f, 0)] && keep[mesh.faces(f, 1)] && keep[mesh.faces(f, 2)]) kept_faces.push_back(f);
  int n = 0;
  for (int f : kept_faces)
    for (int k = 0; k < 3; ++k)
      if (map[mesh.faces(f, k)] < 0) map[mesh.faces(f, k)] = 0;
  for (auto& m : map)
    if (m == 0) m = n++;
  TriMesh out;
  out.vertices.resize(n, 3);
  if (mesh.has_colors()) out.colors.resize(n, 3);
  if (mesh.has_normals()) out.normals.resize(n, 3);
  for (int i = 0; i < mesh.num_vertices(); ++i) {
    if (map[i] < 0) continue;
    out.vertices.row(map[i]) = mesh.vertices.row(i);
    if (mesh.has_colors()) out.colors.row(map[i]) = mesh.colors.row(i);
    if (mesh.has_normals()) out.normals.row(map[i]) = mesh.normals.row(i);
  }
  out.faces.resize(static_cast<Eigen::Index>(kept_faces.size()), 3);
  for (size_t i = 0; i < kept_faces.size(); ++i)
    for (int k = 0; k < 3; ++k) out.faces(i, k) = map[mesh.faces(kept_faces[i], k)];
  if (old_to_new) *old_to_new = map;
  return out;
}

TriMesh make_icosphere(int subdivisions, double radius, const Vec3& center) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      mid[key] = id;
      return id;
    };
    std::vector<std::array<int, 3>> nf;
    nf.reserve(f.size() * 4);
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]), b = midpoint(tri[1], tri[2]), c = midpoint(tri[2], tri[0]);
      nf.push_back({tri[0], a, c});
      nf.push_back({tri[1], b, a});
      nf.push_back({tri[2], c, b});
      nf.push_back({a, b, c});
    }
    f.swap(nf);
  }
  TriMesh m;
  m.vertices.resize(static_cast<Eigen::Index>(v.size()), 3);
  for (size_t i = 0; i < v.size(); ++i) m.vertices.row(i) = (center + radius * v[i]).transpose();
  m.faces.resize(static_cast<Eigen::Index>(f.size()), 3);
  for (size_t i = 0; i < f.size(); ++i)
    for (int k = 0; k < 3; ++k) m.faces(i, k) = f[i][k];
  m.colors = Colors::Constant(m.num_vertices(), 3, 0.5);
  m.normals = vertex_normals(m).normals;
  return m;
}

}  // namespace tightcap
