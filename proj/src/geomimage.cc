#include "tightcap/geomimage.h"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <iterator>
#include <limits>

#include <Eigen/SparseCholesky>

#include "tightcap/geometry.h"

namespace tightcap {

namespace {

const char kMagic[4] = {'C', 'G', 'I', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  void need(size_t n, const char* what) const {
    if (b_.size() - pos_ < n)
      throw FormatError("CGI1: truncated " + std::string(what) + " at offset " + std::to_string(pos_));
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(b_[pos_ + k]) << (8 * k);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  size_t pos() const { return pos_; }
  size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  size_t pos_ = 0;
};

// Bilinear footprint of atlas point uv, with the clamping inverse_gi uses.
struct Footprint {
  std::array<size_t, 4> texel;
  std::array<double, 4> weight;
};

Footprint footprint(double u, double v, int w, int h) {
  const double fx = u * w - 0.5, fy = v * h - 0.5;
  const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  const int xa = std::clamp(x0, 0, w - 1), xb = std::clamp(x0 + 1, 0, w - 1);
  const int ya = std::clamp(y0, 0, h - 1), yb = std::clamp(y0 + 1, 0, h - 1);
  return {{static_cast<size_t>(ya) * w + xa, static_cast<size_t>(ya) * w + xb, static_cast<size_t>(yb) * w + xa,
           static_cast<size_t>(yb) * w + xb},
          {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay}};
}

// Gutter texels inside the bilinear footprint of a vertex are refit by damped
// least squares so that bilinear reads at those vertices return the vertex
// values; the extrapolated values are the prior. Rasterized texels are fixed.
void fit_gutter(const SkinnedTemplate& tpl, const AttributeSet& attrs, const std::vector<float>& valid, int w, int h,
                std::vector<double>& val) {
  constexpr double kDamping = 1e-4;
  const int nc = static_cast<int>(attrs.names.size());
  std::vector<int> unknown(valid.size(), -1);
  std::vector<size_t> texels;
  std::vector<int> rows;
  std::vector<Footprint> prints;
  for (int i = 0; i < tpl.num_vertices(); ++i) {
    const Footprint fp = footprint(tpl.uv(i, 0), tpl.uv(i, 1), w, h);
    bool touches = false;
    for (int k = 0; k < 4; ++k) touches = touches || (valid[fp.texel[k]] < 0.5f && fp.weight[k] > 0);
    if (!touches) continue;
    rows.push_back(i);
    prints.push_back(fp);
    for (int k = 0; k < 4; ++k) {
      const size_t t = fp.texel[k];
      if (valid[t] < 0.5f && fp.weight[k] > 0 && unknown[t] < 0) {
        unknown[t] = static_cast<int>(texels.size());
        texels.push_back(t);
      }
    }
  }
  if (texels.empty()) return;
  const int n = static_cast<int>(texels.size());
  std::vector<Eigen::Triplet<double>> trip;
  for (const auto& fp : prints)
    for (int a = 0; a < 4; ++a) {
      const int ia = unknown[fp.texel[a]];
      if (ia < 0 || fp.weight[a] == 0) continue;
      for (int b = 0; b < 4; ++b) {
        const int ib = unknown[fp.texel[b]];
        if (ib >= 0 && fp.weight[b] != 0) trip.emplace_back(ia, ib, fp.weight[a] * fp.weight[b]);
      }
    }
  for (int k = 0; k < n; ++k) trip.emplace_back(k, k, kDamping);
  Eigen::SparseMatrix<double> normal(n, n);
  normal.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(normal);
  if (ldlt.info() != Eigen::Success) return;
  for (int c = 0; c < nc; ++c) {
    Eigen::VectorXd prior(n), rhs(n);
    for (int k = 0; k < n; ++k) prior(k) = val[texels[k] * nc + c];
    rhs = kDamping * prior;
    double worst = 0;
    for (size_t r = 0; r < rows.size(); ++r) {
      const auto& fp = prints[r];
      double fixed = 0, guess = 0;
      for (int a = 0; a < 4; ++a) {
        const double x = val[fp.texel[a] * nc + c];
        (unknown[fp.texel[a]] >= 0 ? guess : fixed) += fp.weight[a] * x;
      }
      const double target = attrs.values(rows[r], c) - fixed;
      worst = std::max(worst, std::abs(target - guess));
      for (int a = 0; a < 4; ++a)
        if (unknown[fp.texel[a]] >= 0) rhs(unknown[fp.texel[a]]) += fp.weight[a] * target;
    }
    // Already exact (constant or affine data): keep the extrapolation.
    if (worst <= 1e-12) continue;
    const Eigen::VectorXd x = ldlt.solve(rhs);
    for (int k = 0; k < n; ++k) val[texels[k] * nc + c] = x(k);
  }
}

}  // namespace

bool GeometryImage::has(const std::string& name) const { return index(name) >= 0; }

int GeometryImage::index(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

const std::vector<float>& GeometryImage::channel(const std::string& name) const {
  const int i = index(name);
  if (i < 0) throw ArgumentError("geometry image has no channel '" + name + "'");
  return planes[i];
}

std::vector<float>& GeometryImage::channel(const std::string& name) {
  const int i = index(name);
  if (i < 0) throw ArgumentError("geometry image has no channel '" + name + "'");
  return planes[i];
}

std::vector<float>& GeometryImage::add_channel(const std::string& name) {
  if (has(name)) throw ArgumentError("geometry image already has channel '" + name + "'");
  names.push_back(name);
  planes.emplace_back(texels(), 0.0f);
  return planes.back();
}

const std::vector<std::string>& known_channels() {
  static const std::vector<std::string> names = {
      "position.x",  "position.y",  "position.z",  "normal.x",   "normal.y",   "normal.z",
      "color.r",     "color.g",     "color.b",     "tightness.x", "tightness.y", "tightness.z",
      "mask.upper",  "mask.lower",  "valid"};
  return names;
}

void AttributeSet::add(const std::vector<std::string>& plane_names, const Eigen::MatrixXd& cols) {
  if (static_cast<Eigen::Index>(plane_names.size()) != cols.cols())
    throw ArgumentError("AttributeSet::add: name count does not match columns");
  if (values.size() > 0 && cols.rows() != values.rows())
    throw ArgumentError("AttributeSet::add: row count mismatch");
  for (const auto& n : plane_names)
    if (index(n) >= 0) throw ArgumentError("AttributeSet::add: duplicate plane '" + n + "'");
  Eigen::MatrixXd merged(cols.rows(), values.cols() + cols.cols());
  if (values.cols() > 0) merged.leftCols(values.cols()) = values;
  merged.rightCols(cols.cols()) = cols;
  values = std::move(merged);
  names.insert(names.end(), plane_names.begin(), plane_names.end());
}

int AttributeSet::index(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

Eigen::MatrixXd AttributeSet::columns(const std::vector<std::string>& plane_names) const {
  Eigen::MatrixXd out(values.rows(), static_cast<Eigen::Index>(plane_names.size()));
  for (size_t k = 0; k < plane_names.size(); ++k) {
    const int i = index(plane_names[k]);
    if (i < 0) throw ArgumentError("attribute set has no plane '" + plane_names[k] + "'");
    out.col(static_cast<Eigen::Index>(k)) = values.col(i);
  }
  return out;
}

AttributeSet surface_attributes(const TriMesh& mesh) {
  AttributeSet a;
  a.add({"position.x", "position.y", "position.z"}, mesh.vertices);
  const Vertices n = mesh.normals.rows() == mesh.vertices.rows() ? mesh.normals : vertex_normals(mesh).normals;
  a.add({"normal.x", "normal.y", "normal.z"}, n);
  const Colors c = mesh.has_colors() ? mesh.colors : Colors::Constant(mesh.num_vertices(), 3, 0.5);
  a.add({"color.r", "color.g", "color.b"}, c);
  return a;
}

GeometryImage rasterize_gi(const SkinnedTemplate& tpl, const AttributeSet& attrs, int res) {
  if (res < 2 || res > 8192) throw ArgumentError("rasterize_gi: resolution must be in [2, 8192]");
  if (attrs.values.rows() != tpl.num_vertices())
    throw ArgumentError("rasterize_gi: " + std::to_string(attrs.values.rows()) + " attribute rows for " +
                        std::to_string(tpl.num_vertices()) + " template vertices");
  const auto& known = known_channels();
  for (const auto& n : attrs.names) {
    if (n == "valid" || std::find(known.begin(), known.end(), n) == known.end())
      throw ArgumentError("rasterize_gi: unsupported plane '" + n + "'");
  }
  GeometryImage gi;
  gi.width = gi.height = res;
  gi.uv_version = uv_version_hash(tpl);
  const int nc = static_cast<int>(attrs.names.size());
  for (const auto& n : attrs.names) gi.add_channel(n);
  std::vector<float> valid(gi.texels(), 0.0f);
  const int w = res, h = res;
  // Double accumulators until the end so extrapolation works on unrounded values.
  std::vector<double> val(gi.texels() * static_cast<size_t>(nc), 0.0);

  // Affine interpolant of face f at pixel point q; barycentrics may be negative.
  std::vector<std::array<Vec2, 3>> corners(static_cast<size_t>(tpl.mesh.num_faces()));
  std::vector<double> areas(corners.size(), 0.0);
  auto barycentric = [&](int f, const Vec2& q) {
    const auto& p = corners[f];
    auto edge = [&](const Vec2& a, const Vec2& b) { return (b - a).x() * (q - a).y() - (b - a).y() * (q - a).x(); };
    const double b0 = edge(p[1], p[2]) / areas[f], b1 = edge(p[2], p[0]) / areas[f];
    return Vec3(b0, b1, 1.0 - b0 - b1);
  };
  auto interpolate = [&](int f, const Vec3& b, size_t t) {
    const int va = tpl.mesh.faces(f, 0), vb = tpl.mesh.faces(f, 1), vc = tpl.mesh.faces(f, 2);
    for (int c = 0; c < nc; ++c)
      val[t * nc + c] = b(0) * attrs.values(va, c) + b(1) * attrs.values(vb, c) + b(2) * attrs.values(vc, c);
  };
  std::vector<int> owner(gi.texels(), -1);
  for (int f = 0; f < tpl.mesh.num_faces(); ++f) {
    if (tpl.face_chart[f] < 0) continue;
    auto& p = corners[f];
    for (int c = 0; c < 3; ++c) p[c] = Vec2(tpl.face_uv(f, 2 * c) * w, tpl.face_uv(f, 2 * c + 1) * h);
    areas[f] = (p[1] - p[0]).x() * (p[2] - p[0]).y() - (p[1] - p[0]).y() * (p[2] - p[0]).x();
    if (std::abs(areas[f]) < 1e-14) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({p[0].x(), p[1].x(), p[2].x()}) - 0.5)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max({p[0].x(), p[1].x(), p[2].x()}) - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({p[0].y(), p[1].y(), p[2].y()}) - 0.5)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max({p[0].y(), p[1].y(), p[2].y()}) - 0.5)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Vec3 b = barycentric(f, Vec2(x + 0.5, y + 0.5));
        constexpr double tol = -1e-9;
        if (b(0) < tol || b(1) < tol || b(2) < tol) continue;
        const size_t t = static_cast<size_t>(y) * w + x;
        valid[t] = 1.0f;
        owner[t] = f;
        interpolate(f, b, t);
      }
  }

  // Gutter: texels near the charts extend the affine interpolant of the
  // nearest rasterized face (uv distance); the rest copy their nearest
  // filled texel.
  constexpr int kWindow = 3;
  std::vector<int> extended(owner);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t t = static_cast<size_t>(y) * w + x;
      if (owner[t] >= 0) continue;
      const Vec3 q(x + 0.5, y + 0.5, 0.0);
      int best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (int yy = std::max(0, y - kWindow); yy <= std::min(h - 1, y + kWindow); ++yy)
        for (int xx = std::max(0, x - kWindow); xx <= std::min(w - 1, x + kWindow); ++xx) {
          const int f = owner[static_cast<size_t>(yy) * w + xx];
          if (f < 0 || f == best) continue;
          const auto& p = corners[f];
          const double d = closest_point_on_triangle<double>(q, Vec3(p[0].x(), p[0].y(), 0), Vec3(p[1].x(), p[1].y(), 0),
                                                              Vec3(p[2].x(), p[2].y(), 0))
                               .squared_distance;
          if (d < best_d || (d == best_d && f < best)) {
            best_d = d;
            best = f;
          }
        }
      if (best < 0) continue;
      extended[t] = best;
      interpolate(best, barycentric(best, Vec2(q.x(), q.y())), t);
    }
  const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
  std::deque<size_t> queue;
  std::vector<std::uint8_t> filled(gi.texels());
  for (size_t t = 0; t < gi.texels(); ++t) {
    filled[t] = extended[t] >= 0;
    if (filled[t]) queue.push_back(t);
  }
  while (!queue.empty()) {
    const size_t t = queue.front();
    queue.pop_front();
    const int x = static_cast<int>(t % w), y = static_cast<int>(t / w);
    for (int d = 0; d < 4; ++d) {
      const int nx = x + dx[d], ny = y + dy[d];
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      const size_t u = static_cast<size_t>(ny) * w + nx;
      if (filled[u]) continue;
      filled[u] = 1;
      for (int c = 0; c < nc; ++c) val[u * nc + c] = val[t * nc + c];
      queue.push_back(u);
    }
  }

  fit_gutter(tpl, attrs, valid, w, h, val);

  // Unit normals and clamped masks.
  const int nx = attrs.index("normal.x"), ny = attrs.index("normal.y"), nz = attrs.index("normal.z");
  for (size_t t = 0; t < gi.texels(); ++t) {
    if (nx >= 0 && ny >= 0 && nz >= 0 && valid[t] > 0.5f) {
      const double len = std::sqrt(val[t * nc + nx] * val[t * nc + nx] + val[t * nc + ny] * val[t * nc + ny] +
                                   val[t * nc + nz] * val[t * nc + nz]);
      if (len > 1e-12)
        for (int c : {nx, ny, nz}) val[t * nc + c] /= len;
    }
    for (int c = 0; c < nc; ++c) {
      double v = val[t * nc + c];
      if (attrs.names[c].rfind("mask.", 0) == 0) v = std::clamp(v, 0.0, 1.0);
      gi.planes[c][t] = static_cast<float>(v);
    }
  }
  gi.names.push_back("valid");
  gi.planes.push_back(std::move(valid));
  return gi;
}

AttributeSet inverse_gi(const GeometryImage& gi, const SkinnedTemplate& tpl, const std::vector<std::string>& req) {
  const std::uint32_t version = uv_version_hash(tpl);
  if (gi.uv_version != version)
    throw ArgumentError("inverse_gi: image uv_version " + std::to_string(gi.uv_version) +
                        " does not match template atlas " + std::to_string(version));
  if (gi.width < 1 || gi.height < 1) throw ArgumentError("inverse_gi: empty image");
  std::vector<std::string> names = req;
  if (names.empty())
    for (const auto& n : gi.names)
      if (n != "valid") names.push_back(n);
  const int nv = tpl.num_vertices();
  Eigen::MatrixXd out(nv, static_cast<Eigen::Index>(names.size()));
  std::vector<const std::vector<float>*> planes;
  for (const auto& n : names) planes.push_back(&gi.channel(n));
  const int w = gi.width, h = gi.height;
  for (int i = 0; i < nv; ++i) {
    const double fx = tpl.uv(i, 0) * w - 0.5, fy = tpl.uv(i, 1) * h - 0.5;
    const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
    const double ax = fx - x0, ay = fy - y0;
    const int xa = std::clamp(x0, 0, w - 1), xb = std::clamp(x0 + 1, 0, w - 1);
    const int ya = std::clamp(y0, 0, h - 1), yb = std::clamp(y0 + 1, 0, h - 1);
    for (size_t k = 0; k < names.size(); ++k) {
      const auto& p = *planes[k];
      // Lerp form keeps constant neighbourhoods exact.
      const double top = p[ya * w + xa] + ax * (p[ya * w + xb] - p[ya * w + xa]);
      const double bottom = p[yb * w + xa] + ax * (p[yb * w + xb] - p[yb * w + xa]);
      const double v = top + ay * (bottom - top);
      out(i, static_cast<Eigen::Index>(k)) = v;
    }
  }
  AttributeSet a;
  a.add(names, out);
  return a;
}

void validate(const GeometryImage& gi) {
  if (gi.width < 1 || gi.height < 1) throw ValidationError("geometry image: empty dimensions");
  if (gi.names.size() != gi.planes.size()) throw ValidationError("geometry image: names and planes differ in count");
  const auto& known = known_channels();
  for (size_t c = 0; c < gi.names.size(); ++c) {
    if (std::find(known.begin(), known.end(), gi.names[c]) == known.end())
      throw ValidationError("geometry image: unknown channel '" + gi.names[c] + "'");
    if (std::count(gi.names.begin(), gi.names.end(), gi.names[c]) != 1)
      throw ValidationError("geometry image: duplicate channel '" + gi.names[c] + "'");
    if (gi.planes[c].size() != gi.texels())
      throw ValidationError("geometry image: channel '" + gi.names[c] + "' has the wrong size");
    const bool unit = gi.names[c] == "valid" || gi.names[c].rfind("mask.", 0) == 0;
    if (unit)
      for (float v : gi.planes[c])
        if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("geometry image: '" + gi.names[c] + "' outside [0, 1]");
    if (gi.names[c] == "valid")
      for (float v : gi.planes[c])
        if (v != 0.0f && v != 1.0f) throw ValidationError("geometry image: valid plane is not binary");
  }
}

std::vector<std::uint8_t> encode_gi(const GeometryImage& gi) {
  validate(gi);
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(gi.width));
  put_u32(out, static_cast<std::uint32_t>(gi.height));
  put_u32(out, static_cast<std::uint32_t>(gi.names.size()));
  put_u32(out, gi.uv_version);
  out.reserve(out.size() + gi.names.size() * (gi.texels() * 4 + 32));
  for (size_t c = 0; c < gi.names.size(); ++c) {
    if (gi.names[c].size() > 255) throw ArgumentError("encode_gi: channel name too long");
    out.push_back(static_cast<std::uint8_t>(gi.names[c].size()));
    out.insert(out.end(), gi.names[c].begin(), gi.names[c].end());
    for (float v : gi.planes[c]) put_f32(out, v);
  }
  return out;
}

GeometryImage decode_gi(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (magic != std::string(kMagic, 4)) throw FormatError("CGI1: bad magic at offset 0");
  GeometryImage gi;
  const std::uint32_t w = r.u32("width"), h = r.u32("height"), n = r.u32("channel count");
  gi.uv_version = r.u32("uv_version");
  if (w == 0 || h == 0 || w > 65536 || h > 65536)
    throw FormatError("CGI1: bad dimensions " + std::to_string(w) + "x" + std::to_string(h) + " at offset 4");
  gi.width = static_cast<int>(w);
  gi.height = static_cast<int>(h);
  const auto& known = known_channels();
  for (std::uint32_t c = 0; c < n; ++c) {
    const size_t at = r.pos();
    const std::uint8_t len = r.u8("channel name length");
    const std::string name = r.str(len, "channel name");
    if (std::find(known.begin(), known.end(), name) == known.end())
      throw FormatError("CGI1: unknown channel \"" + name + "\" at offset " + std::to_string(at));
    if (gi.has(name)) throw FormatError("CGI1: duplicate channel \"" + name + "\" at offset " + std::to_string(at));
    r.need(gi.texels() * 4, "channel data");
    std::vector<float> plane(gi.texels());
    for (float& v : plane) v = std::bit_cast<float>(r.u32("channel data"));
    gi.names.push_back(name);
    gi.planes.push_back(std::move(plane));
  }
  if (r.remaining() != 0) throw FormatError("CGI1: trailing bytes at offset " + std::to_string(r.pos()));
  return gi;
}

void write_gi(const GeometryImage& gi, const std::filesystem::path& path) {
  const auto bytes = encode_gi(gi);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write_gi: cannot write " + path.string());
}

GeometryImage read_gi(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("read_gi: cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_gi(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace tightcap
