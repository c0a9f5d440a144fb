#include "render.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace tightcap::cli {

void render_front_view(const TriMesh& mesh, const std::filesystem::path& path, int height,
                       const std::vector<int>& labels) {
  if (mesh.num_vertices() == 0 || mesh.num_faces() == 0) throw ArgumentError("render: empty mesh");
  if (height < 16) throw ArgumentError("render: image height must be at least 16");
  if (!labels.empty() && static_cast<int>(labels.size()) != mesh.num_vertices())
    throw ArgumentError("render: label count does not match the mesh");
  const BoundingBox box = bounding_box(mesh.vertices);
  const double extent_x = box.max.x() - box.min.x(), extent_z = box.max.z() - box.min.z();
  const double scale = 0.9 * height / std::max({extent_x, extent_z, 1e-12});
  const int width = std::max(16, static_cast<int>(std::ceil(extent_x * scale / 0.9)));
  const double cx = 0.5 * (box.min.x() + box.max.x()), cz = 0.5 * (box.min.z() + box.max.z());
  auto to_px = [&](const Vec3& p) {
    return Vec2(0.5 * width + (p.x() - cx) * scale, 0.5 * height - (p.z() - cz) * scale);
  };

  const auto fn = face_normals(mesh.vertices, mesh.faces);
  const Vec3 light = Vec3(0.3, -1.0, 0.4).normalized();
  std::vector<double> depth(static_cast<size_t>(width) * height, std::numeric_limits<double>::infinity());
  std::vector<unsigned char> rgb(static_cast<size_t>(width) * height * 3, 255);

  auto base_color = [&](int v) -> Vec3 {
    if (!labels.empty()) {
      switch (labels[v]) {
        case 1: return Vec3(0.25, 0.45, 0.85);
        case 2: return Vec3(0.3, 0.7, 0.35);
        default: return Vec3(0.75, 0.72, 0.68);
      }
    }
    if (mesh.has_colors()) return mesh.colors.row(v).transpose();
    return Vec3::Constant(0.7);
  };

  for (int f = 0; f < mesh.num_faces(); ++f) {
    const int ids[3] = {mesh.faces(f, 0), mesh.faces(f, 1), mesh.faces(f, 2)};
    Vec2 q[3];
    for (int k = 0; k < 3; ++k) q[k] = to_px(mesh.vertex(ids[k]));
    const double area = (q[1] - q[0]).x() * (q[2] - q[0]).y() - (q[1] - q[0]).y() * (q[2] - q[0]).x();
    if (std::abs(area) < 1e-12) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({q[0].x(), q[1].x(), q[2].x()}))));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({q[0].x(), q[1].x(), q[2].x()}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({q[0].y(), q[1].y(), q[2].y()}))));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({q[0].y(), q[1].y(), q[2].y()}))));
    const Vec3 n = fn.row(f).transpose();
    const double shade = 0.25 + 0.75 * std::abs(n.dot(light));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Vec2 p(x + 0.5, y + 0.5);
        double b[3];
        for (int k = 0; k < 3; ++k) {
          const Vec2& a = q[(k + 1) % 3];
          const Vec2& c = q[(k + 2) % 3];
          b[k] = ((c - a).x() * (p - a).y() - (c - a).y() * (p - a).x()) / area;
        }
        if (b[0] < 0 || b[1] < 0 || b[2] < 0) continue;
        double d = 0;
        Vec3 color = Vec3::Zero();
        for (int k = 0; k < 3; ++k) {
          d += b[k] * mesh.vertices(ids[k], 1);
          color += b[k] * base_color(ids[k]);
        }
        const size_t t = static_cast<size_t>(y) * width + x;
        if (d >= depth[t]) continue;
        depth[t] = d;
        for (int c = 0; c < 3; ++c)
          rgb[3 * t + c] = static_cast<unsigned char>(std::lround(std::clamp(color[c] * shade, 0.0, 1.0) * 255));
      }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

}  // namespace tightcap::cli
