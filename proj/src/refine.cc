#include <array>
#include <cmath>
#include <map>
#include <set>

#include "tightcap/template.h"

namespace tightcap {

namespace {

// New values are rounded to what the container stores, so refined templates
// still round-trip exactly.
double q(double x) { return round_to_float(x); }

}  // namespace

SkinnedTemplate refine_garment_boundaries(const SkinnedTemplate& tpl) {
  std::set<int> ring_vertices;
  for (const auto& [name, ring] : tpl.boundary_rings) ring_vertices.insert(ring.begin(), ring.end());
  if (ring_vertices.empty()) return tpl;

  const Faces& F = tpl.mesh.faces;
  const int nv = tpl.num_vertices(), nf = tpl.mesh.num_faces();
  auto key = [](int a, int b) { return std::make_pair(std::min(a, b), std::max(a, b)); };

  // Every edge of a face touching a ring is split at its midpoint.
  std::map<std::pair<int, int>, int> mid;
  std::vector<std::pair<int, int>> split_order;
  for (int f = 0; f < nf; ++f) {
    bool touches = false;
    for (int c = 0; c < 3; ++c) touches |= ring_vertices.count(F(f, c)) > 0;
    if (!touches) continue;
    for (int c = 0; c < 3; ++c) {
      const auto e = key(F(f, c), F(f, (c + 1) % 3));
      if (!mid.count(e)) {
        mid[e] = nv + static_cast<int>(split_order.size());
        split_order.push_back(e);
      }
    }
  }
  const int nnew = static_cast<int>(split_order.size());

  SkinnedTemplate out;
  out.rig = tpl.rig;
  out.charts = tpl.charts;
  out.mesh.vertices.resize(nv + nnew, 3);
  out.mesh.vertices.topRows(nv) = tpl.mesh.vertices;
  const bool colors = tpl.mesh.has_colors();
  if (colors) {
    out.mesh.colors.resize(nv + nnew, 3);
    out.mesh.colors.topRows(nv) = tpl.mesh.colors;
  }
  out.uv.resize(nv + nnew, 2);
  out.uv.topRows(nv) = tpl.uv;
  out.vertex_chart = tpl.vertex_chart;
  out.garment_prior = tpl.garment_prior;
  out.vertex_chart.resize(nv + nnew);
  out.garment_prior.resize(nv + nnew);

  // Per-vertex UV of a midpoint comes from the first in-chart face using the
  // edge, so wrap seams interpolate within one chart.
  std::vector<int> uv_face(nnew, -1);
  std::vector<std::array<int, 2>> uv_corner(nnew);
  for (int f = 0; f < nf; ++f)
    for (int c = 0; c < 3; ++c) {
      const auto it = mid.find(key(F(f, c), F(f, (c + 1) % 3)));
      if (it == mid.end()) continue;
      const int k = it->second - nv;
      if (uv_face[k] >= 0 && tpl.face_chart[uv_face[k]] >= 0) continue;
      if (uv_face[k] < 0 || tpl.face_chart[f] >= 0) {
        uv_face[k] = f;
        uv_corner[k] = {c, (c + 1) % 3};
      }
    }
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < nv; ++i)
    for (SkinWeights::InnerIterator it(tpl.skin_weights, i); it; ++it) trip.emplace_back(i, it.col(), it.value());
  for (int k = 0; k < nnew; ++k) {
    const auto [a, b] = split_order[k];
    const int id = nv + k;
    out.mesh.vertices.row(id) = (0.5 * (tpl.mesh.vertices.row(a) + tpl.mesh.vertices.row(b))).unaryExpr(&q);
    if (colors)
      for (int c = 0; c < 3; ++c)
        out.mesh.colors(id, c) = std::round(127.5 * (tpl.mesh.colors(a, c) + tpl.mesh.colors(b, c))) / 255.0;
    const int f = uv_face[k];
    if (tpl.face_chart[f] >= 0) {
      const int c0 = uv_corner[k][0], c1 = uv_corner[k][1];
      out.uv.row(id) = (0.5 * (tpl.face_uv.row(f).segment<2>(2 * c0) + tpl.face_uv.row(f).segment<2>(2 * c1))).unaryExpr(&q);
      out.vertex_chart[id] = tpl.face_chart[f];
    } else {
      out.uv.row(id) = (0.5 * (tpl.uv.row(a) + tpl.uv.row(b))).unaryExpr(&q);
      out.vertex_chart[id] = tpl.vertex_chart[a];
    }
    out.garment_prior[id] = tpl.garment_prior[a];
    std::map<int, double> w;
    for (int end : {a, b})
      for (SkinWeights::InnerIterator it(tpl.skin_weights, end); it; ++it) w[static_cast<int>(it.col())] += 0.5 * it.value();
    for (const auto& [j, x] : w) trip.emplace_back(id, j, q(x));
  }
  out.skin_weights.resize(nv + nnew, tpl.rig.size());
  out.skin_weights.setFromTriplets(trip.begin(), trip.end());

  std::vector<std::array<int, 3>> faces;
  std::vector<std::array<Eigen::Vector2d, 3>> fuv;
  std::vector<int> fchart;
  for (int f = 0; f < nf; ++f) {
    std::array<int, 3> v = {F(f, 0), F(f, 1), F(f, 2)};
    std::array<Eigen::Vector2d, 3> u;
    for (int c = 0; c < 3; ++c) u[c] = tpl.face_uv.row(f).segment<2>(2 * c).transpose();
    std::array<int, 3> m;  // midpoint of edge (c, c+1) or -1
    int count = 0;
    for (int c = 0; c < 3; ++c) {
      const auto it = mid.find(key(v[c], v[(c + 1) % 3]));
      m[c] = it == mid.end() ? -1 : it->second;
      count += m[c] >= 0;
    }
    auto emit = [&](std::array<int, 3> tri, std::array<Eigen::Vector2d, 3> t) {
      faces.push_back(tri);
      fuv.push_back(t);
      fchart.push_back(tpl.face_chart[f]);
    };
    auto muv = [&](int c) { return Eigen::Vector2d((0.5 * (u[c] + u[(c + 1) % 3])).unaryExpr(&q)); };
    if (count == 0) {
      emit(v, u);
    } else if (count == 3) {
      emit({v[0], m[0], m[2]}, {u[0], muv(0), muv(2)});
      emit({m[0], v[1], m[1]}, {muv(0), u[1], muv(1)});
      emit({m[2], m[1], v[2]}, {muv(2), muv(1), u[2]});
      emit({m[0], m[1], m[2]}, {muv(0), muv(1), muv(2)});
    } else if (count == 1) {
      int c = 0;
      while (m[c] < 0) ++c;
      const int a = c, b = (c + 1) % 3, d = (c + 2) % 3;
      emit({v[a], m[c], v[d]}, {u[a], muv(c), u[d]});
      emit({m[c], v[b], v[d]}, {muv(c), u[b], u[d]});
    } else {
      int c = 0;  // the unsplit edge is (c+2, c): split edges are c and c+1
      while (!(m[c] >= 0 && m[(c + 1) % 3] >= 0)) ++c;
      const int a = c, b = (c + 1) % 3, d = (c + 2) % 3;
      const int mab = m[a], mbd = m[b];
      emit({mab, v[b], mbd}, {muv(a), u[b], muv(b)});
      const Vec3 pa = out.mesh.vertices.row(v[a]).transpose(), pd = out.mesh.vertices.row(v[d]).transpose();
      const Vec3 pmab = out.mesh.vertices.row(mab).transpose(), pmbd = out.mesh.vertices.row(mbd).transpose();
      if ((pa - pmbd).squaredNorm() <= (pmab - pd).squaredNorm()) {
        emit({v[a], mab, mbd}, {u[a], muv(a), muv(b)});
        emit({v[a], mbd, v[d]}, {u[a], muv(b), u[d]});
      } else {
        emit({v[a], mab, v[d]}, {u[a], muv(a), u[d]});
        emit({mab, mbd, v[d]}, {muv(a), muv(b), u[d]});
      }
    }
  }
  out.mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  out.face_uv.resize(static_cast<Eigen::Index>(faces.size()), 6);
  for (size_t i = 0; i < faces.size(); ++i) {
    out.mesh.faces.row(i) << faces[i][0], faces[i][1], faces[i][2];
    for (int c = 0; c < 3; ++c) out.face_uv.row(i).segment<2>(2 * c) = fuv[i][c].transpose();
  }
  out.face_chart = fchart;

  for (const auto& [name, ring] : tpl.boundary_rings) {
    std::vector<int> refined;
    for (size_t k = 0; k < ring.size(); ++k) {
      refined.push_back(ring[k]);
      refined.push_back(mid.at(key(ring[k], ring[(k + 1) % ring.size()])));
    }
    out.boundary_rings[name] = refined;
  }
  return out;
}

}  // namespace tightcap
