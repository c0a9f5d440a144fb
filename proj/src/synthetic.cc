#include <algorithm>
#include <array>
#include <functional>
#include <cmath>
#include <numeric>
#include <set>

#include "tightcap/geometry.h"
#include "tightcap/template.h"

namespace tightcap {

namespace {

constexpr double kPi = 3.14159265358979323846;

enum Part { kTrunk = 0, kArmL, kArmR, kLegL, kLegR, kPartCount };
const char* const kPartNames[kPartCount] = {"trunk", "arm_l", "arm_r", "leg_l", "leg_r"};

enum Joint {
  kPelvis = 0, kSpine, kChest, kNeck, kHead,
  kShoulderL, kElbowL, kWristL, kShoulderR, kElbowR, kWristR,
  kHipL, kKneeL, kAnkleL, kHipR, kKneeR, kAnkleR, kJointCount
};

// Blend weights along a chain of joints split at `bounds` (ascending) with
// smooth transitions of half-width `half`.
std::vector<double> chain_weights(double t, const std::vector<double>& bounds, const std::vector<double>& half) {
  std::vector<double> w(bounds.size() + 1, 0.0);
  double prev = 1.0;
  for (size_t i = 0; i < bounds.size(); ++i) {
    const double s = smoothstep(0.0, 1.0, (t - (bounds[i] - half[i])) / (2.0 * half[i]));
    w[i] = prev - s;
    prev = s;
  }
  w.back() = prev;
  return w;
}

struct Station {
  double z, a, b;
};

// Meridian profile of the trunk (elliptical cross-sections), bottom pole to
// top pole, sampled densely.
std::vector<Station> trunk_profile(const SynthSpec& s, double hcap, double* neck_lo, double* neck_hi) {
  const double L = s.trunk_length, d = s.trunk_depth;
  std::vector<Station> out;
  const int cap_n = 48;
  for (int i = 0; i <= cap_n; ++i) {
    const double th = 0.5 * kPi * i / cap_n;
    out.push_back({hcap * (1 - std::cos(th)), s.hip_width * std::sin(th), 0.95 * d * std::sin(th)});
  }
  const std::vector<Station> ctrl = {
      {hcap, s.hip_width, 0.95 * d},
      {0.40 * L, s.waist_width, 0.88 * d},
      {0.75 * L, s.chest_width, d},
      {L, 1.02 * s.chest_width, 0.9 * d},
      {L + 0.045, 0.62 * s.chest_width, 0.75 * d},
      {L + 0.075, s.neck_radius, s.neck_radius},
      {L + 0.13, s.neck_radius, s.neck_radius},
  };
  *neck_lo = L + 0.075;
  *neck_hi = L + 0.13;
  for (size_t k = 0; k + 1 < ctrl.size(); ++k) {
    const int n = 32;
    for (int i = 1; i <= n; ++i) {
      const double u = 0.5 * (1 - std::cos(kPi * i / n));
      const double z = ctrl[k].z + (ctrl[k + 1].z - ctrl[k].z) * static_cast<double>(i) / n;
      out.push_back({z, ctrl[k].a + u * (ctrl[k + 1].a - ctrl[k].a), ctrl[k].b + u * (ctrl[k + 1].b - ctrl[k].b)});
    }
  }
  const double hr = s.head_radius, nr = s.neck_radius;
  const double zh = L + 0.13 + std::sqrt(hr * hr - nr * nr);
  const double a0 = std::asin(nr / hr);
  const int head_n = 64;
  for (int i = 1; i <= head_n; ++i) {
    const double al = a0 + (kPi - a0) * i / head_n;
    const double r = i == head_n ? 0.0 : hr * std::sin(al);
    out.push_back({zh - hr * std::cos(al), r, r});
  }
  return out;
}

Station lerp_station(const Station& p, const Station& q, double u) {
  return {p.z + u * (q.z - p.z), p.a + u * (q.a - p.a), p.b + u * (q.b - p.b)};
}

// Resample a polyline profile uniformly by meridian arc length.
std::vector<Station> resample(const std::vector<Station>& prof, int rows, std::vector<double>* arc) {
  std::vector<double> cum(prof.size(), 0.0);
  for (size_t i = 1; i < prof.size(); ++i) {
    const double dr = 0.5 * (prof[i].a + prof[i].b) - 0.5 * (prof[i - 1].a + prof[i - 1].b);
    cum[i] = cum[i - 1] + std::hypot(prof[i].z - prof[i - 1].z, dr);
  }
  std::vector<Station> out;
  arc->clear();
  size_t k = 0;
  for (int r = 0; r <= rows + 1; ++r) {
    const double target = cum.back() * r / (rows + 1);
    while (k + 2 < cum.size() && cum[k + 1] < target) ++k;
    const double u = std::clamp((target - cum[k]) / std::max(cum[k + 1] - cum[k], 1e-15), 0.0, 1.0);
    out.push_back(lerp_station(prof[k], prof[k + 1], u));
    arc->push_back(target);
  }
  return out;  // rows + 2 entries: bottom pole, rows, top pole
}

struct Builder {
  std::vector<Vec3> v;
  std::vector<std::array<int, 3>> f;
  std::vector<std::array<Vec2, 3>> fuv;
  std::vector<int> fchart;
  std::vector<Vec2> vuv;
  std::vector<int> vchart;
  std::vector<std::vector<double>> weights;  // dense per vertex over joints

  int add_vertex(const Vec3& p, int chart, const Vec2& uv, std::vector<double> w) {
    v.push_back(p);
    vchart.push_back(chart);
    vuv.push_back(uv);
    weights.push_back(std::move(w));
    return static_cast<int>(v.size()) - 1;
  }
  void add_face(int a, int b, int c, int chart, const Vec2& ua, const Vec2& ub, const Vec2& uc) {
    f.push_back({a, b, c});
    fuv.push_back({ua, ub, uc});
    fchart.push_back(chart);
  }
};

// Drops vertices no face references (hole interiors); returns old -> new ids.
std::vector<int> compact(Builder& b) {
  std::vector<int> remap(b.v.size(), -1);
  for (const auto& tri : b.f)
    for (int id : tri) remap[id] = 0;
  int next = 0;
  for (size_t i = 0; i < remap.size(); ++i)
    if (remap[i] == 0) {
      remap[i] = next;
      b.v[next] = b.v[i];
      b.vchart[next] = b.vchart[i];
      b.vuv[next] = b.vuv[i];
      b.weights[next] = b.weights[i];
      ++next;
    }
  b.v.resize(next);
  b.vchart.resize(next);
  b.vuv.resize(next);
  b.weights.resize(next);
  for (auto& tri : b.f)
    for (int& id : tri) id = remap[id];
  return remap;
}

struct TubeProfile {
  std::vector<double> t;       // axial keys
  std::vector<double> radius;  // radius at keys
  double radius_at(double x) const {
    if (x <= t.front()) return radius.front();
    for (size_t i = 0; i + 1 < t.size(); ++i)
      if (x <= t[i + 1]) {
        const double u = 0.5 * (1 - std::cos(kPi * (x - t[i]) / (t[i + 1] - t[i])));
        return radius[i] + u * (radius[i + 1] - radius[i]);
      }
    return radius.back();
  }
};

struct TubeResult {
  std::vector<std::vector<int>> rings;  // rings[0] is the attachment loop
  std::vector<double> ring_t;
  double chart_w = 0, chart_h = 0;
};

// Grows a tube out of `loop` along `axis`, ending in a hemispherical cap.
// Ring 0 is the loop itself; UVs are local chart coordinates.
TubeResult grow_tube(Builder& bld, std::vector<int> loop, const Vec3& axis, double t_end, const TubeProfile& prof,
                     double edge, int chart, const std::function<std::vector<double>(double, const Vec3&)>& weight_fn) {
  // Orient so that the new faces use loop edges opposite to the existing ones.
  {
    std::set<std::pair<int, int>> directed;
    for (const auto& tri : bld.f)
      for (int k = 0; k < 3; ++k) directed.insert({tri[k], tri[(k + 1) % 3]});
    if (directed.count({loop[0], loop[1]})) std::reverse(loop.begin(), loop.end());
  }
  const int n = static_cast<int>(loop.size());
  Vec3 c0 = Vec3::Zero();
  for (int id : loop) c0 += bld.v[id];
  c0 /= n;
  // Arc-length angle of each loop vertex, anchored at the first vertex.
  std::vector<double> cum(n + 1, 0.0);
  for (int i = 0; i < n; ++i) cum[i + 1] = cum[i] + (bld.v[loop[(i + 1) % n]] - bld.v[loop[i]]).norm();
  Vec3 e1 = bld.v[loop[0]] - c0;
  e1 -= axis * axis.dot(e1);
  e1.normalize();
  Vec3 e2 = axis.cross(e1);
  // Pick the angular direction that follows the loop order.
  {
    Vec3 p1 = bld.v[loop[n / 4]] - c0;
    if (p1.dot(e2) < 0) e2 = -e2;
  }
  std::vector<double> phi(n);
  for (int i = 0; i < n; ++i) phi[i] = 2 * kPi * cum[i] / cum[n];

  const double r_tip = prof.radius_at(t_end);
  const double t_cap = t_end - r_tip;  // start of the end cap
  TubeResult res;
  res.rings.push_back(loop);
  res.ring_t.push_back(0.0);
  const int n_body = std::max(2, static_cast<int>(std::ceil(t_cap / edge)));
  const double blend_len = std::min(0.06, 0.3 * t_cap);
  const double circ = 2 * kPi * prof.radius_at(0.5 * t_cap);
  const int n_cap = std::max(2, static_cast<int>(std::ceil(0.5 * kPi * r_tip / edge)));
  std::vector<double> ts;
  std::vector<double> rs;
  for (int j = 1; j <= n_body; ++j) {
    ts.push_back(t_cap * j / n_body);
    rs.push_back(prof.radius_at(ts.back()));
  }
  for (int j = 1; j < n_cap; ++j) {
    const double al = 0.5 * kPi * j / n_cap;
    ts.push_back(t_cap + r_tip * std::sin(al));
    rs.push_back(r_tip * std::cos(al));
  }
  // Chart v coordinate: meridian arc length.
  std::vector<double> vcoord(ts.size());
  double acc = 0;
  for (size_t j = 0; j < ts.size(); ++j) {
    const double dt = j == 0 ? 0.0 : ts[j] - ts[j - 1];
    const double dr = j == 0 ? 0.0 : rs[j] - rs[j - 1];
    acc += std::hypot(dt, dr);
    vcoord[j] = acc;
  }
  const double cap_arc = std::hypot(t_end - ts.back(), rs.back());
  res.chart_w = circ;
  res.chart_h = acc + cap_arc;

  for (size_t j = 0; j < ts.size(); ++j) {
    const double b = smoothstep(0.0, 1.0, ts[j] / blend_len);
    std::vector<int> ring(n);
    for (int i = 0; i < n; ++i) {
      const Vec3 from_loop = bld.v[loop[i]] + axis * ts[j];
      const Vec3 on_circle = c0 + axis * ts[j] + rs[j] * (std::cos(phi[i]) * e1 + std::sin(phi[i]) * e2);
      const Vec3 p = (1 - b) * from_loop + b * on_circle;
      ring[i] = bld.add_vertex(p, chart, Vec2(circ * i / n, vcoord[j]), weight_fn(ts[j], p));
    }
    res.rings.push_back(ring);
    res.ring_t.push_back(ts[j]);
  }
  const Vec3 tip_p = c0 + axis * t_end;
  const double v_tip = res.chart_h;
  // The tip samples the atlas at the middle apex of its fan, away from the chart corners.
  const int tip = bld.add_vertex(tip_p, chart, Vec2(circ * (n / 2 + 0.5) / n, v_tip), weight_fn(t_end, tip_p));

  for (size_t j = 0; j + 1 < res.rings.size(); ++j) {
    const auto& r0 = res.rings[j];
    const auto& r1 = res.rings[j + 1];
    const bool seam = j == 0;
    for (int i = 0; i < n; ++i) {
      const int i1 = (i + 1) % n;
      const double u0 = circ * i / n, u1 = circ * (i + 1) / n;
      const double va = seam ? 0.0 : vcoord[j - 1], vb = vcoord[j];
      const Vec2 a(u0, va), bq(u1, va), c(u1, vb), d(u0, vb);
      if (seam) {
        bld.add_face(r0[i], r0[i1], r1[i1], -1, bld.vuv[r0[i]], bld.vuv[r0[i1]], c);
        bld.add_face(r0[i], r1[i1], r1[i], -1, bld.vuv[r0[i]], c, d);
      } else {
        bld.add_face(r0[i], r0[i1], r1[i1], chart, a, bq, c);
        bld.add_face(r0[i], r1[i1], r1[i], chart, a, c, d);
      }
    }
  }
  const auto& last = res.rings.back();
  const double vl = vcoord.back();
  for (int i = 0; i < n; ++i) {
    const int i1 = (i + 1) % n;
    bld.add_face(last[i], last[i1], tip, chart, Vec2(circ * i / n, vl), Vec2(circ * (i + 1) / n, vl),
                 Vec2(circ * (i + 0.5) / n, v_tip));
  }
  return res;
}

// Boundary loop of a rectangular hole in the trunk grid, quads
// [s0, s1) x [r0, r1), traversed around the rectangle.
std::vector<int> hole_loop(const std::vector<std::vector<int>>& grid, int s0, int s1, int r0, int r1) {
  std::vector<int> loop;
  for (int s = s0; s < s1; ++s) loop.push_back(grid[r0][s]);
  for (int r = r0; r < r1; ++r) loop.push_back(grid[r][s1]);
  for (int s = s1; s > s0; --s) loop.push_back(grid[r1][s]);
  for (int r = r1; r > r0; --r) loop.push_back(grid[r][s0]);
  return loop;
}

struct PackedRect {
  double x, y, scale;
};

// Bottom-left packing of chart rectangles into the unit square with a
// margin: tallest first, each at the lowest (then leftmost) free corner.
std::vector<PackedRect> pack_charts(const std::vector<Vec2>& sizes, double margin) {
  std::vector<int> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sizes[a].y() > sizes[b].y(); });
  double area = 0;
  for (const auto& s : sizes) area += s.x() * s.y();
  for (double side = std::sqrt(area);; side *= 1.01) {
    const double m = margin * side;
    std::vector<PackedRect> out(sizes.size());
    std::vector<std::pair<Vec2, Vec2>> placed;  // min, max including the trailing margin
    bool ok = true;
    for (int id : order) {
      const Vec2 s = sizes[id];
      std::vector<Vec2> cand = {Vec2(m, m)};
      for (const auto& [lo, hi] : placed) {
        cand.emplace_back(hi.x(), lo.y());
        cand.emplace_back(lo.x(), hi.y());
        cand.emplace_back(hi.x(), m);
        cand.emplace_back(m, hi.y());
      }
      std::sort(cand.begin(), cand.end(), [](const Vec2& a, const Vec2& b) {
        return a.y() < b.y() || (a.y() == b.y() && a.x() < b.x());
      });
      bool found = false;
      for (const Vec2& c : cand) {
        const Vec2 hi = c + s + Vec2(m, m);
        if (hi.x() > side || hi.y() > side) continue;
        bool overlap = false;
        for (const auto& [plo, phi] : placed)
          overlap |= c.x() < phi.x() && plo.x() < hi.x() && c.y() < phi.y() && plo.y() < hi.y();
        if (overlap) continue;
        placed.emplace_back(c, hi);
        out[id] = {c.x() / side, c.y() / side, 1.0 / side};
        found = true;
        break;
      }
      if (!found) {
        ok = false;
        break;
      }
    }
    if (ok) return out;
  }
}

}  // namespace

const std::vector<std::string>& synthetic_joint_names() {
  static const std::vector<std::string> names = {
      "pelvis", "spine", "chest", "neck", "head", "shoulder_l", "elbow_l", "wrist_l", "shoulder_r",
      "elbow_r", "wrist_r", "hip_l", "knee_l", "ankle_l", "hip_r", "knee_r", "ankle_r"};
  return names;
}

void validate(const SynthSpec& s) {
  const double dims[] = {s.height_scale, s.hip_width, s.waist_width, s.chest_width, s.trunk_depth,
                         s.trunk_length, s.neck_radius, s.head_radius, s.upper_arm_length,
                         s.forearm_length, s.hand_length, s.arm_radius, s.thigh_length,
                         s.shin_length, s.foot_length, s.leg_radius, s.edge_length};
  for (double d : dims)
    if (!(d > 0) || !std::isfinite(d)) throw ArgumentError("synth spec: all dimensions must be positive");
  if (!(s.clothing_offset >= 0)) throw ArgumentError("synth spec: clothing offset must be non-negative");
  if (s.neck_radius >= s.head_radius) throw ArgumentError("synth spec: neck radius must be below head radius");
}

SkinnedTemplate generate_synthetic_template(const SynthSpec& spec_in) {
  validate(spec_in);
  SynthSpec s = spec_in;
  const double k = s.height_scale;
  for (double* d : {&s.hip_width, &s.waist_width, &s.chest_width, &s.trunk_depth, &s.trunk_length,
                    &s.neck_radius, &s.head_radius, &s.upper_arm_length, &s.forearm_length, &s.hand_length,
                    &s.arm_radius, &s.thigh_length, &s.shin_length, &s.foot_length, &s.leg_radius})
    *d *= k;
  const double edge = s.edge_length;
  const double hcap = 0.06 * k;

  // Trunk grid.
  double neck_lo = 0, neck_hi = 0;
  const auto dense = trunk_profile(s, hcap, &neck_lo, &neck_hi);
  std::vector<double> arc;
  double meridian = 0;
  for (size_t i = 1; i < dense.size(); ++i)
    meridian += std::hypot(dense[i].z - dense[i - 1].z,
                           0.5 * (dense[i].a + dense[i].b - dense[i - 1].a - dense[i - 1].b));
  const int rows = std::max(8, static_cast<int>(std::ceil(meridian / edge)) - 1);
  const auto st = resample(dense, rows, &arc);
  double max_a = 0, max_b = 0;
  for (const auto& x : st) {
    max_a = std::max(max_a, x.a);
    max_b = std::max(max_b, x.b);
  }
  const double perimeter = kPi * (3 * (max_a + max_b) - std::sqrt((3 * max_a + max_b) * (max_a + 3 * max_b)));
  const int ns = std::max(16, 4 * static_cast<int>(std::round(perimeter / edge / 4)));
  const double dphi = 2 * kPi / ns;
  auto phi_of = [&](int sec) { return -0.5 * kPi + dphi * sec; };

  // Joint rest positions (z relative to the crotch pole).
  const double L = s.trunk_length;
  std::vector<Vec3> jp(kJointCount, Vec3::Zero());
  jp[kPelvis] = Vec3(0, 0, 0.18 * L);
  jp[kSpine] = Vec3(0, 0, 0.40 * L);
  jp[kChest] = Vec3(0, 0, 0.72 * L);
  jp[kNeck] = Vec3(0, 0, neck_lo);
  jp[kHead] = Vec3(0, 0, neck_hi);

  auto trunk_weights = [&](double z) {
    std::vector<double> w(kJointCount, 0.0);
    const auto c = chain_weights(z, {jp[kSpine].z(), jp[kChest].z(), jp[kNeck].z(), jp[kHead].z()},
                                 {0.05 * k, 0.06 * k, 0.02 * k, 0.02 * k});
    const int ids[] = {kPelvis, kSpine, kChest, kNeck, kHead};
    for (int i = 0; i < 5; ++i) w[ids[i]] = c[i];
    return w;
  };

  Builder bld;
  std::vector<std::vector<int>> grid(rows, std::vector<int>(ns + 1));
  for (int r = 0; r < rows; ++r) {
    const Station& x = st[r + 1];
    for (int sec = 0; sec < ns; ++sec) {
      const double ph = phi_of(sec);
      grid[r][sec] = bld.add_vertex(Vec3(x.a * std::cos(ph), x.b * std::sin(ph), x.z), kTrunk,
                                    Vec2(perimeter * sec / ns, arc[r + 1]), trunk_weights(x.z));
    }
    grid[r][ns] = grid[r][0];
  }
  const int pole_lo = bld.add_vertex(Vec3(0, 0, st.front().z), kTrunk, Vec2(perimeter * 0.5 / ns, 0.0),
                                     trunk_weights(st.front().z));
  const int pole_hi = bld.add_vertex(Vec3(0, 0, st.back().z), kTrunk, Vec2(perimeter * 0.5 / ns, arc.back()),
                                     trunk_weights(st.back().z));

  int pole_lo_id = pole_lo;

  // Holes: arms at phi = 0 / pi on the chest sides, legs on the bottom cap.
  const int sc_l = ns / 4, sc_r = 3 * ns / 4;
  const int ha = std::max(2, static_cast<int>(std::round(std::asin(std::min(0.95, s.arm_radius / (0.9 * s.trunk_depth))) / dphi)));
  const double z_sh = L;
  int ra0 = -1, ra1 = -1;
  for (int r = 0; r < rows; ++r) {
    const double z = st[r + 1].z;
    if (ra0 < 0 && z >= z_sh - 2.0 * s.arm_radius) ra0 = r;
    if (z <= z_sh - 0.1 * s.arm_radius) ra1 = r;
  }
  ra1 = std::max(ra1, ra0 + 2);
  const int hl = std::max(2, static_cast<int>(std::round(0.30 * kPi / dphi)));
  int rl0 = -1, rl1 = -1;
  for (int r = 0; r < rows; ++r) {
    const Station& x = st[r + 1];
    if (x.z > hcap) break;
    const double rel = x.a / s.hip_width;
    if (rl0 < 0 && rel >= 0.30) rl0 = r;
    if (rel <= 0.96) rl1 = r;
  }
  rl0 = std::max(rl0, 1);
  rl1 = std::max(rl1, rl0 + 2);

  auto in_hole = [&](int sec, int r) {
    auto in_range = [&](int c, int h) { return sec >= c - h && sec < c + h; };
    if (r >= ra0 && r < ra1 && (in_range(sc_l, ha) || in_range(sc_r, ha))) return true;
    if (r >= rl0 && r < rl1 && (in_range(sc_l, hl) || in_range(sc_r, hl))) return true;
    return false;
  };
  for (int r = 0; r + 1 < rows; ++r)
    for (int sec = 0; sec < ns; ++sec) {
      if (in_hole(sec, r)) continue;
      const int a = grid[r][sec], b = grid[r][sec + 1], c = grid[r + 1][sec + 1], d = grid[r + 1][sec];
      const Vec2 ua(perimeter * sec / ns, arc[r + 1]), ub(perimeter * (sec + 1) / ns, arc[r + 1]);
      const Vec2 uc(perimeter * (sec + 1) / ns, arc[r + 2]), ud(perimeter * sec / ns, arc[r + 2]);
      bld.add_face(a, b, c, kTrunk, ua, ub, uc);
      bld.add_face(a, c, d, kTrunk, ua, uc, ud);
    }
  for (int sec = 0; sec < ns; ++sec) {
    const double um = perimeter * (sec + 0.5) / ns;
    bld.add_face(pole_lo, grid[0][sec + 1], grid[0][sec], kTrunk, Vec2(um, 0.0),
                 Vec2(perimeter * (sec + 1) / ns, arc[1]), Vec2(perimeter * sec / ns, arc[1]));
    bld.add_face(pole_hi, grid[rows - 1][sec], grid[rows - 1][sec + 1], kTrunk, Vec2(um, arc.back()),
                 Vec2(perimeter * sec / ns, arc[rows]), Vec2(perimeter * (sec + 1) / ns, arc[rows]));
  }

  // Limbs.
  struct LimbDef {
    int part, sc, half, r0, r1;
    Vec3 axis;
    int j0, j1, j2;  // root, middle, distal joint of the chain
    double len0, len1, len2, radius;
    bool arm;
  };
  const std::vector<LimbDef> limbs = {
      {kArmL, sc_l, ha, ra0, ra1, Vec3::UnitX(), kShoulderL, kElbowL, kWristL, s.upper_arm_length,
       s.forearm_length, s.hand_length, s.arm_radius, true},
      {kArmR, sc_r, ha, ra0, ra1, -Vec3::UnitX(), kShoulderR, kElbowR, kWristR, s.upper_arm_length,
       s.forearm_length, s.hand_length, s.arm_radius, true},
      {kLegL, sc_l, hl, rl0, rl1, -Vec3::UnitZ(), kHipL, kKneeL, kAnkleL, s.thigh_length, s.shin_length,
       s.foot_length, s.leg_radius, false},
      {kLegR, sc_r, hl, rl0, rl1, -Vec3::UnitZ(), kHipR, kKneeR, kAnkleR, s.thigh_length, s.shin_length,
       s.foot_length, s.leg_radius, false},
  };
  std::vector<TubeResult> tubes(kPartCount);
  for (const auto& lb : limbs) {
    const auto loop = hole_loop(grid, lb.sc - lb.half, lb.sc + lb.half, lb.r0, lb.r1);
    Vec3 c0 = Vec3::Zero();
    for (int id : loop) c0 += bld.v[id];
    c0 /= static_cast<double>(loop.size());
    // Root joint a little inside the body, distal joints along the axis.
    const double t_root = lb.arm ? -0.5 * lb.radius : -0.6 * lb.radius;
    jp[lb.j0] = c0 + lb.axis * t_root;
    if (lb.arm) jp[lb.j0].y() = 0;
    const double t1 = t_root + lb.len0, t2 = t1 + lb.len1, t_end = t2 + lb.len2;
    jp[lb.j1] = jp[lb.j0] + lb.axis * lb.len0;
    jp[lb.j2] = jp[lb.j1] + lb.axis * lb.len1;
    TubeProfile prof;
    const double r = lb.radius;
    if (lb.arm) {
      prof.t = {0.0, t1, 0.5 * (t1 + t2), t2, t2 + 0.5 * lb.len2, t_end};
      prof.radius = {r, 0.8 * r, 0.78 * r, 0.62 * r, 0.72 * r, 0.7 * r};
    } else {
      prof.t = {0.0, 0.5 * t1, t1, t1 + 0.3 * lb.len1, t2, t_end};
      prof.radius = {r, 0.85 * r, 0.6 * r, 0.66 * r, 0.42 * r, 0.5 * r};
    }
    const LimbDef def = lb;
    auto wfn = [&, def, t1, t2](double t, const Vec3& p) {
      std::vector<double> w(kJointCount, 0.0);
      const auto trunk = trunk_weights(p.z());
      const auto c = chain_weights(t, {t1, t2}, {0.04 * k, 0.02 * k});
      const double blend = smoothstep(0.0, 1.0, t / (0.05 * k));
      for (int j = 0; j < kJointCount; ++j) w[j] = (1 - blend) * trunk[j];
      w[def.j0] += blend * c[0];
      w[def.j1] += blend * c[1];
      w[def.j2] += blend * c[2];
      return w;
    };
    tubes[lb.part] = grow_tube(bld, loop, lb.axis, t_end, prof, edge, lb.part, wfn);
  }

  {
    const auto remap = compact(bld);
    for (auto& row : grid)
      for (int& id : row) id = remap[id];
    for (auto& tube : tubes)
      for (auto& ring : tube.rings)
        for (int& id : ring) id = remap[id];
    pole_lo_id = remap[pole_lo];
  }

  // Light smoothing of the junction band (loop and one ring either side).
  {
    std::set<int> band;
    for (const auto& lb : limbs) {
      const auto& tube = tubes[lb.part];
      for (int j = 0; j <= 2 && j < static_cast<int>(tube.rings.size()); ++j)
        for (int id : tube.rings[j]) band.insert(id);
    }
    std::vector<std::vector<int>> adj(bld.v.size());
    for (const auto& tri : bld.f)
      for (int e = 0; e < 3; ++e) {
        adj[tri[e]].push_back(tri[(e + 1) % 3]);
        adj[tri[(e + 1) % 3]].push_back(tri[e]);
      }
    for (int it = 0; it < 3; ++it) {
      std::vector<Vec3> next = bld.v;
      for (int id : band) {
        Vec3 m = Vec3::Zero();
        for (int nb : adj[id]) m += bld.v[nb];
        next[id] = 0.5 * bld.v[id] + 0.5 * m / static_cast<double>(adj[id].size());
      }
      bld.v = next;
    }
  }

  // Shift so the lowest point is at z = 0.
  double zmin = 1e300;
  for (const auto& p : bld.v) zmin = std::min(zmin, p.z());
  for (auto& p : bld.v) p.z() -= zmin;
  for (auto& p : jp) p.z() -= zmin;

  // Rig.
  SkinnedTemplate tpl;
  JointRig& rig = tpl.rig;
  rig.names = synthetic_joint_names();
  rig.parents = {-1, kPelvis, kSpine, kChest, kNeck, kChest, kShoulderL, kElbowL, kChest, kShoulderR, kElbowR,
                 kPelvis, kHipL, kKneeL, kPelvis, kHipR, kKneeR};
  rig.rest_offsets.resize(kJointCount);
  for (int j = 0; j < kJointCount; ++j) {
    const Vec3 q(round_to_float(jp[j].x()), round_to_float(jp[j].y()), round_to_float(jp[j].z()));
    jp[j] = q;
  }
  for (int j = 0; j < kJointCount; ++j)
    rig.rest_offsets[j] = rig.parents[j] < 0 ? jp[j] : Vec3(jp[j] - jp[rig.parents[j]]);
  for (auto& o : rig.rest_offsets) o = Vec3(round_to_float(o.x()), round_to_float(o.y()), round_to_float(o.z()));
  rig.reset_pose();

  // Mesh.
  const int nv = static_cast<int>(bld.v.size());
  tpl.mesh.vertices.resize(nv, 3);
  for (int i = 0; i < nv; ++i)
    tpl.mesh.vertices.row(i) << round_to_float(bld.v[i].x()), round_to_float(bld.v[i].y()), round_to_float(bld.v[i].z());
  tpl.mesh.faces.resize(static_cast<Eigen::Index>(bld.f.size()), 3);
  for (size_t i = 0; i < bld.f.size(); ++i) tpl.mesh.faces.row(i) << bld.f[i][0], bld.f[i][1], bld.f[i][2];
  tpl.mesh.colors = Colors::Constant(nv, 3, 128.0 / 255.0);

  // Skin weights.
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < nv; ++i) {
    std::vector<double> w = bld.weights[i];
    double sum = 0;
    for (double& x : w) {
      if (x < 1e-6) x = 0;
      sum += x;
    }
    for (int j = 0; j < kJointCount; ++j)
      if (w[j] > 0) trip.emplace_back(i, j, round_to_float(w[j] / sum));
  }
  tpl.skin_weights.resize(nv, kJointCount);
  tpl.skin_weights.setFromTriplets(trip.begin(), trip.end());

  // Atlas.
  std::vector<Vec2> sizes(kPartCount);
  sizes[kTrunk] = Vec2(perimeter, arc.back());
  for (int p = kArmL; p < kPartCount; ++p) sizes[p] = Vec2(tubes[p].chart_w, tubes[p].chart_h);
  const auto packed = pack_charts(sizes, 0.02);
  for (int p = 0; p < kPartCount; ++p) {
    Chart c;
    c.part = kPartNames[p];
    c.min = Eigen::Vector2d(round_to_float(packed[p].x), round_to_float(packed[p].y));
    c.max = Eigen::Vector2d(round_to_float(packed[p].x + sizes[p].x() * packed[p].scale),
                            round_to_float(packed[p].y + sizes[p].y() * packed[p].scale));
    tpl.charts.push_back(c);
  }
  auto to_atlas = [&](int chart, const Vec2& local) {
    const auto& pr = packed[chart];
    return Vec2(round_to_float(pr.x + local.x() * pr.scale), round_to_float(pr.y + local.y() * pr.scale));
  };
  tpl.uv.resize(nv, 2);
  for (int i = 0; i < nv; ++i) {
    const Vec2 a = to_atlas(bld.vchart[i], bld.vuv[i]);
    tpl.uv(i, 0) = a.x();
    tpl.uv(i, 1) = a.y();
  }
  const int nf = static_cast<int>(bld.f.size());
  tpl.face_uv.resize(nf, 6);
  tpl.face_chart = bld.fchart;
  for (int fi = 0; fi < nf; ++fi)
    for (int c = 0; c < 3; ++c) {
      const int vid = bld.f[fi][c];
      const Vec2 a = bld.fchart[fi] >= 0 ? to_atlas(bld.fchart[fi], bld.fuv[fi][c]) : Vec2(tpl.uv.row(vid).transpose());
      tpl.face_uv(fi, 2 * c) = a.x();
      tpl.face_uv(fi, 2 * c + 1) = a.y();
    }
  tpl.vertex_chart = bld.vchart;

  // Boundary rings and garment prior.
  auto nearest_row = [&](double z) {
    int best = 0;
    for (int r = 0; r < rows; ++r)
      if (std::abs(st[r + 1].z - z) < std::abs(st[best + 1].z - z)) best = r;
    return best;
  };
  const int waist_row = nearest_row(jp[kSpine].z() + zmin);
  const int neck_row = nearest_row(0.5 * (neck_lo + neck_hi));
  tpl.boundary_rings["waist"] = std::vector<int>(grid[waist_row].begin(), grid[waist_row].end() - 1);
  tpl.boundary_rings["neck"] = std::vector<int>(grid[neck_row].begin(), grid[neck_row].end() - 1);
  // Distal rings: the tube ring whose center is closest to the wrist/ankle.
  std::vector<int> ring_index(kPartCount, 0);
  for (const auto& lb : limbs) {
    const auto& tb = tubes[lb.part];
    const Vec3 wrist = jp[lb.j2];
    int best = 2;
    auto ring_center = [&](int j) {
      Vec3 c = Vec3::Zero();
      for (int id : tb.rings[j]) c += tpl.mesh.vertices.row(id).transpose();
      return Vec3(c / static_cast<double>(tb.rings[j].size()));
    };
    for (int j = 2; j < static_cast<int>(tb.rings.size()); ++j)
      if ((ring_center(j) - wrist).norm() < (ring_center(best) - wrist).norm()) best = j;
    ring_index[lb.part] = best;
  }
  tpl.boundary_rings["wrist_l"] = tubes[kArmL].rings[ring_index[kArmL]];
  tpl.boundary_rings["wrist_r"] = tubes[kArmR].rings[ring_index[kArmR]];
  tpl.boundary_rings["ankle_l"] = tubes[kLegL].rings[ring_index[kLegL]];
  tpl.boundary_rings["ankle_r"] = tubes[kLegR].rings[ring_index[kLegR]];

  tpl.garment_prior.assign(nv, static_cast<int>(Garment::body));
  for (int r = 0; r < rows; ++r) {
    const int g = r < waist_row ? static_cast<int>(Garment::lower)
                  : r < neck_row ? static_cast<int>(Garment::upper)
                                 : static_cast<int>(Garment::body);
    for (int sec = 0; sec < ns; ++sec)
      if (grid[r][sec] >= 0) tpl.garment_prior[grid[r][sec]] = g;
  }
  tpl.garment_prior[pole_lo_id] = static_cast<int>(Garment::lower);
  for (const auto& lb : limbs) {
    const auto& tb = tubes[lb.part];
    const int g = lb.arm ? static_cast<int>(Garment::upper) : static_cast<int>(Garment::lower);
    for (int j = 1; j < ring_index[lb.part]; ++j)
      for (int id : tb.rings[j]) tpl.garment_prior[id] = g;
  }
  validate(tpl);
  return tpl;
}

}  // namespace tightcap
