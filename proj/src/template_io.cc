#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"
#include "tightcap/template.h"

namespace tightcap {

namespace {

// float32 number type: dumps round-trip a float in at most 9 significant
// digits and parsing goes through strtof.
using FloatJson = nlohmann::basic_json<std::map, std::vector, std::string, bool, std::int64_t, std::uint64_t, float>;

constexpr const char* kFormatName = "tightcap-template";

FloatJson vec_json(const Vec3& v) { return FloatJson::array({float(v.x()), float(v.y()), float(v.z())}); }

Vec3 json_vec(const FloatJson& j) {
  if (!j.is_array() || j.size() != 3) throw ParseError("template: expected a 3-vector");
  return Vec3(double(j[0].get<float>()), double(j[1].get<float>()), double(j[2].get<float>()));
}

void check_size(size_t got, size_t want, const char* what) {
  if (got != want)
    throw ValidationError(std::string("template: ") + what + " has " + std::to_string(got) + " entries, expected " +
                          std::to_string(want));
}

}  // namespace

void validate(const SkinnedTemplate& tpl) {
  validate(tpl.mesh);
  validate(tpl.rig);
  const int nv = tpl.num_vertices(), nf = tpl.mesh.num_faces(), nj = tpl.rig.size();
  if (tpl.skin_weights.rows() != nv || tpl.skin_weights.cols() != nj)
    throw ValidationError("template: skin weight matrix must be vertices x joints");
  for (int i = 0; i < nv; ++i) {
    double sum = 0;
    for (SkinWeights::InnerIterator it(tpl.skin_weights, i); it; ++it) {
      if (!(it.value() >= 0)) throw ValidationError("template: negative skin weight at vertex " + std::to_string(i));
      sum += it.value();
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw ValidationError("template: skin weights of vertex " + std::to_string(i) + " sum to " +
                            std::to_string(sum));
  }
  check_size(static_cast<size_t>(tpl.uv.rows()), static_cast<size_t>(nv), "uv");
  check_size(static_cast<size_t>(tpl.face_uv.rows()), static_cast<size_t>(nf), "face_uv");
  check_size(tpl.face_chart.size(), static_cast<size_t>(nf), "face_chart");
  check_size(tpl.vertex_chart.size(), static_cast<size_t>(nv), "vertex_chart");
  check_size(tpl.garment_prior.size(), static_cast<size_t>(nv), "garment_prior");
  if (nv > 0 && (tpl.uv.minCoeff() < 0 || tpl.uv.maxCoeff() > 1))
    throw ValidationError("template: uv outside [0,1]^2");
  const int nc = static_cast<int>(tpl.charts.size());
  for (int f = 0; f < nf; ++f) {
    const int c = tpl.face_chart[f];
    if (c < -1 || c >= nc) throw ValidationError("template: face " + std::to_string(f) + " has invalid chart");
    if (c < 0) continue;
    const Eigen::Vector2d a = tpl.face_uv.row(f).segment<2>(0).transpose();
    const Eigen::Vector2d b = tpl.face_uv.row(f).segment<2>(2).transpose();
    const Eigen::Vector2d d = tpl.face_uv.row(f).segment<2>(4).transpose();
    const double area = (b - a).x() * (d - a).y() - (b - a).y() * (d - a).x();
    if (!(std::abs(area) > 1e-14)) throw ValidationError("template: degenerate uv triangle at face " + std::to_string(f));
  }
  for (int i = 0; i < nv; ++i) {
    if (tpl.vertex_chart[i] < 0 || tpl.vertex_chart[i] >= nc)
      throw ValidationError("template: vertex " + std::to_string(i) + " has invalid chart");
    if (tpl.garment_prior[i] < 0 || tpl.garment_prior[i] > 2)
      throw ValidationError("template: vertex " + std::to_string(i) + " has invalid garment prior");
  }
  std::set<std::pair<int, int>> edges;
  for (const auto& e : unique_edges(tpl.mesh.faces)) edges.insert(e);
  for (const auto& [name, ring] : tpl.boundary_rings) {
    if (ring.size() < 3) throw ValidationError("template: ring '" + name + "' has fewer than 3 vertices");
    if (std::set<int>(ring.begin(), ring.end()).size() != ring.size())
      throw ValidationError("template: ring '" + name + "' repeats a vertex");
    for (size_t k = 0; k < ring.size(); ++k) {
      const int a = ring[k], b = ring[(k + 1) % ring.size()];
      if (a < 0 || a >= nv) throw ValidationError("template: ring '" + name + "' index out of range");
      if (!edges.count({std::min(a, b), std::max(a, b)}))
        throw ValidationError("template: ring '" + name + "' is not a closed edge loop");
    }
  }
}

std::uint32_t uv_version_hash(const SkinnedTemplate& tpl) {
  std::uint32_t h = 2166136261u;
  auto feed = [&](const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 16777619u;
    }
  };
  auto feed_float = [&](double x) {
    const float f = static_cast<float>(x);
    feed(&f, sizeof(f));
  };
  const std::int32_t counts[2] = {static_cast<std::int32_t>(tpl.uv.rows()),
                                  static_cast<std::int32_t>(tpl.face_uv.rows())};
  feed(counts, sizeof(counts));
  for (Eigen::Index i = 0; i < tpl.uv.size(); ++i) feed_float(tpl.uv.data()[i]);
  for (Eigen::Index i = 0; i < tpl.face_uv.size(); ++i) feed_float(tpl.face_uv.data()[i]);
  for (int c : tpl.face_chart) feed(&c, sizeof(c));
  for (const auto& c : tpl.charts) {
    feed(c.part.data(), c.part.size());
    for (int k = 0; k < 2; ++k) {
      feed_float(c.min(k));
      feed_float(c.max(k));
    }
  }
  return h;
}

void save_template(const SkinnedTemplate& tpl, const std::filesystem::path& dir) {
  validate(tpl);
  std::filesystem::create_directories(dir);
  TriMesh m = tpl.mesh;
  m.normals.resize(0, 3);
  save_ply(dir / "mesh.ply", m);

  FloatJson j;
  j["format"] = kFormatName;
  j["version"] = SkinnedTemplate::kFormatVersion;
  j["mesh"] = "mesh.ply";
  FloatJson rig;
  rig["version"] = 1;
  rig["names"] = tpl.rig.names;
  rig["parents"] = tpl.rig.parents;
  rig["rest_offsets"] = FloatJson::array();
  rig["theta"] = FloatJson::array();
  rig["scale"] = FloatJson::array();
  for (int k = 0; k < tpl.rig.size(); ++k) {
    rig["rest_offsets"].push_back(vec_json(tpl.rig.rest_offsets[k]));
    rig["theta"].push_back(vec_json(tpl.rig.theta[k]));
    rig["scale"].push_back(float(tpl.rig.scale[k]));
  }
  rig["translation"] = vec_json(tpl.rig.translation);
  j["rig"] = rig;

  FloatJson wj = FloatJson::array(), wv = FloatJson::array();
  for (int i = 0; i < tpl.num_vertices(); ++i) {
    FloatJson ids = FloatJson::array(), vals = FloatJson::array();
    for (SkinWeights::InnerIterator it(tpl.skin_weights, i); it; ++it) {
      ids.push_back(static_cast<int>(it.col()));
      vals.push_back(float(it.value()));
    }
    wj.push_back(ids);
    wv.push_back(vals);
  }
  j["skin_weights"] = {{"version", 1}, {"joints", wj}, {"values", wv}};

  FloatJson atlas;
  atlas["version"] = 1;
  atlas["uv"] = FloatJson::array();
  for (Eigen::Index i = 0; i < tpl.uv.size(); ++i) atlas["uv"].push_back(float(tpl.uv.data()[i]));
  atlas["face_uv"] = FloatJson::array();
  for (Eigen::Index i = 0; i < tpl.face_uv.size(); ++i) atlas["face_uv"].push_back(float(tpl.face_uv.data()[i]));
  atlas["face_chart"] = tpl.face_chart;
  atlas["vertex_chart"] = tpl.vertex_chart;
  atlas["charts"] = FloatJson::array();
  for (const auto& c : tpl.charts)
    atlas["charts"].push_back({{"part", c.part},
                               {"min", {float(c.min.x()), float(c.min.y())}},
                               {"max", {float(c.max.x()), float(c.max.y())}}});
  atlas["uv_version"] = uv_version_hash(tpl);
  j["atlas"] = atlas;

  FloatJson rings = FloatJson::object();
  for (const auto& [name, ring] : tpl.boundary_rings) rings[name] = ring;
  j["boundary_rings"] = rings;
  j["garment_prior"] = tpl.garment_prior;

  std::ofstream out(dir / "template.json");
  if (!out) throw Error("save_template: cannot write " + (dir / "template.json").string());
  out << j.dump(1) << "\n";
}

SkinnedTemplate load_template(const std::filesystem::path& dir) {
  const auto doc_path = dir / "template.json";
  std::ifstream in(doc_path);
  if (!in) throw ParseError("load_template: cannot open " + doc_path.string());
  FloatJson j;
  try {
    j = FloatJson::parse(in);
  } catch (const nlohmann::detail::exception& e) {
    throw ParseError("load_template: " + doc_path.string() + ": " + e.what());
  }
  SkinnedTemplate tpl;
  try {
    if (j.value("format", std::string()) != kFormatName) throw ParseError("load_template: not a template document");
    if (j.at("version").get<int>() != SkinnedTemplate::kFormatVersion)
      throw ParseError("load_template: unsupported version " + std::to_string(j.at("version").get<int>()));
    tpl.mesh = load_mesh(dir / j.at("mesh").get<std::string>());

    const auto& rig = j.at("rig");
    tpl.rig.names = rig.at("names").get<std::vector<std::string>>();
    tpl.rig.parents = rig.at("parents").get<std::vector<int>>();
    for (const auto& o : rig.at("rest_offsets")) tpl.rig.rest_offsets.push_back(json_vec(o));
    for (const auto& o : rig.at("theta")) tpl.rig.theta.push_back(json_vec(o));
    for (const auto& s : rig.at("scale")) tpl.rig.scale.push_back(double(s.get<float>()));
    tpl.rig.translation = json_vec(rig.at("translation"));
    validate(tpl.rig);

    const auto& sw = j.at("skin_weights");
    const auto& wj = sw.at("joints");
    const auto& wv = sw.at("values");
    const int nv = tpl.mesh.num_vertices();
    check_size(wj.size(), static_cast<size_t>(nv), "skin_weights.joints");
    check_size(wv.size(), static_cast<size_t>(nv), "skin_weights.values");
    std::vector<Eigen::Triplet<double>> trip;
    for (int i = 0; i < nv; ++i) {
      check_size(wv[i].size(), wj[i].size(), "skin weight row");
      for (size_t k = 0; k < wj[i].size(); ++k) {
        const int jj = wj[i][k].get<int>();
        if (jj < 0 || jj >= tpl.rig.size()) throw ValidationError("template: skin weight joint out of range");
        trip.emplace_back(i, jj, double(wv[i][k].get<float>()));
      }
    }
    tpl.skin_weights.resize(nv, tpl.rig.size());
    tpl.skin_weights.setFromTriplets(trip.begin(), trip.end());

    const auto& atlas = j.at("atlas");
    const auto& uv = atlas.at("uv");
    check_size(uv.size(), 2 * static_cast<size_t>(nv), "atlas.uv");
    tpl.uv.resize(nv, 2);
    for (Eigen::Index i = 0; i < tpl.uv.size(); ++i) tpl.uv.data()[i] = double(uv[i].get<float>());
    const auto& fuv = atlas.at("face_uv");
    const int nf = tpl.mesh.num_faces();
    check_size(fuv.size(), 6 * static_cast<size_t>(nf), "atlas.face_uv");
    tpl.face_uv.resize(nf, 6);
    for (Eigen::Index i = 0; i < tpl.face_uv.size(); ++i) tpl.face_uv.data()[i] = double(fuv[i].get<float>());
    tpl.face_chart = atlas.at("face_chart").get<std::vector<int>>();
    tpl.vertex_chart = atlas.at("vertex_chart").get<std::vector<int>>();
    for (const auto& c : atlas.at("charts")) {
      Chart ch;
      ch.part = c.at("part").get<std::string>();
      ch.min = Eigen::Vector2d(double(c.at("min")[0].get<float>()), double(c.at("min")[1].get<float>()));
      ch.max = Eigen::Vector2d(double(c.at("max")[0].get<float>()), double(c.at("max")[1].get<float>()));
      tpl.charts.push_back(ch);
    }
    for (const auto& [name, ring] : j.at("boundary_rings").items())
      tpl.boundary_rings[name] = ring.get<std::vector<int>>();
    tpl.garment_prior = j.at("garment_prior").get<std::vector<int>>();
    validate(tpl);
    if (atlas.at("uv_version").get<std::uint32_t>() != uv_version_hash(tpl))
      throw ValidationError("load_template: stored uv_version does not match the atlas");
  } catch (const nlohmann::detail::exception& e) {
    throw ParseError("load_template: " + doc_path.string() + ": " + e.what());
  }
  return tpl;
}

}  // namespace tightcap
