#include "tightcap/tightness.h"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <thread>

#include "tightcap/geometry.h"
#include "tightcap/parallel.h"

namespace tightcap {

namespace {

double kernel(const Vec3& a, const Vec3& b, double sigma_deg) {
  const double theta = angle_deg(a, b);
  return std::exp(-(theta * theta) / (2 * sigma_deg * sigma_deg));
}

// Sorted union of two sorted id lists.
std::vector<int> merge_unique(const std::vector<int>& a, std::vector<int> b) {
  std::sort(b.begin(), b.end());
  std::vector<int> out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

double median(std::vector<double> v) {
  const size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + m, v.end());
  const double hi = v[m];
  if (v.size() % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + m));
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
  return s;
}

std::string log_tail(const std::filesystem::path& path, size_t max_bytes = 4096) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (s.size() > max_bytes) s = "..." + s.substr(s.size() - max_bytes);
  return s;
}

const std::vector<std::string> kPredictionChannels = {"tightness.x", "tightness.y", "tightness.z",
                                                      "mask.upper",  "mask.lower",  "valid"};

// Chart holding each texel center, -1 outside every chart.
std::vector<int> texel_charts(const SkinnedTemplate& tpl, int w, int h) {
  std::vector<int> out(static_cast<size_t>(w) * h, -1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector2d uv((x + 0.5) / w, (y + 0.5) / h);
      for (size_t c = 0; c < tpl.charts.size(); ++c) {
        const auto& ch = tpl.charts[c];
        if ((uv.array() >= ch.min.array()).all() && (uv.array() <= ch.max.array()).all()) {
          out[static_cast<size_t>(y) * w + x] = static_cast<int>(c);
          break;
        }
      }
    }
  return out;
}

}  // namespace

int TightnessField::fallback_count() const {
  return static_cast<int>(std::count(fallback.begin(), fallback.end(), std::uint8_t{1}));
}

void validate(const TightnessConfig& cfg) {
  if (!(cfg.cone_aperture_deg > 0 && cfg.cone_aperture_deg <= 360))
    throw ArgumentError("tightness: cone aperture must lie in (0, 360] degrees");
  if (cfg.knn_k < 1) throw ArgumentError("tightness: knn_k must be at least 1");
  if (!(cfg.kernel_sigma_deg > 0)) throw ArgumentError("tightness: kernel sigma must be positive");
  if (!(cfg.cone_max_range > 0)) throw ArgumentError("tightness: cone max range must be positive");
  if (!(cfg.contact_distance >= 0)) throw ArgumentError("tightness: contact distance must be non-negative");
}

TightnessField naive_tightness(const Vertices& clothed, const Vertices& body) {
  if (clothed.rows() != body.rows())
    throw ArgumentError("naive_tightness: " + std::to_string(clothed.rows()) + " clothed vs " +
                        std::to_string(body.rows()) + " body vertices");
  TightnessField f;
  f.vectors = body - clothed;
  f.fallback.assign(static_cast<size_t>(body.rows()), 0);
  return f;
}

double angular_gaussian_weight(const Vec3& n1, const Vec3& n2, double sigma_deg) {
  if (std::abs(n1.norm() - 1) > 1e-3 || std::abs(n2.norm() - 1) > 1e-3)
    throw ArgumentError("angular_gaussian_weight: normals must be unit length");
  if (!(sigma_deg > 0)) throw ArgumentError("angular_gaussian_weight: sigma must be positive");
  return kernel(n1, n2, sigma_deg);
}

TightnessField one_to_many_tightness(const Vertices& clothed, const Vertices& clothed_normals, const TriMesh& body,
                                     const TightnessConfig& cfg) {
  return one_to_many_tightness(clothed, clothed_normals, body, KdTree(body.vertices), cfg);
}

TightnessField one_to_many_tightness(const Vertices& clothed, const Vertices& clothed_normals, const TriMesh& body,
                                     const KdTree& index, const TightnessConfig& cfg) {
  validate(cfg);
  if (clothed.rows() != clothed_normals.rows())
    throw ArgumentError("one_to_many_tightness: clothed vertices and normals differ in count");
  if (!body.has_normals()) throw ArgumentError("one_to_many_tightness: body mesh needs normals");
  if (body.num_vertices() == 0) throw ArgumentError("one_to_many_tightness: empty body mesh");
  if (index.size() != body.num_vertices())
    throw ArgumentError("one_to_many_tightness: index does not match the body mesh");
  const int n = static_cast<int>(clothed.rows());
  TightnessField f;
  f.vectors.setZero(n, 3);
  f.fallback.assign(static_cast<size_t>(n), 0);
  parallel_for(n, [&](int i) {
    const Vec3 v = clothed.row(i).transpose();
    const Vec3 nv = clothed_normals.row(i).transpose();
    const auto near = index.knn(v, cfg.knn_k);
    if (!near.empty() && (body.vertices.row(near.front()).transpose() - v).norm() <= cfg.contact_distance) return;
    const auto set = merge_unique(index.cone(v, nv, cfg.cone_aperture_deg, cfg.cone_max_range), near);
    Vec3 sum = Vec3::Zero();
    double wsum = 0;
    for (int c : set) {
      const double w = kernel(nv, body.normals.row(c).transpose(), cfg.kernel_sigma_deg);
      sum += w * (body.vertices.row(c).transpose() - v);
      wsum += w;
    }
    const double denom = cfg.normalization == TightnessNormalization::count ? static_cast<double>(set.size()) : wsum;
    if (set.empty() || !(wsum > 0)) {
      const int c = index.nearest(v);
      f.vectors.row(i) = body.vertices.row(c) - v.transpose();
      f.fallback[i] = 1;
      return;
    }
    f.vectors.row(i) = (sum / denom).transpose();
  });
  return f;
}

TightnessField bidirectional_tightness(const TriMesh& clothed_tpl, const TriMesh& body_tpl, const TriMesh& body_mesh,
                                       const TriMesh& clothed_mesh, const TightnessConfig& cfg) {
  if (clothed_tpl.num_vertices() != body_tpl.num_vertices())
    throw ArgumentError("bidirectional_tightness: templates differ in vertex count");
  auto normals_of = [](const TriMesh& m) { return m.has_normals() ? m.normals : vertex_normals(m).normals; };
  auto normalized = [](const TriMesh& m) { return m.has_normals() ? m : with_normals(m); };
  const TightnessField fwd =
      one_to_many_tightness(clothed_tpl.vertices, normals_of(clothed_tpl), normalized(body_mesh), cfg);
  const TightnessField bwd =
      one_to_many_tightness(body_tpl.vertices, normals_of(body_tpl), normalized(clothed_mesh), cfg);
  TightnessField out;
  out.vectors = 0.5 * (fwd.vectors - bwd.vectors);
  out.fallback.resize(fwd.fallback.size());
  for (size_t i = 0; i < out.fallback.size(); ++i) out.fallback[i] = fwd.fallback[i] | bwd.fallback[i];
  return out;
}

GeometryImage tightness_to_gi(const SkinnedTemplate& tpl, const TightnessField& field, const std::vector<int>& labels,
                              int resolution) {
  const int n = tpl.num_vertices();
  if (field.size() != n || static_cast<int>(labels.size()) != n)
    throw ArgumentError("tightness_to_gi: field and labels must cover every template vertex");
  Eigen::MatrixXd masks = Eigen::MatrixXd::Zero(n, 2);
  for (int i = 0; i < n; ++i) {
    if (labels[i] == static_cast<int>(Garment::upper)) masks(i, 0) = 1;
    else if (labels[i] == static_cast<int>(Garment::lower)) masks(i, 1) = 1;
    else if (labels[i] != static_cast<int>(Garment::body))
      throw ArgumentError("tightness_to_gi: bad garment label " + std::to_string(labels[i]));
  }
  AttributeSet attrs;
  attrs.add({"tightness.x", "tightness.y", "tightness.z"}, field.vectors);
  attrs.add({"mask.upper", "mask.lower"}, masks);
  return rasterize_gi(tpl, attrs, resolution);
}

void validate(const PredictionOutput& p) {
  validate(p.gi);
  for (const auto& c : kPredictionChannels)
    if (!p.gi.has(c)) throw ValidationError("prediction lacks channel '" + c + "'");
}

TightnessField prediction_field(const PredictionOutput& p, const SkinnedTemplate& tpl) {
  const auto a = inverse_gi(p.gi, tpl, {"tightness.x", "tightness.y", "tightness.z"});
  TightnessField f;
  f.vectors = a.values;
  f.fallback.assign(static_cast<size_t>(tpl.num_vertices()), 0);
  return f;
}

Eigen::MatrixXd prediction_masks(const PredictionOutput& p, const SkinnedTemplate& tpl) {
  return inverse_gi(p.gi, tpl, {"mask.upper", "mask.lower"}).values.cwiseMax(0.0).cwiseMin(1.0);
}

PredictionOutput baseline_predict(const GeometryImage& gi, const GeometryImage& ref, const SkinnedTemplate& tpl,
                                  const BaselineConfig& cfg) {
  for (const char* c : {"position.x", "position.y", "position.z", "normal.x", "normal.y", "normal.z", "valid"}) {
    if (!gi.has(c)) throw ArgumentError(std::string("baseline_predict: input lacks channel '") + c + "'");
    if (std::string(c).rfind("position", 0) == 0 && !ref.has(c))
      throw ArgumentError(std::string("baseline_predict: reference lacks channel '") + c + "'");
  }
  if (gi.width != ref.width || gi.height != ref.height || gi.uv_version != ref.uv_version)
    throw ArgumentError("baseline_predict: reference image layout differs from the input");
  if (gi.uv_version != uv_version_hash(tpl)) throw ArgumentError("baseline_predict: uv_version does not match template");
  if (cfg.max_magnitude < 0 || cfg.smoothing_rows < 0) throw ArgumentError("baseline_predict: bad config");

  const int w = gi.width, h = gi.height;
  const auto chart = texel_charts(tpl, w, h);
  const auto& valid = gi.channel("valid");
  auto pos = [](const GeometryImage& g, size_t t) {
    return Vec3(g.channel("position.x")[t], g.channel("position.y")[t], g.channel("position.z")[t]);
  };
  auto ring_radius = [&](const GeometryImage& g, const std::vector<size_t>& texels) {
    std::vector<double> cx, cy, cz;
    for (size_t t : texels) {
      const Vec3 p = pos(g, t);
      cx.push_back(p.x());
      cy.push_back(p.y());
      cz.push_back(p.z());
    }
    const Vec3 c(median(cx), median(cy), median(cz));
    std::vector<double> r;
    for (size_t t : texels) r.push_back((pos(g, t) - c).norm());
    return median(r);
  };

  // Looseness per (chart, row), NaN where a row has no valid texel.
  const int nc = static_cast<int>(tpl.charts.size());
  std::vector<std::vector<double>> loose(static_cast<size_t>(nc), std::vector<double>(h, std::nan("")));
  for (int c = 0; c < nc; ++c)
    for (int y = 0; y < h; ++y) {
      std::vector<size_t> texels;
      for (int x = 0; x < w; ++x) {
        const size_t t = static_cast<size_t>(y) * w + x;
        if (chart[t] == c && valid[t] > 0.5f) texels.push_back(t);
      }
      if (texels.size() < 3) continue;
      loose[c][y] = std::clamp(ring_radius(gi, texels) - ring_radius(ref, texels), 0.0, cfg.max_magnitude);
    }
  std::vector<std::vector<double>> smooth = loose;
  for (int c = 0; c < nc; ++c)
    for (int y = 0; y < h; ++y) {
      double s = 0;
      int k = 0;
      for (int d = -cfg.smoothing_rows; d <= cfg.smoothing_rows; ++d) {
        const int yy = y + d;
        if (yy < 0 || yy >= h || std::isnan(loose[c][yy])) continue;
        s += loose[c][yy];
        ++k;
      }
      smooth[c][y] = k ? s / k : 0.0;
    }

  // Garment masks from the template prior.
  const int nv = tpl.num_vertices();
  Eigen::MatrixXd prior = Eigen::MatrixXd::Zero(nv, 2);
  for (int i = 0; i < nv; ++i) {
    if (tpl.garment_prior[i] == static_cast<int>(Garment::upper)) prior(i, 0) = 1;
    if (tpl.garment_prior[i] == static_cast<int>(Garment::lower)) prior(i, 1) = 1;
  }
  AttributeSet attrs;
  attrs.add({"mask.upper", "mask.lower"}, prior);
  GeometryImage masks = rasterize_gi(tpl, attrs, w);

  PredictionOutput out;
  out.provenance = "baseline";
  out.gi.width = w;
  out.gi.height = h;
  out.gi.uv_version = gi.uv_version;
  for (const char* c : {"tightness.x", "tightness.y", "tightness.z"}) out.gi.add_channel(c);
  out.gi.add_channel("mask.upper") = masks.channel("mask.upper");
  out.gi.add_channel("mask.lower") = masks.channel("mask.lower");
  out.gi.add_channel("valid") = valid;
  // References taken after the last add_channel stay valid.
  auto& tx = out.gi.channel("tightness.x");
  auto& ty = out.gi.channel("tightness.y");
  auto& tz = out.gi.channel("tightness.z");
  const auto& mu = out.gi.channel("mask.upper");
  const auto& ml = out.gi.channel("mask.lower");
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t t = static_cast<size_t>(y) * w + x;
      if (chart[t] < 0) continue;
      const double m = smooth[chart[t]][y] * std::min(1.0, static_cast<double>(mu[t]) + ml[t]);
      const Vec3 nrm(gi.channel("normal.x")[t], gi.channel("normal.y")[t], gi.channel("normal.z")[t]);
      const double len = nrm.norm();
      if (!(len > 0)) continue;
      const Vec3 d = -m * nrm / len;
      tx[t] = static_cast<float>(d.x());
      ty[t] = static_cast<float>(d.y());
      tz[t] = static_cast<float>(d.z());
    }
  return out;
}

PredictionOutput external_predict(const GeometryImage& input, const std::string& command, double timeout_seconds,
                                  const std::filesystem::path& work_dir) {
  if (command.find("{input}") == std::string::npos || command.find("{output}") == std::string::npos)
    throw ArgumentError("external_predict: bridge command needs {input} and {output} placeholders");
  if (!(timeout_seconds > 0)) throw ArgumentError("external_predict: timeout must be positive");
  std::filesystem::create_directories(work_dir);
  const auto in_path = work_dir / "input.cgi";
  const auto out_path = work_dir / "output.cgi";
  const auto log_path = work_dir / "bridge.log";
  std::filesystem::remove(out_path);
  write_gi(input, in_path);
  const std::string cmd =
      replace_all(replace_all(command, "{input}", shell_quote(in_path.string())), "{output}", shell_quote(out_path.string()));

  const pid_t pid = fork();
  if (pid < 0) throw BridgeError("bridge: fork failed", -1, "command: " + cmd);
  if (pid == 0) {
    setpgid(0, 0);
    const int fd = open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd >= 0) {
      dup2(fd, STDOUT_FILENO);
      dup2(fd, STDERR_FILENO);
      close(fd);
    }
    execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  setpgid(pid, pid);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
  int status = 0;
  for (;;) {
    const pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) throw BridgeError("bridge: waitpid failed", -1, "command: " + cmd);
    if (std::chrono::steady_clock::now() > deadline) {
      kill(-pid, SIGKILL);
      waitpid(pid, &status, 0);
      throw BridgeError("bridge: timed out after " + std::to_string(timeout_seconds) + " s", -1,
                        "command: " + cmd + "\n" + log_tail(log_path));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  auto diag = [&] { return "command: " + cmd + "\n" + log_tail(log_path); };
  if (!WIFEXITED(status))
    throw BridgeError("bridge: terminated by signal " + std::to_string(WTERMSIG(status)), -1, diag());
  if (WEXITSTATUS(status) != 0)
    throw BridgeError("bridge: exit code " + std::to_string(WEXITSTATUS(status)), WEXITSTATUS(status), diag());

  PredictionOutput out;
  out.provenance = "external";
  try {
    out.gi = read_gi(out_path);
    validate(out);
  } catch (const Error& e) {
    throw BridgeError(std::string("bridge: bad output: ") + e.what(), 0, diag());
  }
  if (out.gi.width != input.width || out.gi.height != input.height)
    throw BridgeError("bridge: output is " + std::to_string(out.gi.width) + "x" + std::to_string(out.gi.height) +
                          ", input " + std::to_string(input.width) + "x" + std::to_string(input.height),
                      0, diag());
  if (out.gi.uv_version != input.uv_version)
    throw BridgeError("bridge: output uv_version " + std::to_string(out.gi.uv_version) + " != input " +
                          std::to_string(input.uv_version),
                      0, diag());
  return out;
}

}  // namespace tightcap
