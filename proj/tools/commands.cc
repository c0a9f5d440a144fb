#include "commands.h"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>

#include "render.h"
#include "tightcap/fixtures.h"
#include "tightcap/metrics.h"
#include "tightcap/parallel.h"

namespace tightcap::cli {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json metric_json(const MetricReport& m) {
  return {{"mean", m.mean},           {"rms", m.rms},
          {"max", m.max},             {"error_mm", m.error_mm},
          {"normalizer", m.normalizer}, {"samples_per_side", m.samples_per_side}};
}

// Runs one stage: creates `out`, times the body, writes the report. Failures
// leave an error report behind and come back as StageError tagged with the
// stage name; usage errors pass through untouched.
json run_stage(const std::string& name, const fs::path& out, const std::function<json()>& body) {
  fs::create_directories(out);
  const std::string started = utc_now();
  const auto t0 = Clock::now();
  json report;
  try {
    report = body();
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    json err = {{"command", name}, {"status", "error"}, {"started_at", started}, {"seconds", since(t0)},
                {"error", {{"stage", name}, {"message", e.what()}}}};
    if (const auto* b = dynamic_cast<const BridgeError*>(&e)) {
      const std::string what = e.what();
      err["error"]["message"] = what.substr(0, what.find('\n'));
      err["error"]["diagnostics"] = b->diagnostics;
      err["error"]["exit_code"] = b->exit_code;
    }
    write_report(out, err);
    if (dynamic_cast<const StageError*>(&e)) throw;
    throw StageError(name, e.what());
  }
  report["command"] = name;
  report["status"] = "ok";
  report["started_at"] = started;
  report["seconds"] = since(t0);
  write_report(out, report);
  return report;
}

SkinnedTemplate template_of(const PipelineConfig& cfg) { return load_template(cfg.template_path); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw Error("cannot write " + path.string());
}

json field_json(const TightnessField& field, const std::string& provenance) {
  std::vector<double> flat(static_cast<size_t>(field.size()) * 3);
  for (int i = 0; i < field.size(); ++i)
    for (int k = 0; k < 3; ++k) flat[3 * i + k] = field.vectors(i, k);
  return {{"provenance", provenance}, {"vertices", field.size()}, {"vectors", flat}, {"fallback", field.fallback}};
}

TightnessField field_from_json(const json& j, const fs::path& path) {
  try {
    TightnessField f;
    const int n = j.at("vertices").get<int>();
    const auto flat = j.at("vectors").get<std::vector<double>>();
    if (n < 0 || flat.size() != static_cast<size_t>(n) * 3)
      throw ParseError(path.string() + ": vector count does not match 'vertices'");
    f.vectors.resize(n, 3);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k) f.vectors(i, k) = flat[3 * i + k];
    f.fallback = j.at("fallback").get<std::vector<std::uint8_t>>();
    if (f.fallback.size() != static_cast<size_t>(n)) throw ParseError(path.string() + ": fallback count mismatch");
    return f;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

json field_summary(const TightnessField& field) {
  double sum = 0, peak = 0;
  for (int i = 0; i < field.size(); ++i) {
    const double m = field.vectors.row(i).norm();
    sum += m;
    peak = std::max(peak, m);
  }
  return {{"mean_magnitude", field.size() ? sum / field.size() : 0.0},
          {"max_magnitude", peak},
          {"fallback_count", field.fallback_count()}};
}

// Loads a field from field.json or from a prediction GI.
TightnessField load_field(const fs::path& path, const SkinnedTemplate& tpl, std::string& provenance) {
  if (path.extension() == ".json") {
    const json j = read_json(path);
    provenance = j.value("provenance", "unknown");
    return field_from_json(j, path);
  }
  PredictionOutput p{read_gi(path), "prediction"};
  validate(p);
  if (p.gi.uv_version != uv_version_hash(tpl))
    throw ValidationError(path.string() + ": uv_version does not match the template");
  provenance = p.provenance;
  return prediction_field(p, tpl);
}

json label_counts(const std::vector<int>& labels) {
  int c[3] = {0, 0, 0};
  for (int l : labels)
    if (l >= 0 && l < 3) ++c[l];
  return {{"body", c[0]}, {"upper", c[1]}, {"lower", c[2]}};
}

TriMesh garment_piece(const TriMesh& mesh, const std::vector<int>& labels, int label) {
  std::vector<bool> keep(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) keep[i] = labels[i] == label;
  return submesh(mesh, keep);
}

}  // namespace

void write_report(const fs::path& dir, json report) {
  fs::create_directories(dir);
  report["threads"] = worker_count();
  write_json(dir / "report.json", report);
}

json cmd_synth(const SynthArgs& args, const fs::path& out) {
  FixtureSpec spec;
  spec.offset = args.offset;
  spec.pose = args.pose;
  spec.noise = args.noise;
  spec.seed = args.seed;
  spec.smoothing = args.smoothing;
  try {
    validate(spec);
  } catch (const Error& e) {
    throw UsageError(std::string("synth: ") + e.what());
  }
  return run_stage("synth", out, [&] {
    const SkinnedTemplate tpl = generate_synthetic_template(SynthSpec{});
    const Fixture fx = make_fixture(spec);
    save_template(tpl, out / "template");
    save_ply(out / "scan.ply", fx.scan);
    save_ply(out / "body.ply", fx.body, {{"garment", fx.body_garment}});
    save_joints(out / "joints.json", fx.joints);
    const json manifest = {
        {"files", {{"template", "template"}, {"scan", "scan.ply"}, {"body", "body.ply"}, {"joints", "joints.json"}}},
        {"offset", spec.offset},
        {"pose", spec.pose},
        {"noise", spec.noise},
        {"seed", spec.seed},
        {"smoothing", spec.smoothing}};
    write_json(out / "manifest.json", manifest);
    return json{{"manifest", manifest},
                {"template_vertices", tpl.num_vertices()},
                {"scan_vertices", fx.scan.num_vertices()},
                {"body_vertices", fx.body.num_vertices()}};
  });
}

json cmd_align(const PipelineConfig& cfg, const fs::path& scan_path, const fs::path& joints_path, const fs::path& out) {
  return run_stage("align", out, [&] {
    const SkinnedTemplate tpl = template_of(cfg);
    const TriMesh scan = load_mesh(scan_path);
    const auto joints = load_joints(joints_path);
    const AlignmentResult r = align_full(tpl, scan, joints, cfg.registration);
    export_alignment(r, out);
    render_front_view(r.mesh(r.m_v), out / "render.ppm");
    json stages = json::array();
    for (const auto& s : r.stages)
      stages.push_back(
          {{"stage", s.stage}, {"energies", s.energies}, {"correspondences", s.correspondences}, {"seconds", s.seconds}});
    return json{{"stages", stages},
                {"metrics", {{"m_s", metric_json(r.metrics_s)}, {"m_d", metric_json(r.metrics_d)},
                             {"m_v", metric_json(r.metrics_v)}}}};
  });
}

json cmd_gi(const PipelineConfig& cfg, const fs::path& alignment, const std::optional<fs::path>& scan_path,
            const fs::path& out) {
  return run_stage("gi", out, [&] {
    const SkinnedTemplate tpl = template_of(cfg);
    const AlignmentResult r = load_alignment(alignment);
    TriMesh clothed = r.mesh(r.m_v);
    if (scan_path) {
      const TriMesh scan = load_mesh(*scan_path);
      const KdTree index(scan.vertices);
      clothed.colors.resize(clothed.num_vertices(), 3);
      for (int i = 0; i < clothed.num_vertices(); ++i)
        clothed.colors.row(i) = scan.colors.row(index.nearest(clothed.vertex(i)));
    }
    const GeometryImage gi = rasterize_gi(tpl, surface_attributes(clothed), cfg.gi_resolution);
    const GeometryImage ref = rasterize_gi(tpl, surface_attributes(r.mesh(r.m_init)), cfg.gi_resolution);
    write_gi(gi, out / "clothed.cgi");
    write_gi(ref, out / "reference.cgi");
    size_t valid = 0;
    for (float v : gi.channel("valid")) valid += v > 0.5f;
    return json{{"resolution", cfg.gi_resolution}, {"uv_version", gi.uv_version}, {"valid_texels", valid},
                {"channels", gi.names}};
  });
}

json cmd_tightness_gt(const PipelineConfig& cfg, const fs::path& alignment, const fs::path& body_alignment,
                      const fs::path& scan_path, const fs::path& body_path, const fs::path& out) {
  return run_stage("tightness_gt", out, [&] {
    const SkinnedTemplate tpl = template_of(cfg);
    const AlignmentResult clothed = load_alignment(alignment);
    const AlignmentResult body_fit = load_alignment(body_alignment);
    const TriMesh scan = load_mesh(scan_path);
    IntProperties extra;
    const TriMesh body = load_mesh(body_path, extra);
    const TriMesh clothed_tpl = clothed.mesh(clothed.m_v), body_tpl = body_fit.mesh(body_fit.m_v);
    const TightnessField field = bidirectional_tightness(clothed_tpl, body_tpl, body, scan, cfg.tightness);

    // Garment labels come from the nearest ground-truth body vertex.
    std::vector<int> labels = tpl.garment_prior;
    std::string label_source = "template prior";
    for (const auto& [name, values] : extra) {
      if (name != "garment") continue;
      const KdTree index(body.vertices);
      for (int i = 0; i < body_tpl.num_vertices(); ++i) labels[i] = values[index.nearest(body_tpl.vertex(i))];
      label_source = "body garment property";
    }
    write_json(out / "field.json", field_json(field, "ground_truth"));
    write_gi(tightness_to_gi(tpl, field, labels, cfg.gi_resolution), out / "tightness.cgi");
    save_ply(out / "labels.ply", clothed_tpl, {{"garment", labels}});
    json report = field_summary(field);
    report["label_source"] = label_source;
    report["labels"] = label_counts(labels);
    return report;
  });
}

json cmd_predict(const PipelineConfig& cfg, const fs::path& gi_path, const std::optional<fs::path>& reference,
                 const fs::path& out) {
  return run_stage("predict", out, [&] {
    const SkinnedTemplate tpl = template_of(cfg);
    const GeometryImage gi = read_gi(gi_path);
    PredictionOutput pred;
    if (cfg.predictor.kind == "baseline") {
      if (!reference) throw UsageError("predict: the baseline predictor needs --reference");
      pred = baseline_predict(gi, read_gi(*reference), tpl, cfg.baseline);
    } else {
      pred = external_predict(gi, cfg.predictor.bridge, cfg.predictor.timeout_seconds, out / "bridge");
      if (pred.gi.uv_version != uv_version_hash(tpl))
        throw BridgeError("bridge output uv_version does not match the template", -1, "");
    }
    validate(pred);
    write_gi(pred.gi, out / "prediction.cgi");
    json report = field_summary(prediction_field(pred, tpl));
    report["provenance"] = pred.provenance;
    report["predictor"] = cfg.predictor.kind;
    return report;
  });
}

json cmd_recover(const PipelineConfig& cfg, const fs::path& alignment, const fs::path& field_path, const fs::path& out) {
  return run_stage("recover", out, [&] {
    const SkinnedTemplate tpl = template_of(cfg);
    const AlignmentResult r = load_alignment(alignment);
    std::string provenance;
    const TightnessField field = load_field(field_path, tpl, provenance);
    if (field.size() != r.m_v.rows()) throw ValidationError("recover: field size does not match the alignment");
    const Vertices direct = recover_direct(r.m_v, field);
    const RecoveryResult res = recover_shape(r.m_v, r.faces, field, r.m_warp, cfg.recovery);
    save_ply(out / "body.ply", r.mesh(res.vertices));
    save_ply(out / "body_direct.ply", r.mesh(direct));
    render_front_view(r.mesh(res.vertices), out / "render.ppm");
    json report = field_summary(field);
    report["provenance"] = provenance;
    report["energies"] = res.energies;
    report["solve_seconds"] = res.seconds;
    report["max_shift_from_direct"] = (res.vertices - direct).rowwise().norm().maxCoeff();
    return report;
  });
}

json cmd_segment(const PipelineConfig& cfg, const fs::path& alignment, const fs::path& prediction,
                 const fs::path& out) {
  return run_stage("segment", out, [&] {
    const SkinnedTemplate tpl = template_of(cfg);
    const AlignmentResult r = load_alignment(alignment);
    PredictionOutput pred{read_gi(prediction), "prediction"};
    validate(pred);
    if (pred.gi.uv_version != uv_version_hash(tpl))
      throw ValidationError(prediction.string() + ": uv_version does not match the template");
    const Eigen::MatrixXd probs = prediction_masks(pred, tpl);
    const SegmentationResult seg =
        segment_clothing(r.faces, probs, cfg.segmentation.pairwise_weight, cfg.segmentation.max_sweeps);
    const TriMesh clothed = r.mesh(r.m_v);
    save_ply(out / "labels.ply", clothed, {{"garment", seg.labels}});
    save_ply(out / "upper.ply", garment_piece(clothed, seg.labels, static_cast<int>(Garment::upper)));
    save_ply(out / "lower.ply", garment_piece(clothed, seg.labels, static_cast<int>(Garment::lower)));
    render_front_view(clothed, out / "render.ppm", 512, seg.labels);
    return json{{"labels", label_counts(seg.labels)}, {"energies", seg.energies}, {"sweeps", seg.sweeps}};
  });
}

json cmd_metrics(const PipelineConfig& cfg, const fs::path& mesh_path, const fs::path& reference, const fs::path& out) {
  return run_stage("metrics", out, [&] {
    const TriMesh a = load_mesh(mesh_path), b = load_mesh(reference);
    const double normalizer =
        cfg.metrics_normalizer > 0 ? cfg.metrics_normalizer : bounding_box(b.vertices).diagonal();
    json report = metric_json(hausdorff_metrics(a, b, normalizer));
    report["mean_distance_m"] = symmetric_mean_distance(a, b);
    report["mesh"] = mesh_path.string();
    report["reference"] = reference.string();
    return report;
  });
}

PipelineInputs inputs_from_fixture(const fs::path& dir, PipelineConfig& cfg) {
  const json m = read_json(dir / "manifest.json");
  try {
    const auto& files = m.at("files");
    PipelineInputs in;
    in.scan = dir / files.at("scan").get<std::string>();
    in.joints = dir / files.at("joints").get<std::string>();
    in.body = dir / files.at("body").get<std::string>();
    in.offset = m.at("offset").get<double>();
    if (cfg.template_path.empty()) cfg.template_path = dir / files.at("template").get<std::string>();
    return in;
  } catch (const json::exception& e) {
    throw UsageError("fixture manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
}

json cmd_pipeline(const PipelineConfig& cfg, const PipelineInputs& in, const fs::path& out) {
  for (const auto* p : {&in.scan, &in.joints})
    if (!fs::exists(*p)) throw UsageError("pipeline: input " + p->string() + " does not exist");
  if (in.body && !fs::exists(*in.body)) throw UsageError("pipeline: body " + in.body->string() + " does not exist");
  fs::create_directories(out);
  const std::string started = utc_now();
  const auto t0 = Clock::now();
  json stages = json::object();
  json summary = json::object();
  auto finish = [&](const std::string& status) {
    json report = {{"command", "pipeline"}, {"status", status}, {"started_at", started}, {"seconds", since(t0)},
                   {"config", to_json(cfg)}, {"stages", stages}, {"summary", summary}};
    write_report(out, report);
    return report;
  };
  try {
    stages["align"] = cmd_align(cfg, in.scan, in.joints, out / "align");
    stages["gi"] = cmd_gi(cfg, out / "align", in.scan, out / "gi");
    stages["predict"] = cmd_predict(cfg, out / "gi" / "clothed.cgi", out / "gi" / "reference.cgi", out / "predict");
    stages["recover"] = cmd_recover(cfg, out / "align", out / "predict" / "prediction.cgi", out / "recover");
    stages["segment"] = cmd_segment(cfg, out / "align", out / "predict" / "prediction.cgi", out / "segment");
    if (in.body) {
      stages["metrics"] = cmd_metrics(cfg, out / "recover" / "body.ply", *in.body, out / "metrics");
      stages["align_body"] = cmd_align(cfg, *in.body, in.joints, out / "align_body");
      stages["tightness_gt"] =
          cmd_tightness_gt(cfg, out / "align", out / "align_body", in.scan, *in.body, out / "tightness_gt");
      stages["recover_gt"] =
          cmd_recover(cfg, out / "align", out / "tightness_gt" / "field.json", out / "recover_gt");
      stages["metrics_gt"] = cmd_metrics(cfg, out / "recover_gt" / "body.ply", *in.body, out / "metrics_gt");
      summary["baseline_mean_distance_m"] = stages["metrics"]["mean_distance_m"];
      summary["ground_truth_mean_distance_m"] = stages["metrics_gt"]["mean_distance_m"];
      summary["baseline_error_mm"] = stages["metrics"]["error_mm"];
      summary["ground_truth_error_mm"] = stages["metrics_gt"]["error_mm"];
      if (in.offset && *in.offset > 0) {
        summary["offset"] = *in.offset;
        summary["baseline_fraction_of_offset"] = stages["metrics"]["mean_distance_m"].get<double>() / *in.offset;
        summary["ground_truth_fraction_of_offset"] =
            stages["metrics_gt"]["mean_distance_m"].get<double>() / *in.offset;
      }
    }
  } catch (const StageError& e) {
    summary["failed_stage"] = e.stage;
    summary["error"] = e.what();
    finish("error");
    throw;
  }
  return finish("ok");
}

}  // namespace tightcap::cli
