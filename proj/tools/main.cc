// tightcap: body shape under clothing, one subcommand per pipeline stage.
// Exit codes: 0 success, 1 stage failure, 2 usage error.

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "commands.h"
#include "config.h"

namespace {

using namespace tightcap;
using namespace tightcap::cli;

// Options every stage shares: config file, overrides and a few shortcuts.
struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string template_dir;
  std::optional<int> resolution;
  std::optional<std::string> predictor, bridge;
  std::optional<double> timeout, pairwise_weight, normalizer;
  std::string out;

  void attach(CLI::App* app, bool need_out = true) {
    app->add_option("--config", config_file, "Config file (JSON)")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override a config key, e.g. recovery.lambda_reg=0.1")->take_all();
    app->add_option("--template", template_dir, "Template directory");
    app->add_option("--resolution", resolution, "Geometry image resolution");
    app->add_option("--predictor", predictor, "baseline or external");
    app->add_option("--bridge", bridge, "External predictor command with {input} and {output}");
    app->add_option("--timeout", timeout, "External predictor timeout, seconds");
    app->add_option("--pairwise-weight", pairwise_weight, "Segmentation Potts weight");
    app->add_option("--normalizer", normalizer, "Metrics normalizer, meters (0: reference bbox diagonal)");
    app->add_option("--out", out, "Output directory")->required(need_out);
  }

  PipelineConfig resolve(bool need_template) const {
    nlohmann::json tree = load_config_tree(config_file, sets);
    if (!template_dir.empty()) tree["template"] = template_dir;
    if (!out.empty()) tree["output"] = out;
    if (resolution) tree["gi_resolution"] = *resolution;
    if (predictor) tree["predictor"]["kind"] = *predictor;
    if (bridge) tree["predictor"]["bridge"] = *bridge;
    if (timeout) tree["predictor"]["timeout_seconds"] = *timeout;
    if (pairwise_weight) tree["segmentation"]["pairwise_weight"] = *pairwise_weight;
    if (normalizer) tree["metrics"]["normalizer"] = *normalizer;
    PipelineConfig cfg = parse_config(tree);
    validate(cfg, need_template);
    return cfg;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"tightcap: recover body shape and garments from a clothed scan"};
  app.require_subcommand(1);

  SynthArgs synth;
  std::string synth_out;
  auto* s = app.add_subcommand("synth", "Write a synthetic template, clothed scan, body and joints");
  s->add_option("--offset", synth.offset, "Clothing gap, meters");
  s->add_option("--pose", synth.pose, "T, A or W");
  s->add_option("--noise", synth.noise, "Scan noise std dev, meters");
  s->add_option("--seed", synth.seed, "Noise seed");
  s->add_option("--smoothing", synth.smoothing, "Garment smoothing passes");
  s->add_option("--out", synth_out, "Output directory")->required();

  Common c_align, c_gi, c_tgt, c_pred, c_rec, c_seg, c_met, c_pipe;
  std::string scan, joints, alignment, body_alignment, body, gi, reference, field, prediction, mesh, fixture;

  auto* a = app.add_subcommand("align", "Three-stage alignment of the template to a scan");
  c_align.attach(a);
  a->add_option("--scan", scan, "Clothed scan mesh")->required()->check(CLI::ExistingFile);
  a->add_option("--joints", joints, "3D joints file")->required()->check(CLI::ExistingFile);

  auto* g = app.add_subcommand("gi", "Geometry images of an alignment");
  c_gi.attach(g);
  g->add_option("--alignment", alignment, "Alignment directory")->required()->check(CLI::ExistingDirectory);
  g->add_option("--scan", scan, "Scan to take vertex colors from")->check(CLI::ExistingFile);

  auto* t = app.add_subcommand("tightness-gt", "Ground-truth tightness from a clothed and a body alignment");
  c_tgt.attach(t);
  t->add_option("--alignment", alignment, "Clothed alignment directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--body-alignment", body_alignment, "Body alignment directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  t->add_option("--scan", scan, "Clothed scan mesh")->required()->check(CLI::ExistingFile);
  t->add_option("--body", body, "Ground-truth body mesh")->required()->check(CLI::ExistingFile);

  auto* p = app.add_subcommand("predict", "Tightness and garment masks from a clothed geometry image");
  c_pred.attach(p);
  p->add_option("--gi", gi, "Clothed geometry image")->required()->check(CLI::ExistingFile);
  p->add_option("--reference", reference, "Unclothed reference geometry image (baseline)")
      ->check(CLI::ExistingFile);

  auto* r = app.add_subcommand("recover", "Body shape from an alignment and a tightness field");
  c_rec.attach(r);
  r->add_option("--alignment", alignment, "Alignment directory")->required()->check(CLI::ExistingDirectory);
  r->add_option("--field", field, "field.json or prediction .cgi")->required()->check(CLI::ExistingFile);

  auto* sg = app.add_subcommand("segment", "Garment labels from predicted masks");
  c_seg.attach(sg);
  sg->add_option("--alignment", alignment, "Alignment directory")->required()->check(CLI::ExistingDirectory);
  sg->add_option("--prediction", prediction, "Prediction .cgi")->required()->check(CLI::ExistingFile);

  auto* m = app.add_subcommand("metrics", "Metro distances between two meshes");
  c_met.attach(m);
  m->add_option("--mesh", mesh, "Mesh to evaluate")->required()->check(CLI::ExistingFile);
  m->add_option("--reference", reference, "Reference mesh")->required()->check(CLI::ExistingFile);

  auto* pl = app.add_subcommand("pipeline", "All stages end to end");
  c_pipe.attach(pl);
  pl->add_option("--fixture", fixture, "Synth output directory")->check(CLI::ExistingDirectory);
  pl->add_option("--scan", scan, "Clothed scan mesh")->check(CLI::ExistingFile);
  pl->add_option("--joints", joints, "3D joints file")->check(CLI::ExistingFile);
  pl->add_option("--body", body, "Ground-truth body mesh (enables the ground-truth path)")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    auto opt = [](const std::string& v) { return v.empty() ? std::nullopt : std::optional<fs::path>(v); };
    nlohmann::json report;
    if (*s) {
      report = cmd_synth(synth, synth_out);
    } else if (*a) {
      report = cmd_align(c_align.resolve(true), scan, joints, c_align.out);
    } else if (*g) {
      report = cmd_gi(c_gi.resolve(true), alignment, opt(scan), c_gi.out);
    } else if (*t) {
      report = cmd_tightness_gt(c_tgt.resolve(true), alignment, body_alignment, scan, body, c_tgt.out);
    } else if (*p) {
      const PipelineConfig cfg = c_pred.resolve(true);
      if (cfg.predictor.kind == "baseline" && reference.empty())
        throw UsageError("predict: the baseline predictor needs --reference");
      report = cmd_predict(cfg, gi, opt(reference), c_pred.out);
    } else if (*r) {
      report = cmd_recover(c_rec.resolve(true), alignment, field, c_rec.out);
    } else if (*sg) {
      report = cmd_segment(c_seg.resolve(true), alignment, prediction, c_seg.out);
    } else if (*m) {
      report = cmd_metrics(c_met.resolve(false), mesh, reference, c_met.out);
    } else if (*pl) {
      PipelineConfig cfg = c_pipe.resolve(false);
      PipelineInputs in;
      if (!fixture.empty()) in = inputs_from_fixture(fixture, cfg);
      if (!scan.empty()) in.scan = scan;
      if (!joints.empty()) in.joints = joints;
      if (!body.empty()) in.body = body;
      if (in.scan.empty() || in.joints.empty()) throw UsageError("pipeline: give --fixture or --scan and --joints");
      validate(cfg, true);
      report = cmd_pipeline(cfg, in, c_pipe.out);
    }
    std::cout << report.dump(2) << "\n";
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const StageError& e) {
    std::cerr << "stage failed: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
