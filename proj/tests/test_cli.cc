#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>

#include "commands.h"
#include "config.h"
#include "doctest.h"
#include "test_util.h"

using namespace tightcap;
using namespace tightcap::cli;
using nlohmann::json;

namespace {

// Coarse registration so the stage chain runs in seconds.
const char* kFast =
    " --set registration.nodes_s=150 --set registration.nodes_d=250 --set registration.icp_iterations=2"
    " --set registration.gn_steps=2 --set registration.resolution=256";

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + TIGHTCAP_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json report_of(const fs::path& dir) { return json::parse(slurp(dir / "report.json")); }

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

const fs::path& workspace() {
  static const fs::path dir = testing::temp_dir("cli");
  return dir;
}

// synth output shared by the cases below.
const fs::path& fixture() {
  static const fs::path dir = [] {
    const fs::path d = workspace() / "fixture";
    REQUIRE(run_cli("synth --offset 0.03 --pose A --out " + q(d), workspace() / "synth.log") == 0);
    return d;
  }();
  return dir;
}

// align, gi, predict, recover, segment and metrics run one by one.
const fs::path& stage_chain() {
  static const fs::path dir = [] {
    const fs::path d = workspace() / "chain", fx = fixture();
    const std::string tpl = " --template " + q(fx / "template");
    const fs::path log = workspace() / "chain.log";
    REQUIRE(run_cli("align" + tpl + kFast + " --scan " + q(fx / "scan.ply") + " --joints " + q(fx / "joints.json") +
                        " --out " + q(d / "align"),
                    log) == 0);
    REQUIRE(run_cli("gi" + tpl + " --alignment " + q(d / "align") + " --scan " + q(fx / "scan.ply") + " --out " +
                        q(d / "gi"),
                    log) == 0);
    REQUIRE(run_cli("predict" + tpl + " --gi " + q(d / "gi" / "clothed.cgi") + " --reference " +
                        q(d / "gi" / "reference.cgi") + " --out " + q(d / "predict"),
                    log) == 0);
    REQUIRE(run_cli("recover" + tpl + " --alignment " + q(d / "align") + " --field " +
                        q(d / "predict" / "prediction.cgi") + " --out " + q(d / "recover"),
                    log) == 0);
    REQUIRE(run_cli("segment" + tpl + " --alignment " + q(d / "align") + " --prediction " +
                        q(d / "predict" / "prediction.cgi") + " --out " + q(d / "segment"),
                    log) == 0);
    REQUIRE(run_cli("metrics --mesh " + q(d / "recover" / "body.ply") + " --reference " + q(fx / "body.ply") +
                        " --out " + q(d / "metrics"),
                    log) == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("config: defaults, file values, overrides and unknown keys") {
  const PipelineConfig defaults = parse_config(json::object());
  CHECK(defaults.gi_resolution == 224);
  CHECK(defaults.recovery.lambda_reg == 0.05);
  CHECK(defaults.predictor.kind == "baseline");

  const fs::path dir = testing::temp_dir("cli_config");
  std::ofstream(dir / "cfg.json") << R"({"template": "tpl", "gi_resolution": 128,
    "recovery": {"lambda_smooth": 0.2}, "tightness": {"normalization": "count"}})";
  const json tree = load_config_tree(dir / "cfg.json", {"recovery.lambda_smooth=0.3", "predictor.bridge=run {input} {output}"});
  const PipelineConfig cfg = parse_config(tree);
  CHECK(cfg.template_path == dir / "tpl");
  CHECK(cfg.gi_resolution == 128);
  CHECK(cfg.recovery.lambda_smooth == 0.3);
  CHECK(cfg.tightness.normalization == TightnessNormalization::count);
  CHECK(cfg.predictor.bridge == "run {input} {output}");
  CHECK(parse_config(to_json(cfg)).recovery.lambda_smooth == 0.3);

  CHECK_THROWS_AS(parse_config(json{{"recovery", {{"lambda_smoth", 1}}}}), UsageError);
  CHECK_THROWS_AS(parse_config(json{{"bogus", 1}}), UsageError);
  CHECK_THROWS_AS(parse_config(json{{"recovery", {{"smoothing_rings", 1.5}}}}), UsageError);
  CHECK_THROWS_AS(parse_config(json{{"tightness", {{"normalization", "median"}}}}), UsageError);
  json t = json::object();
  CHECK_THROWS_AS(apply_override(t, "no_equals_sign"), UsageError);
  PipelineConfig bad = defaults;
  bad.recovery.lambda_fit = -1;
  CHECK_THROWS_AS(validate(bad, false), UsageError);
  bad = defaults;
  bad.predictor.kind = "external";
  CHECK_THROWS_AS(validate(bad, false), UsageError);
  CHECK_THROWS_AS(validate(defaults, true), UsageError);  // no template
}

TEST_CASE("synth writes four artifacts and a manifest; bad specs exit 2") {
  const fs::path fx = fixture();
  const json m = json::parse(slurp(fx / "manifest.json"));
  REQUIRE(m.at("files").size() == 4);
  for (const auto& [key, name] : m.at("files").items()) CHECK(fs::exists(fx / name.get<std::string>()));
  CHECK(m.at("pose") == "A");
  IntProperties extra;
  load_mesh(fx / "body.ply", extra);
  REQUIRE(extra.size() == 1);
  CHECK(extra[0].first == "garment");

  const fs::path log = workspace() / "bad.log";
  CHECK(run_cli("synth --offset -1 --out " + q(workspace() / "neg"), log) == 2);
  CHECK(slurp(log).find("offset") != std::string::npos);
  CHECK(run_cli("synth --pose Q --out " + q(workspace() / "badpose"), log) == 2);
  CHECK(run_cli("synth --out", log) == 2);
  CHECK(run_cli("frobnicate", log) == 2);
  CHECK(run_cli("", log) == 2);
}

TEST_CASE("stage chain writes outputs and reports") {
  const fs::path d = stage_chain();
  for (const char* stage : {"align", "gi", "predict", "recover", "segment", "metrics"}) {
    CAPTURE(stage);
    const json r = report_of(d / stage);
    CHECK(r.at("status") == "ok");
    CHECK(r.at("seconds").get<double>() >= 0);
    CHECK(r.contains("started_at"));
  }
  for (const char* f : {"align/m_v.ply", "align/m_warp.ply", "align/render.ppm", "gi/clothed.cgi",
                        "gi/reference.cgi", "predict/prediction.cgi", "recover/body.ply", "recover/body_direct.ply",
                        "segment/labels.ply", "segment/upper.ply", "segment/lower.ply"})
    CHECK(fs::exists(d / f));
  CHECK(report_of(d / "align").at("stages").size() == 3);
  CHECK(report_of(d / "predict").at("provenance") == "baseline");
  CHECK(report_of(d / "recover").at("energies").size() >= 1);

  IntProperties extra;
  const TriMesh labels = load_mesh(d / "segment" / "labels.ply", extra);
  REQUIRE(extra.size() == 1);
  CHECK(extra[0].first == "garment");
  const json counts = report_of(d / "segment").at("labels");
  CHECK(counts.at("upper").get<int>() > 0);
  CHECK(counts.at("body").get<int>() + counts.at("upper").get<int>() + counts.at("lower").get<int>() ==
        labels.num_vertices());

  const json m = report_of(d / "metrics");
  CHECK(m.at("mean").get<double>() <= m.at("rms").get<double>());
  CHECK(m.at("rms").get<double>() <= m.at("max").get<double>());
  CHECK(m.at("error_mm").get<double>() ==
        doctest::Approx(m.at("mean").get<double>() * m.at("normalizer").get<double>() * 1000));
  // Coarse registration still puts the recovered body within the clothing gap.
  CHECK(m.at("mean_distance_m").get<double>() < 0.03);
}

TEST_CASE("metrics honours the normalizer flag") {
  const fs::path d = stage_chain(), out = workspace() / "metrics3";
  REQUIRE(run_cli("metrics --normalizer 3 --mesh " + q(d / "recover" / "body.ply") + " --reference " +
                      q(fixture() / "body.ply") + " --out " + q(out),
                  workspace() / "m3.log") == 0);
  const json m = report_of(out), base = report_of(d / "metrics");
  CHECK(m.at("normalizer") == 3.0);
  CHECK(m.at("error_mm").get<double>() == doctest::Approx(base.at("error_mm").get<double>()));
  CHECK(m.at("mean").get<double>() * 3 == doctest::Approx(m.at("mean_distance_m").get<double>()));
}

TEST_CASE("stages are deterministic") {
  const fs::path d = stage_chain(), fx = fixture(), again = workspace() / "again";
  const std::string tpl = " --template " + q(fx / "template");
  REQUIRE(run_cli("gi" + tpl + " --alignment " + q(d / "align") + " --scan " + q(fx / "scan.ply") + " --out " +
                      q(again / "gi"),
                  workspace() / "again.log") == 0);
  REQUIRE(run_cli("recover" + tpl + " --alignment " + q(d / "align") + " --field " +
                      q(d / "predict" / "prediction.cgi") + " --out " + q(again / "recover"),
                  workspace() / "again.log") == 0);
  CHECK(slurp(again / "gi" / "clothed.cgi") == slurp(d / "gi" / "clothed.cgi"));
  CHECK(slurp(again / "recover" / "body.ply") == slurp(d / "recover" / "body.ply"));
}

TEST_CASE("pipeline equals the individual stage invocations") {
  const fs::path d = stage_chain(), fx = fixture(), out = workspace() / "pipeline";
  REQUIRE(run_cli(std::string("pipeline --template ") + q(fx / "template") + kFast + " --scan " +
                      q(fx / "scan.ply") + " --joints " + q(fx / "joints.json") + " --out " + q(out),
                  workspace() / "pipeline.log") == 0);
  for (const char* f : {"align/m_v.ply", "align/metrics.json", "gi/clothed.cgi", "predict/prediction.cgi",
                        "recover/body.ply", "segment/labels.ply"}) {
    CAPTURE(f);
    CHECK(slurp(out / f) == slurp(d / f));
  }
  const json r = report_of(out);
  CHECK(r.at("status") == "ok");
  CHECK(r.at("config").at("registration").at("nodes_s") == 150);
  CHECK(!r.at("stages").contains("metrics"));  // no ground-truth body given
}

TEST_CASE("broken bridge exits 1 with diagnostics in the report") {
  const fs::path d = stage_chain(), out = workspace() / "bridge";
  const fs::path log = workspace() / "bridge.log";
  CHECK(run_cli("predict --template " + q(fixture() / "template") + " --predictor external --bridge " +
                    "\"echo bridge-broke >&2; exit 3 # {input} {output}\" --gi " + q(d / "gi" / "clothed.cgi") +
                    " --out " + q(out),
                log) == 1);
  const json r = report_of(out);
  CHECK(r.at("status") == "error");
  CHECK(r.at("error").at("stage") == "predict");
  CHECK(r.at("error").at("exit_code") == 3);
  CHECK(r.at("error").at("diagnostics").get<std::string>().find("bridge-broke") != std::string::npos);
  CHECK(slurp(log).find("predict") != std::string::npos);
}

TEST_CASE("usage errors exit 2, runtime failures exit 1") {
  const fs::path d = stage_chain(), log = workspace() / "errors.log";
  const std::string tpl = " --template " + q(fixture() / "template");
  // Baseline without a reference, unknown config key, missing template.
  CHECK(run_cli("predict" + tpl + " --gi " + q(d / "gi" / "clothed.cgi") + " --out " + q(workspace() / "e1"), log) ==
        2);
  CHECK(run_cli("recover" + tpl + " --set recovery.bogus=1 --alignment " + q(d / "align") + " --field " +
                    q(d / "predict" / "prediction.cgi") + " --out " + q(workspace() / "e2"),
                log) == 2);
  CHECK(run_cli("recover --template " + q(workspace() / "nope") + " --alignment " + q(d / "align") + " --field " +
                    q(d / "predict" / "prediction.cgi") + " --out " + q(workspace() / "e3"),
                log) == 2);
  CHECK(run_cli("pipeline" + tpl + " --out " + q(workspace() / "e4"), log) == 2);

  // A field file that does not parse is a stage failure.
  std::ofstream(workspace() / "junk.json") << "{not json";
  CHECK(run_cli("recover" + tpl + " --alignment " + q(d / "align") + " --field " + q(workspace() / "junk.json") +
                    " --out " + q(workspace() / "e5"),
                log) == 1);
  CHECK(report_of(workspace() / "e5").at("error").at("stage") == "recover");
  CHECK(slurp(log).find("recover") != std::string::npos);
}
