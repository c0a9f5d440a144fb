#include "config.h"

#include <fstream>
#include <set>

namespace tightcap::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// One visitor per config struct serves both reading and writing.
template <typename V>
void fields(RegistrationConfig& c, V&& v) {
  v("lambda_reg_s", c.lambda_reg_s);
  v("lambda_point_d", c.lambda_point_d);
  v("lambda_plane_d", c.lambda_plane_d);
  v("lambda_reg_d", c.lambda_reg_d);
  v("lambda_point_v", c.lambda_point_v);
  v("lambda_plane_v", c.lambda_plane_v);
  v("lambda_reg_v", c.lambda_reg_v);
  v("nodes_s", c.nodes_s);
  v("nodes_d", c.nodes_d);
  v("bind_k", c.bind_k);
  v("icp_iterations", c.icp_iterations);
  v("gn_steps", c.gn_steps);
  v("gate_distance", c.gate_distance);
  v("gate_angle_deg", c.gate_angle_deg);
  v("resolution", c.resolution);
}

template <typename V>
void fields(TightnessConfig& c, V&& v) {
  v("cone_aperture_deg", c.cone_aperture_deg);
  v("knn_k", c.knn_k);
  v("kernel_sigma_deg", c.kernel_sigma_deg);
  v("normalization", c.normalization);
  v("cone_max_range", c.cone_max_range);
  v("contact_distance", c.contact_distance);
}

template <typename V>
void fields(RecoveryConfig& c, V&& v) {
  v("lambda_fit", c.lambda_fit);
  v("lambda_smooth", c.lambda_smooth);
  v("lambda_reg", c.lambda_reg);
  v("smoothing_rings", c.smoothing_rings);
  v("smoothing_sigma", c.smoothing_sigma);
  v("max_outer_iters", c.max_outer_iters);
  v("cg_max_iters", c.cg_max_iters);
  v("cg_tolerance", c.cg_tolerance);
}

template <typename V>
void fields(BaselineConfig& c, V&& v) {
  v("max_magnitude", c.max_magnitude);
  v("smoothing_rows", c.smoothing_rows);
}

template <typename V>
void fields(PredictorConfig& c, V&& v) {
  v("kind", c.kind);
  v("bridge", c.bridge);
  v("timeout_seconds", c.timeout_seconds);
}

template <typename V>
void fields(SegmentationConfig& c, V&& v) {
  v("pairwise_weight", c.pairwise_weight);
  v("max_sweeps", c.max_sweeps);
}

const char* normalization_name(TightnessNormalization n) {
  return n == TightnessNormalization::count ? "count" : "weight_sum";
}

class Reader {
 public:
  Reader(const json& node, std::string section) : node_(node), section_(std::move(section)) {
    if (!node_.is_object()) throw UsageError("config: '" + section_ + "' must be an object");
  }

  template <typename T>
  void operator()(const char* key, T& value) {
    known_.insert(key);
    if (!node_.contains(key)) return;
    const json& v = node_.at(key);
    try {
      if constexpr (std::is_same_v<T, int>) {
        if (!v.is_number_integer()) throw UsageError("expected an integer");
        value = v.get<int>();
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw UsageError("expected a number");
        value = v.get<double>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw UsageError("expected a string");
        value = v.get<std::string>();
      } else if constexpr (std::is_same_v<T, TightnessNormalization>) {
        const std::string s = v.is_string() ? v.get<std::string>() : "";
        if (s == "weight_sum") value = TightnessNormalization::weight_sum;
        else if (s == "count") value = TightnessNormalization::count;
        else throw UsageError("expected \"weight_sum\" or \"count\"");
      }
    } catch (const UsageError& e) {
      throw UsageError("config: " + section_ + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    for (const auto& [key, _] : node_.items())
      if (!known_.count(key)) throw UsageError("config: unknown key '" + section_ + "." + key + "'");
  }

 private:
  const json& node_;
  std::string section_;
  std::set<std::string> known_;
};

struct Writer {
  json& node;
  template <typename T>
  void operator()(const char* key, const T& value) {
    if constexpr (std::is_same_v<T, TightnessNormalization>) node[key] = normalization_name(value);
    else node[key] = value;
  }
};

template <typename C>
void read_section(const json& tree, const char* name, C& cfg) {
  if (!tree.contains(name)) return;
  Reader r(tree.at(name), name);
  fields(cfg, r);
  r.finish();
}

template <typename C>
json write_section(C cfg) {
  json node = json::object();
  fields(cfg, Writer{node});
  return node;
}

const std::set<std::string>& top_level_keys() {
  static const std::set<std::string> keys = {"template",  "output",     "gi_resolution", "metrics",
                                             "registration", "tightness", "recovery",      "baseline",
                                             "predictor", "segmentation"};
  return keys;
}

// Parses an override value: JSON when it parses, the raw text otherwise.
json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

void resolve_path(json& tree, const char* key, const fs::path& base) {
  if (!tree.contains(key) || !tree.at(key).is_string()) return;
  const fs::path p = tree.at(key).get<std::string>();
  if (p.is_relative()) tree[key] = (base / p).lexically_normal().string();
}

}  // namespace

void apply_override(json& tree, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  json* node = &tree;
  size_t start = 0;
  while (true) {
    const size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw UsageError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) throw UsageError("override '" + assignment + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = parse_value(assignment.substr(eq + 1));
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

json load_config_tree(const fs::path& file, const std::vector<std::string>& overrides) {
  json tree = json::object();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw UsageError("cannot open config file " + file.string());
    try {
      tree = json::parse(in);
    } catch (const json::parse_error& e) {
      throw UsageError("config file " + file.string() + ": " + e.what());
    }
    if (!tree.is_object()) throw UsageError("config file " + file.string() + " must hold an object");
    const fs::path base = file.parent_path();
    resolve_path(tree, "template", base);
    resolve_path(tree, "output", base);
  }
  for (const auto& o : overrides) apply_override(tree, o);
  return tree;
}

PipelineConfig parse_config(const json& tree) {
  if (!tree.is_object()) throw UsageError("config must be an object");
  for (const auto& [key, _] : tree.items())
    if (!top_level_keys().count(key)) throw UsageError("config: unknown key '" + key + "'");
  PipelineConfig cfg;
  auto path_of = [&](const char* key, fs::path& out) {
    if (!tree.contains(key)) return;
    if (!tree.at(key).is_string()) throw UsageError(std::string("config: ") + key + ": expected a string");
    out = tree.at(key).get<std::string>();
  };
  path_of("template", cfg.template_path);
  path_of("output", cfg.output_dir);
  if (tree.contains("gi_resolution")) {
    if (!tree.at("gi_resolution").is_number_integer()) throw UsageError("config: gi_resolution: expected an integer");
    cfg.gi_resolution = tree.at("gi_resolution").get<int>();
  }
  if (tree.contains("metrics")) {
    Reader r(tree.at("metrics"), "metrics");
    r("normalizer", cfg.metrics_normalizer);
    r.finish();
  }
  read_section(tree, "registration", cfg.registration);
  read_section(tree, "tightness", cfg.tightness);
  read_section(tree, "recovery", cfg.recovery);
  read_section(tree, "baseline", cfg.baseline);
  read_section(tree, "predictor", cfg.predictor);
  read_section(tree, "segmentation", cfg.segmentation);
  return cfg;
}

json to_json(const PipelineConfig& cfg) {
  json j;
  j["template"] = cfg.template_path.string();
  j["output"] = cfg.output_dir.string();
  j["gi_resolution"] = cfg.gi_resolution;
  j["metrics"] = {{"normalizer", cfg.metrics_normalizer}};
  j["registration"] = write_section(cfg.registration);
  j["tightness"] = write_section(cfg.tightness);
  j["recovery"] = write_section(cfg.recovery);
  j["baseline"] = write_section(cfg.baseline);
  j["predictor"] = write_section(cfg.predictor);
  j["segmentation"] = write_section(cfg.segmentation);
  return j;
}

void validate(const PipelineConfig& cfg, bool need_template) {
  try {
    validate(cfg.registration);
    validate(cfg.tightness);
    validate(cfg.recovery);
  } catch (const Error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (need_template) {
    if (cfg.template_path.empty()) throw UsageError("config: no template path given");
    if (!fs::is_directory(cfg.template_path))
      throw UsageError("config: template directory " + cfg.template_path.string() + " does not exist");
  }
  if (cfg.gi_resolution < 8) throw UsageError("config: gi_resolution must be at least 8");
  if (!(cfg.metrics_normalizer >= 0)) throw UsageError("config: metrics.normalizer must be non-negative");
  if (!(cfg.baseline.max_magnitude > 0)) throw UsageError("config: baseline.max_magnitude must be positive");
  if (cfg.baseline.smoothing_rows < 0) throw UsageError("config: baseline.smoothing_rows must be non-negative");
  if (cfg.predictor.kind != "baseline" && cfg.predictor.kind != "external")
    throw UsageError("config: predictor.kind must be \"baseline\" or \"external\"");
  if (cfg.predictor.kind == "external" && cfg.predictor.bridge.empty())
    throw UsageError("config: the external predictor needs predictor.bridge");
  if (!(cfg.predictor.timeout_seconds > 0)) throw UsageError("config: predictor.timeout_seconds must be positive");
  if (!(cfg.segmentation.pairwise_weight >= 0)) throw UsageError("config: segmentation.pairwise_weight must be >= 0");
  if (cfg.segmentation.max_sweeps < 1) throw UsageError("config: segmentation.max_sweeps must be at least 1");
}

}  // namespace tightcap::cli
