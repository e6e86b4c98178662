#include "vlpd/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "vlpd/error.hpp"

namespace vlpd {
namespace {

using nlohmann::json;

template <typename T>
void read_field(const json& j, const char* key, T& out, std::set<std::string>& consumed) {
  consumed.insert(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, const std::set<std::string>& consumed, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!consumed.count(key)) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

json policy_to_json(const ClassPolicy& p) {
  json arr = json::array();
  for (const auto& e : p.entries) {
    arr.push_back({{"original", e.original}, {"compacted", e.compacted}, {"used", e.used}});
  }
  return arr;
}

ClassPolicy policy_from_json(const json& j) {
  if (!j.is_array()) throw ConfigError("class_policy must be an array of entries");
  ClassPolicy p;
  for (const auto& item : j) {
    PolicyEntry e;
    std::set<std::string> consumed;
    read_field(item, "original", e.original, consumed);
    read_field(item, "compacted", e.compacted, consumed);
    read_field(item, "used", e.used, consumed);
    reject_unknown(item, consumed, "class_policy[].");
    p.entries.push_back(std::move(e));
  }
  return p;
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (!(tau > 0.0)) fail("tau must be > 0");
  if (!(tau_prime > 0.0)) fail("tau_prime must be > 0");
  if (lambda1 < 0.0 || lambda2 < 0.0) fail("loss weights must be >= 0");
  if (stride != 4) fail("only stride 4 detection features are supported by the toy network");
  if (!(aspect_ratio > 0.0)) fail("aspect_ratio must be > 0");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (iterations < 0) fail("iterations must be >= 0");
  if (encoder.c1 < 1 || encoder.c2 < 1 || encoder.c3 < 1 || encoder.c4 < 1 || encoder.c5 < 1 ||
      encoder.d_prime < 1) {
    fail("encoder widths must be positive");
  }
  if (head.deconv_s3 < 1 || head.deconv_s4 < 1 || head.deconv_s5 < 1 || head.hidden < 1) {
    fail("head widths must be positive");
  }
  for (double s : image_std) {
    if (!(s > 0.0)) fail("image_std entries must be > 0");
  }
  if (!(detection_threshold > 0.0 && detection_threshold < 1.0)) {
    fail("detection_threshold must be in (0, 1)");
  }
  if (prompt_template.find("[CLS]") == std::string::npos) {
    fail("prompt_template must contain [CLS]");
  }
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["lambda1"] = c.lambda1;
  j["lambda2"] = c.lambda2;
  j["tau"] = c.tau;
  j["tau_prime"] = c.tau_prime;
  j["stride"] = c.stride;
  j["aspect_ratio"] = c.aspect_ratio;
  j["class_policy"] = policy_to_json(c.class_policy);
  j["prompt_template"] = c.prompt_template;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["iterations"] = c.iterations;
  j["seed"] = c.seed;
  j["precision"] = c.precision == Precision::kF64 ? "f64" : "f32";
  j["encoder"] = {{"c1", c.encoder.c1}, {"c2", c.encoder.c2}, {"c3", c.encoder.c3},
                  {"c4", c.encoder.c4}, {"c5", c.encoder.c5}, {"d_prime", c.encoder.d_prime}};
  j["head"] = {{"deconv_s3", c.head.deconv_s3},
               {"deconv_s4", c.head.deconv_s4},
               {"deconv_s5", c.head.deconv_s5},
               {"hidden", c.head.hidden}};
  j["image_mean"] = c.image_mean;
  j["image_std"] = c.image_std;
  j["detection_threshold"] = c.detection_threshold;
  j["nms_iou"] = c.nms_iou;
  j["dataset_dir"] = c.dataset_dir;
  j["pseudo_label_dir"] = c.pseudo_label_dir;
  j["output_dir"] = c.output_dir;
  j["log_every"] = c.log_every;
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be an object");

  RunConfig c;
  std::set<std::string> consumed;
  read_field(j, "lambda1", c.lambda1, consumed);
  read_field(j, "lambda2", c.lambda2, consumed);
  read_field(j, "tau", c.tau, consumed);
  read_field(j, "tau_prime", c.tau_prime, consumed);
  read_field(j, "stride", c.stride, consumed);
  read_field(j, "aspect_ratio", c.aspect_ratio, consumed);
  read_field(j, "prompt_template", c.prompt_template, consumed);
  read_field(j, "learning_rate", c.learning_rate, consumed);
  read_field(j, "batch_size", c.batch_size, consumed);
  read_field(j, "iterations", c.iterations, consumed);
  read_field(j, "seed", c.seed, consumed);
  read_field(j, "image_mean", c.image_mean, consumed);
  read_field(j, "image_std", c.image_std, consumed);
  read_field(j, "detection_threshold", c.detection_threshold, consumed);
  read_field(j, "nms_iou", c.nms_iou, consumed);
  read_field(j, "dataset_dir", c.dataset_dir, consumed);
  read_field(j, "pseudo_label_dir", c.pseudo_label_dir, consumed);
  read_field(j, "output_dir", c.output_dir, consumed);
  read_field(j, "log_every", c.log_every, consumed);

  consumed.insert("precision");
  if (j.contains("precision")) {
    const auto p = j.at("precision").get<std::string>();
    if (p == "f32") {
      c.precision = Precision::kF32;
    } else if (p == "f64") {
      c.precision = Precision::kF64;
    } else {
      throw ConfigError("precision must be \"f32\" or \"f64\", got \"" + p + "\"");
    }
  }
  consumed.insert("class_policy");
  if (j.contains("class_policy")) c.class_policy = policy_from_json(j.at("class_policy"));
  consumed.insert("encoder");
  if (j.contains("encoder")) {
    std::set<std::string> sub;
    const auto& e = j.at("encoder");
    read_field(e, "c1", c.encoder.c1, sub);
    read_field(e, "c2", c.encoder.c2, sub);
    read_field(e, "c3", c.encoder.c3, sub);
    read_field(e, "c4", c.encoder.c4, sub);
    read_field(e, "c5", c.encoder.c5, sub);
    read_field(e, "d_prime", c.encoder.d_prime, sub);
    reject_unknown(e, sub, "encoder.");
  }
  consumed.insert("head");
  if (j.contains("head")) {
    std::set<std::string> sub;
    const auto& h = j.at("head");
    read_field(h, "deconv_s3", c.head.deconv_s3, sub);
    read_field(h, "deconv_s4", c.head.deconv_s4, sub);
    read_field(h, "deconv_s5", c.head.deconv_s5, sub);
    read_field(h, "hidden", c.head.hidden, sub);
    reject_unknown(h, sub, "head.");
  }
  reject_unknown(j, consumed, "");
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig c = run_config_from_json(ss.str());
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.dataset_dir);
  resolve(c.pseudo_label_dir);
  resolve(c.output_dir);
  return c;
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config '" + path.string() + "'");
  out << run_config_to_json(cfg) << '\n';
}

}  // namespace vlpd
