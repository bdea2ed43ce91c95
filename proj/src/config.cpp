#include "mh2f/config.hpp"

#include <set>

#include <json.hpp>

#include "mh2f/errors.hpp"

namespace mh2f {

using nlohmann::json;

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::rpf: return "rpf";
    case FusionMode::add: return "add";
    case FusionMode::concat: return "concat";
  }
  return "rpf";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "rpf") return FusionMode::rpf;
  if (s == "add") return FusionMode::add;
  if (s == "concat") return FusionMode::concat;
  throw config_error("unknown fusion_mode '" + s + "' (expected rpf, add or concat)");
}

std::vector<std::string> validate_model_config(const ModelConfig& c) {
  std::vector<std::string> v;
  if (c.num_mheb < 1) v.push_back("num_mheb must be >= 1");
  if (c.base_channels < 4) v.push_back("base_channels must be >= 4");
  if (c.dcr_units_per_stream < 1) v.push_back("dcr_units_per_stream must be >= 1");
  if (c.growth() < 1) v.push_back("dcr_growth must be >= 1");
  if (c.attention_reduction < 1) v.push_back("attention_reduction must be >= 1");
  if (c.attention_reduction >= 1 && c.base_channels % c.attention_reduction != 0)
    v.push_back("base_channels must be divisible by attention_reduction");
  if (c.use_hadb && c.num_mheb < 2)
    v.push_back("num_mheb must be >= 2 when use_hadb is set (the distillation stage "
                "consumes N-1 hierarchical outputs)");
  return v;
}

std::vector<std::string> validate_train_config(const TrainConfig& c) {
  std::vector<std::string> v = validate_model_config(c.model);
  if (!(c.lr > 0)) v.push_back("lr must be > 0");
  if (c.beta1 < 0 || c.beta1 >= 1) v.push_back("beta1 must be in [0,1)");
  if (c.beta2 < 0 || c.beta2 >= 1) v.push_back("beta2 must be in [0,1)");
  if (c.lambda < 0) v.push_back("lambda must be >= 0");
  if (c.batch_size < 1) v.push_back("batch_size must be >= 1");
  if (c.patch_size < 8 || c.patch_size % 4 != 0)
    v.push_back("patch_size must be >= 8 and divisible by 4");
  if (c.epochs < 1) v.push_back("epochs must be >= 1");
  if (c.eval_every < 1) v.push_back("eval_every must be >= 1");
  return v;
}

std::vector<std::string> validate_rain_params(const RainParams& p) {
  std::vector<std::string> v;
  if (p.angle_deg < -45 || p.angle_deg > 45) v.push_back("angle_deg must be in [-45,45]");
  if (p.length_px < 1) v.push_back("length_px must be >= 1");
  if (p.density < 0 || p.density > 1) v.push_back("density must be in [0,1]");
  if (p.intensity < 0 || p.intensity > 1) v.push_back("intensity must be in [0,1]");
  if (p.intensity_jitter < 0 || p.intensity_jitter > 1)
    v.push_back("intensity_jitter must be in [0,1]");
  return v;
}

namespace {

void throw_if_any(const std::vector<std::string>& violations, const char* what) {
  if (violations.empty()) return;
  std::string msg = std::string("invalid ") + what + ":";
  for (const auto& s : violations) msg += "\n  - " + s;
  throw config_error(msg);
}

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw config_error("unknown key '" + it.key() + "' in " + where);
}

}  // namespace

void require_valid_model_config(const ModelConfig& c) {
  throw_if_any(validate_model_config(c), "model config");
}
void require_valid_train_config(const TrainConfig& c) {
  throw_if_any(validate_train_config(c), "train config");
}
void require_valid_rain_params(const RainParams& p) {
  throw_if_any(validate_rain_params(p), "rain params");
}

namespace {

json model_to_json(const ModelConfig& c) {
  return json{{"num_mheb", c.num_mheb},
              {"base_channels", c.base_channels},
              {"dcr_units_per_stream", c.dcr_units_per_stream},
              {"dcr_growth", c.growth()},
              {"attention_reduction", c.attention_reduction},
              {"fusion_mode", to_string(c.fusion_mode)},
              {"use_hadb", c.use_hadb},
              {"seed", c.seed}};
}

json train_to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"lambda", c.lambda},
              {"batch_size", c.batch_size},
              {"patch_size", c.patch_size},
              {"epochs", c.epochs},
              {"eval_every", c.eval_every},
              {"seed", c.seed},
              {"deterministic", c.deterministic},
              {"model", model_to_json(c.model)}};
}

}  // namespace

void model_from_json(const json& j, ModelConfig& c) {
  reject_unknown_keys(j,
                      {"num_mheb", "base_channels", "dcr_units_per_stream", "dcr_growth",
                       "attention_reduction", "fusion_mode", "use_hadb", "seed"},
                      "model config");
  if (j.contains("num_mheb")) c.num_mheb = j.at("num_mheb").get<int>();
  if (j.contains("base_channels")) c.base_channels = j.at("base_channels").get<int>();
  if (j.contains("dcr_units_per_stream"))
    c.dcr_units_per_stream = j.at("dcr_units_per_stream").get<int>();
  if (j.contains("dcr_growth")) c.dcr_growth = j.at("dcr_growth").get<int>();
  if (j.contains("attention_reduction"))
    c.attention_reduction = j.at("attention_reduction").get<int>();
  if (j.contains("fusion_mode"))
    c.fusion_mode = fusion_mode_from_string(j.at("fusion_mode").get<std::string>());
  if (j.contains("use_hadb")) c.use_hadb = j.at("use_hadb").get<bool>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
}

void train_from_json(const json& j, TrainConfig& c, bool allow_model) {
  std::set<std::string> known{"lr",     "beta1",      "beta2", "lambda",
                              "batch_size", "patch_size", "epochs", "eval_every",
                              "seed",   "deterministic"};
  if (allow_model) known.insert("model");
  reject_unknown_keys(j, known, "train config");
  if (j.contains("lr")) c.lr = j.at("lr").get<double>();
  if (j.contains("beta1")) c.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) c.beta2 = j.at("beta2").get<double>();
  if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("patch_size")) c.patch_size = j.at("patch_size").get<int>();
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
  if (j.contains("eval_every")) c.eval_every = j.at("eval_every").get<int>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("deterministic")) c.deterministic = j.at("deterministic").get<bool>();
  if (j.contains("model")) model_from_json(j.at("model"), c.model);
}

void rain_from_json(const json& j, RainParams& p) {
  reject_unknown_keys(
      j, {"angle_deg", "length_px", "density", "intensity", "intensity_jitter", "seed"},
      "rain params");
  if (j.contains("angle_deg")) p.angle_deg = j.at("angle_deg").get<double>();
  if (j.contains("length_px")) p.length_px = j.at("length_px").get<int>();
  if (j.contains("density")) p.density = j.at("density").get<double>();
  if (j.contains("intensity")) p.intensity = j.at("intensity").get<double>();
  if (j.contains("intensity_jitter"))
    p.intensity_jitter = j.at("intensity_jitter").get<double>();
  if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
}

namespace {

json rain_to_json(const RainParams& p) {
  return json{{"angle_deg", p.angle_deg},
              {"length_px", p.length_px},
              {"density", p.density},
              {"intensity", p.intensity},
              {"intensity_jitter", p.intensity_jitter},
              {"seed", p.seed}};
}

}  // namespace

std::string to_json_text(const TrainConfig& c, int indent) {
  return train_to_json(c).dump(indent);
}

std::string to_json_text(const ModelConfig& c, int indent) {
  return model_to_json(c).dump(indent);
}

std::string to_json_text(const RainParams& p, int indent) {
  return rain_to_json(p).dump(indent);
}

TrainConfig train_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("config is not valid JSON: ") + e.what());
  }
  TrainConfig c;
  train_from_json(j, c, /*allow_model=*/true);
  return c;
}

ModelConfig model_config_from_json_text(const std::string& text, const ModelConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("model config is not valid JSON: ") + e.what());
  }
  ModelConfig c = base;
  model_from_json(j, c);
  return c;
}

FileConfig parse_config_file_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown_keys(j, {"train", "model", "rain"}, "config file");
  FileConfig fc;
  if (j.contains("train")) train_from_json(j.at("train"), fc.train, /*allow_model=*/false);
  if (j.contains("model")) model_from_json(j.at("model"), fc.train.model);
  if (j.contains("rain")) {
    const json& r = j.at("rain");
    if (r.is_array()) {
      for (const json& item : r) {
        RainParams p;
        rain_from_json(item, p);
        fc.rain.push_back(p);
      }
    } else {
      RainParams p;
      rain_from_json(r, p);
      fc.rain.push_back(p);
    }
  }
  return fc;
}

}  // namespace mh2f
