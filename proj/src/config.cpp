#include "mvt/config.hpp"

#include <sstream>

namespace mvt {

std::string to_string(DType d) { return d == DType::F32 ? "f32" : "f64"; }
std::string to_string(Pooling p) { return p == Pooling::ClassToken ? "class_token" : "avg_pool"; }
std::string to_string(ScoreScale s) { return s == ScoreScale::PerHead ? "per_head" : "full_width"; }

DType parse_dtype(const std::string& s) {
  if (s == "f32" || s == "fp32" || s == "float") return DType::F32;
  if (s == "f64" || s == "fp64" || s == "double") return DType::F64;
  throw ConfigError("unknown dtype '" + s + "' (expected f32 or f64)");
}

Pooling parse_pooling(const std::string& s) {
  if (s == "class_token" || s == "cls") return Pooling::ClassToken;
  if (s == "avg_pool" || s == "avg") return Pooling::AveragePatch;
  throw ConfigError("unknown pooling '" + s + "' (expected class_token or avg_pool)");
}

ScoreScale parse_score_scale(const std::string& s) {
  if (s == "per_head") return ScoreScale::PerHead;
  if (s == "full_width") return ScoreScale::FullWidth;
  throw ConfigError("unknown score scale '" + s + "' (expected per_head or full_width)");
}

double MVTConfig::effective_ln_eps() const {
  if (ln_eps > 0) return ln_eps;
  return dtype == DType::F32 ? 1e-5 : 1e-12;
}

void MVTConfig::validate() const {
  auto positive = [](Index v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1, got " + std::to_string(v));
  };
  positive(views, "views");
  positive(height, "height");
  positive(width, "width");
  positive(channels, "channels");
  positive(patch, "patch");
  positive(hidden, "hidden");
  positive(heads, "heads");
  positive(classes, "classes");
  if (local_blocks < 0 || global_blocks < 0) throw ConfigError("block counts must be non-negative");
  if (height % patch != 0 || width % patch != 0) {
    throw ConfigError("view size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
  if (hidden % heads != 0) {
    throw ConfigError("hidden width " + std::to_string(hidden) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (mlp_ratio < 2) throw ConfigError("mlp expansion ratio must be an integer > 1");
  if (ln_eps < 0) throw ConfigError("ln_eps must be non-negative");
}

MVTConfig MVTConfig::tiny() {
  MVTConfig c;
  c.hidden = 192;
  c.heads = 3;
  c.local_blocks = 8;
  c.global_blocks = 4;
  return c;
}

MVTConfig MVTConfig::small() {
  MVTConfig c;
  c.hidden = 384;
  c.heads = 6;
  c.local_blocks = 8;
  c.global_blocks = 4;
  return c;
}

MVTConfig MVTConfig::micro() {
  MVTConfig c;
  c.views = 2;
  c.height = 4;
  c.width = 4;
  c.channels = 1;
  c.patch = 2;
  c.hidden = 8;
  c.heads = 2;
  c.local_blocks = 1;
  c.global_blocks = 1;
  c.classes = 3;
  c.dtype = DType::F64;
  return c;
}

MVTConfig MVTConfig::desk() { return MVTConfig{}; }

MVTConfig MVTConfig::preset(const std::string& name) {
  if (name == "tiny") return tiny();
  if (name == "small") return small();
  if (name == "micro") return micro();
  if (name == "desk") return desk();
  throw ConfigError("unknown preset '" + name + "' (expected tiny, small, micro or desk)");
}

void to_json(nlohmann::json& j, const MVTConfig& c) {
  j = nlohmann::json{{"views", c.views},
                     {"height", c.height},
                     {"width", c.width},
                     {"channels", c.channels},
                     {"patch", c.patch},
                     {"hidden", c.hidden},
                     {"heads", c.heads},
                     {"local_blocks", c.local_blocks},
                     {"global_blocks", c.global_blocks},
                     {"classes", c.classes},
                     {"mlp_ratio", c.mlp_ratio},
                     {"dtype", to_string(c.dtype)},
                     {"pooling", to_string(c.pooling)},
                     {"score_scale", to_string(c.score_scale)},
                     {"shared_class_token", c.shared_class_token},
                     {"mlp_head", c.mlp_head},
                     {"ln_eps", c.ln_eps}};
}

void from_json(const nlohmann::json& j, MVTConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("views", c.views);
  get("height", c.height);
  get("width", c.width);
  get("channels", c.channels);
  get("patch", c.patch);
  get("hidden", c.hidden);
  get("heads", c.heads);
  get("local_blocks", c.local_blocks);
  get("global_blocks", c.global_blocks);
  get("classes", c.classes);
  get("mlp_ratio", c.mlp_ratio);
  if (j.contains("dtype")) c.dtype = parse_dtype(j.at("dtype").get<std::string>());
  if (j.contains("pooling")) c.pooling = parse_pooling(j.at("pooling").get<std::string>());
  if (j.contains("score_scale")) c.score_scale = parse_score_scale(j.at("score_scale").get<std::string>());
  get("shared_class_token", c.shared_class_token);
  get("mlp_head", c.mlp_head);
  get("ln_eps", c.ln_eps);
}

Index mvt_param_count(const MVTConfig& c) {
  const Index d = c.hidden;
  const Index embed = d * c.patch_dim() + c.tokens_per_view() * d + (c.shared_class_token ? d : c.views * d);
  const Index blocks = (c.local_blocks + c.global_blocks) * block_param_count(c.block_shape());
  const Index head = (c.mlp_head ? d * d + d : 0) + c.classes * d + c.classes;
  return embed + blocks + head;
}

std::string geometry_string(const MVTConfig& c) {
  std::ostringstream os;
  os << "views=" << c.views << " height=" << c.height << " width=" << c.width << " channels=" << c.channels;
  return os.str();
}

}  // namespace mvt
