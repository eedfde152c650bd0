#pragma once

#include <string>

#include "mvt/blocks.hpp"
#include "json.hpp"

namespace mvt {

enum class DType { F32, F64 };

/// Which tokens of the final global output feed the classifier.
enum class Pooling {
  ClassToken,    // mean of the L attended class tokens
  AveragePatch,  // mean of every attended patch token, class tokens excluded
};

std::string to_string(DType d);
std::string to_string(Pooling p);
std::string to_string(ScoreScale s);
DType parse_dtype(const std::string& s);
Pooling parse_pooling(const std::string& s);
ScoreScale parse_score_scale(const std::string& s);

/// Geometry and architecture of a multi-view transformer.
struct MVTConfig {
  Index views = 6;      // L
  Index height = 32;    // H (image rows)
  Index width = 32;     // W (image columns)
  Index channels = 1;   // C
  Index patch = 8;      // p
  Index hidden = 64;    // D
  Index heads = 4;      // M
  Index local_blocks = 2;   // S
  Index global_blocks = 1;  // T
  Index classes = 6;    // K
  Index mlp_ratio = 4;  // r
  DType dtype = DType::F32;
  Pooling pooling = Pooling::ClassToken;
  ScoreScale score_scale = ScoreScale::PerHead;
  bool shared_class_token = true;  // false: one learnable class token per view slot
  bool mlp_head = false;           // false: single affine classifier; true: D→D GELU then affine
  double ln_eps = 0.0;             // 0 selects 1e-5 (f32) or 1e-12 (f64)

  Index grid_rows() const { return height / patch; }
  Index grid_cols() const { return width / patch; }
  Index patches_per_view() const { return grid_rows() * grid_cols(); }
  Index tokens_per_view() const { return patches_per_view() + 1; }
  Index patch_dim() const { return channels * patch * patch; }
  double effective_ln_eps() const;
  BlockShape block_shape() const { return {hidden, heads, mlp_ratio}; }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  /// Hidden width / heads / local / global blocks from the reference table,
  /// on the default desk geometry (6 views of 32×32×1, p = 8, 6 classes).
  static MVTConfig tiny();
  static MVTConfig small();
  /// Smallest configuration that exercises every stage; used for gradient checks.
  static MVTConfig micro();
  /// Desk-scale model for end-to-end training: D = 64, M = 4, S = 2, T = 1.
  static MVTConfig desk();
  static MVTConfig preset(const std::string& name);

  bool operator==(const MVTConfig&) const = default;
};

void to_json(nlohmann::json& j, const MVTConfig& c);
void from_json(const nlohmann::json& j, MVTConfig& c);

/// Closed-form number of learnable scalars for `c`.
Index mvt_param_count(const MVTConfig& c);

/// Human-readable geometry summary, used in mismatch diagnostics.
std::string geometry_string(const MVTConfig& c);

}  // namespace mvt
