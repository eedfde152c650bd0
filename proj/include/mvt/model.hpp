#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mvt/config.hpp"

namespace mvt {

/// Patch projection, shared position table and class token(s).
template <typename Scalar>
struct EmbedWeights {
  Var<Scalar> w0;   // D × Cp²
  Var<Scalar> pos;  // (wh+1) × D, row 0 belongs to the class token
  Var<Scalar> cls;  // D (shared) or L × D (per view slot)
};

template <typename Scalar>
struct ModelWeights {
  EmbedWeights<Scalar> embed;
  std::vector<BlockWeights<Scalar>> local;
  std::vector<BlockWeights<Scalar>> global;
  Var<Scalar> head_hidden_w, head_hidden_b;  // only with mlp_head
  Var<Scalar> head_w;  // K × D
  Var<Scalar> head_b;  // K
};

/// Configuration plus the canonical parameter store.
template <typename Scalar>
class MVTModel {
 public:
  /// Fresh model, parameters drawn from `seed`.
  MVTModel(MVTConfig config, std::uint64_t seed);
  /// Wraps existing parameters; names and shapes are validated against `config`.
  MVTModel(MVTConfig config, ParamStore<Scalar> params);

  const MVTConfig& config() const { return config_; }
  const ParamStore<Scalar>& params() const { return params_; }
  ParamStore<Scalar>& params() { return params_; }
  Index parameter_count() const { return mvt::parameter_count(params_); }

 private:
  MVTConfig config_;
  ParamStore<Scalar> params_;
};

/// Initial parameters for `config` (truncated normal σ = 0.02 for matrices and
/// embeddings, zero biases and β, unit γ).
template <typename Scalar>
ParamStore<Scalar> init_params(const MVTConfig& config, std::uint64_t seed);

template <typename Scalar>
ModelWeights<Scalar> bind_model(const VarStore<Scalar>& vars, const MVTConfig& config);

/// Unfolds an H×W×C view into non-overlapping p×p patches: row i is patch i in
/// row-major grid order, each unfolded in (row, col, channel) order.
template <typename Scalar>
Tensor<Scalar> patchify(const Tensor<Scalar>& view, Index patch);

/// Patches of many views stacked view after view: (V·wh) × Cp².
template <typename Scalar>
Tensor<Scalar> stack_patches(std::span<const Tensor<Scalar>> views, Index patch);

/// Token matrices of V views stacked vertically, (V·(wh+1)) × D. Each view's
/// block is [cls + pos₀; W₀·p₁ + pos₁; …]. `views_per_object` selects the
/// class-token row when class tokens are per view slot.
template <typename Scalar>
Var<Scalar> embed_patches(const Tensor<Scalar>& patches, Index views, const EmbedWeights<Scalar>& w,
                          const MVTConfig& config);

/// Token matrix Zʲ of a single view, (wh+1) × D.
template <typename Scalar>
Var<Scalar> embed_view(const Tensor<Scalar>& view, const EmbedWeights<Scalar>& w, const MVTConfig& config);

/// Runs each view's tokens through the shared local blocks; no cross-view mixing.
template <typename Scalar>
std::vector<Var<Scalar>> local_encode(std::span<const Var<Scalar>> views, std::span<const BlockWeights<Scalar>> blocks);

/// Same as `local_encode` on views already stacked in groups of `tokens_per_view` rows.
template <typename Scalar>
Var<Scalar> local_encode_stacked(const Var<Scalar>& stacked, std::span<const BlockWeights<Scalar>> blocks,
                                 Index tokens_per_view);

/// View-major vertical concatenation of per-view token matrices.
template <typename Scalar>
Var<Scalar> concat_views(std::span<const Var<Scalar>> views);

/// Inverse of `concat_views` for `views` equal blocks.
template <typename Scalar>
std::vector<Var<Scalar>> split_views(const Var<Scalar>& stacked, Index views);

/// Global blocks over the full token set. `segment` = 0 treats all rows as one
/// object; the optional mask restricts attention within each segment.
template <typename Scalar>
Var<Scalar> global_encode(const Var<Scalar>& tokens, std::span<const BlockWeights<Scalar>> blocks,
                          const Mask* mask = nullptr, Index segment = 0);

/// Pools each object's tokens and applies the classifier head. `tokens` holds
/// B objects of L·(wh+1) rows; the result is B × K logits.
template <typename Scalar>
Var<Scalar> pool_and_classify(const Var<Scalar>& tokens, const ModelWeights<Scalar>& w, const MVTConfig& config);

/// Logits for a batch whose patches were stacked object by object, view by view.
template <typename Scalar>
Var<Scalar> forward_patches(const ModelWeights<Scalar>& w, const MVTConfig& config, const Tensor<Scalar>& patches,
                            Index batch);

/// Logits (1 × K) for one object given its L views.
template <typename Scalar>
Var<Scalar> forward(const ModelWeights<Scalar>& w, const MVTConfig& config, std::span<const Tensor<Scalar>> views);

/// Untracked convenience: logits for one object.
template <typename Scalar>
Vector<Scalar> predict(const MVTModel<Scalar>& model, std::span<const Tensor<Scalar>> views);

}  // namespace mvt
