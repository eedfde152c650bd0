#pragma once

#include <random>
#include <string>

#include "mvt/ops.hpp"

namespace mvt {

/// How attention logits are scaled before softmax.
enum class ScoreScale {
  PerHead,    // 1/√(D/M)
  FullWidth,  // 1/√D
};

template <typename Scalar>
struct LNParams {
  Var<Scalar> gamma;
  Var<Scalar> beta;
  Scalar eps = Scalar(1e-5);
};

/// Query/key/value/output projections (row-vector convention, y = xW + b).
template <typename Scalar>
struct MSAWeights {
  Var<Scalar> wq, bq, wk, bk, wv, bv, wo, bo;
  Index heads = 1;
  ScoreScale score_scale = ScoreScale::PerHead;
};

/// Two fully-connected layers around a GELU: width D → rD → D.
template <typename Scalar>
struct MLPWeights {
  Var<Scalar> w1, b1, w2, b2;
};

template <typename Scalar>
struct BlockWeights {
  LNParams<Scalar> ln1;
  MSAWeights<Scalar> msa;
  LNParams<Scalar> ln2;
  MLPWeights<Scalar> mlp;

  Index width() const { return msa.wq.rows(); }
};

struct BlockShape {
  Index width = 0;      // D
  Index heads = 1;      // M
  Index mlp_ratio = 4;  // r
};

/// Parameters of one block under `prefix` ("local.0", "global.3", ...).
/// Weights ~ truncated normal (σ = 0.02, cut at 2σ), biases and β zero, γ one.
template <typename Scalar>
void init_block_params(ParamStore<Scalar>& store, const std::string& prefix, const BlockShape& shape,
                       std::mt19937_64& rng);

/// Number of scalars `init_block_params` creates.
Index block_param_count(const BlockShape& shape);

/// Views the parameters under `prefix` as block weights. Validates every shape.
template <typename Scalar>
BlockWeights<Scalar> bind_block(const VarStore<Scalar>& vars, const std::string& prefix, Index heads, Scalar ln_eps,
                                ScoreScale score_scale = ScoreScale::PerHead);

/// Truncated normal N(0, std²) restricted to [−2·std, 2·std].
template <typename Scalar>
Tensor<Scalar> truncated_normal(Shape shape, double std, std::mt19937_64& rng);

template <typename Scalar>
Var<Scalar> ln_forward(const Var<Scalar>& x, const LNParams<Scalar>& p);

/// Multi-head self-attention. Tokens attend only within consecutive groups of
/// `segment` rows (0 means all rows form one group); `mask` further restricts
/// pairs inside a group.
template <typename Scalar>
Var<Scalar> msa_forward(const Var<Scalar>& x, const MSAWeights<Scalar>& w, const Mask* mask = nullptr,
                        Index segment = 0);

template <typename Scalar>
Var<Scalar> mlp_forward(const Var<Scalar>& x, const MLPWeights<Scalar>& w);

/// Pre-norm residual block: x ← x + MSA(LN₁(x)); x ← x + MLP(LN₂(x)).
template <typename Scalar>
Var<Scalar> block_forward(const Var<Scalar>& x, const BlockWeights<Scalar>& w, const Mask* mask = nullptr,
                          Index segment = 0);

/// Block-diagonal allow-matrix for `groups` consecutive groups of `size` tokens.
Mask block_diagonal_mask(Index groups, Index size);

}  // namespace mvt
