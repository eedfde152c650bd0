#pragma once

#include <span>
#include <vector>

#include "mvt/autodiff.hpp"

namespace mvt {

using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Differentiable operations. Every function accepts operands on one tape (or
// untracked constants) and records a node when any operand requires a
// gradient. Rank-1 operands act as 1×n rows wherever a matrix is expected.
// There is no implicit broadcasting except `add_bias`.

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);

/// Elementwise (Hadamard) product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor);

/// x[N×D] + bias[D] added to every row.
template <typename Scalar>
Var<Scalar> add_bias(const Var<Scalar>& x, const Var<Scalar>& bias);

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a);

/// Concatenation of matrices along axis 0 (rows) or 1 (columns).
template <typename Scalar>
Var<Scalar> concat(std::span<const Var<Scalar>> parts, int axis);

/// `length` rows (axis 0) or columns (axis 1) starting at `start`.
template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& a, int axis, Index start, Index length);

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape);

/// Mean over axis 0 (result has `cols` entries) or axis 1 (`rows` entries).
template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a, int axis);

/// Sum of all elements, as a one-element tensor.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a);

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a);

/// Gaussian error linear unit, exact erf form.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a);

/// Per-row normalisation to zero mean / unit variance, then gamma ⊙ x̂ + beta.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps);

/// Stacks `times` copies of `a` vertically.
template <typename Scalar>
Var<Scalar> tile_rows(const Var<Scalar>& a, Index times);

/// Groups of `a_rows` rows of a and `b_rows` rows of b, alternated:
/// [a₀; b₀; a₁; b₁; ...]. Both operands must hold the same number of groups.
template <typename Scalar>
Var<Scalar> interleave_rows(const Var<Scalar>& a, Index a_rows, const Var<Scalar>& b, Index b_rows);

template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& a, std::span<const Index> rows);

/// Mean of each consecutive block of `segment` rows.
template <typename Scalar>
Var<Scalar> segment_mean(const Var<Scalar>& a, Index segment);

/// Mean over the batch of −log softmax(logits)[label].
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> labels);

/// Multi-head scaled dot-product attention over projected q, k, v (each N×D).
///
/// Rows are split into independent segments of `segment` tokens: a token only
/// attends within its own segment, which is exactly a block-diagonal mask
/// without materialising it. Columns are split into `heads` equal slices.
/// When `mask` is given it is segment×segment and true marks an allowed
/// (query, key) pair; disallowed scores are lowered to −1e30 before softmax.
/// A query row with no allowed key is a contract error.
template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, Index heads,
                      Index segment, const Mask* mask, Scalar score_scale);

}  // namespace mvt
