#pragma once

#include <functional>
#include <string>

#include "mvt/autodiff.hpp"

namespace mvt {

/// Scalar objective built on a tape from bound parameters.
template <typename Scalar>
using LossFn = std::function<Var<Scalar>(Tape<Scalar>&, const VarStore<Scalar>&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double grad_norm = 0.0;  // L2 norm of the tape gradient
  std::string worst_param;
  Index worst_index = -1;
  Index coordinates = 0;
  bool passed = true;
};

/// Compares the tape gradient of `f` with central differences
/// (f(θ+h·e) − f(θ−h·e)) / 2h for every coordinate of every parameter.
///
/// Relative error per coordinate is |g − n| / max(|g|, |n|, floor); the floor
/// keeps coordinates whose true gradient is ~0 from reporting pure noise.
template <typename Scalar>
GradCheckReport finite_diff_check(const LossFn<Scalar>& f, const ParamStore<Scalar>& params, double step, double tol,
                                  double floor = 1e-6);

/// Evaluates `f` once without recording gradients.
template <typename Scalar>
Scalar evaluate_loss(const LossFn<Scalar>& f, const ParamStore<Scalar>& params);

/// Value and tape gradient of `f` at `params`.
template <typename Scalar>
std::pair<Scalar, ParamStore<Scalar>> loss_and_grad(const LossFn<Scalar>& f, const ParamStore<Scalar>& params);

}  // namespace mvt
