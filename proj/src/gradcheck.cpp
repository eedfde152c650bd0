#include "mvt/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mvt {

template <typename Scalar>
Scalar evaluate_loss(const LossFn<Scalar>& f, const ParamStore<Scalar>& params) {
  Tape<Scalar> tape;
  const auto vars = bind_params(tape, params, false);
  const Var<Scalar> loss = f(tape, vars);
  if (loss.value().size() != 1) throw ContractError("objective must return a scalar");
  const Scalar value = loss.value()[0];
  if (!std::isfinite(value)) throw NumericError("objective returned a non-finite value");
  return value;
}

template <typename Scalar>
std::pair<Scalar, ParamStore<Scalar>> loss_and_grad(const LossFn<Scalar>& f, const ParamStore<Scalar>& params) {
  Tape<Scalar> tape;
  const auto vars = bind_params(tape, params, true);
  const Var<Scalar> loss = f(tape, vars);
  tape.backward(loss);
  const Scalar value = loss.value()[0];
  if (!std::isfinite(value)) throw NumericError("objective returned a non-finite value");
  return {value, collect_grads(vars)};
}

template <typename Scalar>
GradCheckReport finite_diff_check(const LossFn<Scalar>& f, const ParamStore<Scalar>& params, double step, double tol,
                                  double floor) {
  const auto [value, grads] = loss_and_grad(f, params);
  GradCheckReport report;
  double norm2 = 0.0;
  ParamStore<Scalar> probe = params;
  for (auto& [name, tensor] : probe) {
    const Tensor<Scalar>& g = grads.at(name);
    for (Index i = 0; i < tensor.size(); ++i) {
      const Scalar original = tensor[i];
      tensor[i] = original + static_cast<Scalar>(step);
      const double plus = evaluate_loss(f, probe);
      tensor[i] = original - static_cast<Scalar>(step);
      const double minus = evaluate_loss(f, probe);
      tensor[i] = original;

      const double numeric = (plus - minus) / (2.0 * step);
      const double analytic = g[i];
      const double abs_err = std::abs(analytic - numeric);
      const double rel_err = abs_err / std::max({std::abs(analytic), std::abs(numeric), floor});
      norm2 += analytic * analytic;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = rel_err;
        report.worst_param = name;
        report.worst_index = i;
      }
      ++report.coordinates;
    }
  }
  report.grad_norm = std::sqrt(norm2);
  report.passed = report.max_rel_error < tol;
  return report;
}

template float evaluate_loss(const LossFn<float>&, const ParamStore<float>&);
template double evaluate_loss(const LossFn<double>&, const ParamStore<double>&);
template std::pair<float, ParamStore<float>> loss_and_grad(const LossFn<float>&, const ParamStore<float>&);
template std::pair<double, ParamStore<double>> loss_and_grad(const LossFn<double>&, const ParamStore<double>&);
template GradCheckReport finite_diff_check(const LossFn<float>&, const ParamStore<float>&, double, double, double);
template GradCheckReport finite_diff_check(const LossFn<double>&, const ParamStore<double>&, double, double, double);

}  // namespace mvt
