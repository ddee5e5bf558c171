#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "disiv/autodiff.hpp"

namespace disiv {

/// Maps bound inputs to a scalar on the given tape.
using Fragment = std::function<Var(Tape&, std::span<const Var>)>;

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  /// stop_gradient nodes whose upstream path was frozen during differencing.
  std::size_t exempt_paths = 0;
};

/// Denominator floor of the relative error; below it the comparison is
/// effectively absolute.
inline constexpr double kGradcheckFloor = 1e-4;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), kGradcheckFloor});
}

/// Compares backward() gradients with central differences of step `h` for
/// every coordinate of every input. Values flowing through stop_gradient are
/// replayed from the unperturbed evaluation, so the differences see the same
/// function the analytic gradient describes.
inline GradcheckResult gradcheck(const Fragment& fragment, std::vector<Tensor> inputs,
                                 double h = 1e-5) {
  if (!(h > 0.0)) throw ContractError("gradcheck: h must be positive");

  std::vector<Tensor> analytic;
  std::vector<Tensor> frozen;
  GradcheckResult result;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.leaf(x));
    Var out = fragment(tape, vars);
    if (out.value().size() != 1) throw ContractError("gradcheck: fragment output is not scalar");
    tape.backward(out);
    analytic = gradients(tape, vars);
    frozen = tape.stopped_values();
    result.exempt_paths = frozen.size();
  }

  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    tape.set_stop_replay(&frozen);
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return fragment(tape, vars).value().item();
  };

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      inputs[k][i] = x0 + h;
      const double fp = evaluate(inputs);
      inputs[k][i] = x0 - h;
      const double fm = evaluate(inputs);
      inputs[k][i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[k][i], numeric));
      ++result.coordinates;
    }
  }
  return result;
}

}  // namespace disiv
