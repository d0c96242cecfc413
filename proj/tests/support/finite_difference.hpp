#pragma once
// Central finite differences against tape gradients, double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "textdeform/autodiff.hpp"

namespace oracle {

using ScalarFn = std::function<textdeform::ad::Var<double>(textdeform::ad::Tape<double>&,
                                                           const std::vector<textdeform::ad::Var<double>>&)>;

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// per input tensor.
inline std::vector<double> gradient_errors(const ScalarFn& f, const std::vector<textdeform::ad::Tensor<double>>& inputs,
                                           double h = 1e-6) {
  using namespace textdeform::ad;
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    Var<double> out = f(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }
  auto eval = [&](const std::vector<Tensor<double>>& in) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : in) vars.push_back(tape.constant(t));
    return f(tape, vars).value()[0];
  };
  std::vector<double> errors;
  std::vector<Tensor<double>> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double x0 = work[i][k];
      work[i][k] = x0 + h;
      const double fp = eval(work);
      work[i][k] = x0 - h;
      const double fm = eval(work);
      work[i][k] = x0;
      const double num = (fp - fm) / (2 * h);
      const double a = analytic[i][k];
      diff += (a - num) * (a - num);
      na += a * a;
      nn += num * num;
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    errors.push_back(std::sqrt(diff) / scale);
  }
  return errors;
}

inline double max_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
}

}  // namespace oracle
