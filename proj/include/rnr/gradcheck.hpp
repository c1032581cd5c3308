#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rnr/tensor.hpp"

namespace rnr {

// Central-difference gradient verification. Run in 64-bit mode: float
// round-off swamps the O(eps^2) truncation error.
struct GradCheckResult {
  bool pass = true;
  double max_rel_err = 0.0;
  int worst_input = -1;
  std::size_t worst_coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;

  std::string summary() const {
    std::ostringstream os;
    os << (pass ? "pass" : "FAIL") << " max_rel_err=" << max_rel_err;
    if (worst_input >= 0)
      os << " at input " << worst_input << " coord " << worst_coord << " analytic=" << analytic
         << " numeric=" << numeric;
    return os.str();
  }
};

// f must evaluate a scalar from the given inputs, using rnr ops throughout.
// Failure is reported, never thrown.
inline GradCheckResult grad_check(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
    std::vector<Tensor<double>> inputs, double eps = 1e-4, double tol = 1e-4) {
  for (auto& t : inputs) t.set_requires_grad(true);

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> loss = f(inputs);
    tape.backward(loss);
    for (const auto& t : inputs) analytic.push_back(tape.grad_of(t));
  }

  GradCheckResult res;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<double>& t = inputs[ti];
    for (std::size_t c = 0; c < t.size(); ++c) {
      const double orig = t.data()[c];
      t.data()[c] = orig + eps;
      const double fp = f(inputs).item();
      t.data()[c] = orig - eps;
      const double fm = f(inputs).item();
      t.data()[c] = orig;
      const double num = (fp - fm) / (2.0 * eps);
      const double ana = analytic[ti][c];
      const double denom = std::max({1.0, std::abs(ana), std::abs(num)});
      const double rel = std::abs(ana - num) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_input = static_cast<int>(ti);
        res.worst_coord = c;
        res.analytic = ana;
        res.numeric = num;
      }
    }
  }
  res.pass = res.max_rel_err <= tol;
  return res;
}

}  // namespace rnr
