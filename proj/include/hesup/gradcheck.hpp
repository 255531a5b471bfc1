#pragma once

#include <cmath>
#include <functional>

#include "hesup/tensor.hpp"

namespace hesup {

struct GradcheckResult {
  double max_rel_error = 0.0;
  size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central-difference check of a scalar-valued function against the tape
// gradient, in 64-bit precision. `f` must rebuild its computation from the
// current contents of `x` on every call; `h` is a relative step.
inline GradcheckResult gradcheck(const std::function<Tensor<double>(Tape<double>&)>& f,
                                 Tensor<double> x, double h = 1e-4) {
  x.zero_grad();
  Tape<double> tape;
  Tensor<double> loss = f(tape);
  backward(loss, tape);
  std::vector<double> analytic(x.grad().begin(), x.grad().end());

  Tape<double> silent(false);
  GradcheckResult res;
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    const double eps = h * std::max(1.0, std::abs(saved));
    x.data()[i] = saved + eps;
    const double fp = f(silent).item();
    x.data()[i] = saved - eps;
    const double fm = f(silent).item();
    x.data()[i] = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_index = i;
      res.analytic = a;
      res.numeric = numeric;
    }
  }
  return res;
}

}  // namespace hesup
