#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "organ/params.hpp"
#include "organ/tape.hpp"

namespace organ::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares tape gradients against central differences for every parameter
/// entry. Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
/// entries whose true gradient is ~0 from dividing rounding noise by zero.
inline GradCheck check_gradients(nn::ParameterSet& params, const std::function<nn::Var(nn::Tape&)>& build,
                                 double step = 1e-5, double floor = 1e-3) {
  params.zero_grad();
  {
    nn::Tape tape;
    tape.backward(build(tape));
  }
  auto eval = [&] {
    nn::Tape tape;
    return tape.value(build(tape))[0];
  };
  GradCheck out;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + step;
      const double up = eval();
      p.value[i] = saved - step;
      const double down = eval();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p.grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace organ::testing
