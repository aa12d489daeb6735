#include "organ/optim.hpp"

#include <cmath>

#include "organ/errors.hpp"

namespace organ::nn {

Adam::Adam(const ParameterSet& params, AdamConfig config) : config_(config) {
  if (!(config.learning_rate > 0.0) || config.beta1 < 0.0 || config.beta1 >= 1.0 || config.beta2 < 0.0 ||
      config.beta2 >= 1.0 || !(config.epsilon > 0.0)) {
    throw ParameterError("adam: hyperparameters out of range");
  }
  for (const auto& p : params) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

void Adam::step(ParameterSet& params) {
  if (params.size() != m_.size()) throw DimensionError("adam: parameter count changed");
  std::size_t i = 0;
  for (const auto& p : params) {
    require_same_shape(p.value, m_[i], "adam moments");
    require_same_shape(p.value, p.grad, "adam gradient");
    ++i;
  }
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  i = 0;
  for (auto& p : params) {
    double* w = p.value.ptr();
    const double* g = p.grad.ptr();
    double* m = m_[i].ptr();
    double* v = v_[i].ptr();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
    ++i;
  }
}

Tensor dropout_mask(const Shape& shape, double keep_probability, Rng& rng) {
  if (!(keep_probability > 0.0) || keep_probability > 1.0) {
    throw ParameterError("dropout keep probability must lie in (0, 1]");
  }
  Tensor mask(shape, 1.0);
  if (keep_probability == 1.0) return mask;
  const double scale = 1.0 / keep_probability;
  for (double& v : mask.data()) v = rng.uniform() < keep_probability ? scale : 0.0;
  return mask;
}

}  // namespace organ::nn
