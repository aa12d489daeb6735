#include "organ/params.hpp"

#include <algorithm>
#include <cmath>

#include "organ/errors.hpp"

namespace organ::nn {

Parameter& ParameterSet::add(std::string name, Shape shape, bool is_matrix) {
  if (contains(name)) throw UsageError("duplicate parameter name '" + name + "'");
  Parameter p;
  p.name = std::move(name);
  p.value = Tensor(shape);
  p.grad = Tensor(std::move(shape));
  p.is_matrix = is_matrix;
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter& ParameterSet::at(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw UsageError("no parameter named '" + name + "'");
}

const Parameter& ParameterSet::at(const std::string& name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

void ParameterSet::init_uniform(Rng& rng, double scale) {
  for (auto& p : params_) {
    for (double& v : p.value.data()) v = (2.0 * rng.uniform() - 1.0) * scale;
  }
}

void ParameterSet::clamp(double bound) {
  for (auto& p : params_) {
    for (double& v : p.value.data()) v = std::clamp(v, -bound, bound);
  }
}

double ParameterSet::max_abs() const {
  double m = 0.0;
  for (const auto& p : params_) m = std::max(m, p.value.max_abs());
  return m;
}

}  // namespace organ::nn
