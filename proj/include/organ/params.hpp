#pragma once

#include <deque>
#include <string>
#include <vector>

#include "organ/rng.hpp"
#include "organ/tensor.hpp"

namespace organ::nn {

/// A trainable array with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  /// Weight matrices get L2 and clipping treatment; biases and tables do not.
  bool is_matrix = false;
};

/// Named parameters with stable addresses, in registration order.
class ParameterSet {
 public:
  Parameter& add(std::string name, Shape shape, bool is_matrix);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  /// Every entry drawn uniformly from [-scale, scale].
  void init_uniform(Rng& rng, double scale);
  void clamp(double bound);
  double max_abs() const;

 private:
  std::deque<Parameter> params_;
};

}  // namespace organ::nn
