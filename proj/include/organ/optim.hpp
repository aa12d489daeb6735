#pragma once

#include <vector>

#include "organ/params.hpp"
#include "organ/rng.hpp"
#include "organ/tensor.hpp"

namespace organ::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over every parameter of one ParameterSet.
class Adam {
 public:
  Adam(const ParameterSet& params, AdamConfig config);

  /// One descent step using the accumulated gradients.
  void step(ParameterSet& params);

  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::size_t step_count() const { return step_count_; }
  void set_step_count(std::size_t n) { step_count_ = n; }

  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::size_t step_count_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

/// Inverted-dropout mask: each entry is 1/keep with probability keep, else 0.
Tensor dropout_mask(const Shape& shape, double keep_probability, Rng& rng);

}  // namespace organ::nn
