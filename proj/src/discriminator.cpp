#include "organ/discriminator.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>

#include "organ/errors.hpp"

namespace organ {

using nn::Tensor;
using nn::Var;

namespace {

constexpr std::size_t kScoreChunk = 256;

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

CriticMode parse_critic_mode(const std::string& name) {
  if (name == "gan") return CriticMode::Classifier;
  if (name == "wgan") return CriticMode::Wasserstein;
  throw ConfigError("unknown critic mode '" + name + "' (expected gan or wgan)");
}

std::string critic_mode_name(CriticMode mode) { return mode == CriticMode::Classifier ? "gan" : "wgan"; }

CriticNet::CriticNet(const CriticConfig& config, Rng& init_rng) : config_(config) {
  if (config.vocab_size == 0 || config.seq_len == 0 || config.embed_dim == 0 || config.filters_per_width == 0 ||
      config.max_width == 0) {
    throw ParameterError("critic dimensions must be positive");
  }
  if (!(config.keep_probability > 0.0) || config.keep_probability > 1.0) {
    throw ParameterError("critic keep probability must lie in (0, 1]");
  }
  if (config.l2_coefficient < 0.0) throw ParameterError("critic L2 coefficient must be non-negative");
  if (!(config.clip > 0.0)) throw ParameterError("critic clip bound must be positive");
  const std::size_t e = config.embed_dim, nf = config.filters_per_width;
  params_.add("embedding", {config.vocab_size, e}, false);
  for (std::size_t w = 1; w <= std::min(config.max_width, config.seq_len); ++w) {
    widths_.push_back(w);
    params_.add("conv" + std::to_string(w) + ".weight", {nf, w * e}, true);
    params_.add("conv" + std::to_string(w) + ".bias", {nf}, false);
  }
  const std::size_t d = nf * widths_.size();
  params_.add("highway.transform.weight", {d, d}, true);
  params_.add("highway.transform.bias", {d}, false);
  params_.add("highway.gate.weight", {d, d}, true);
  params_.add("highway.gate.bias", {d}, false);
  params_.add("head.weight", {1, d}, true);
  params_.add("head.bias", {1}, false);
  params_.init_uniform(init_rng, config.init_scale);
  if (config.mode == CriticMode::Wasserstein) params_.clamp(config.clip);
}

void CriticNet::check_batch(const Batch& batch) const {
  for (const auto& seq : batch) {
    if (seq.size() != config_.seq_len) {
      throw DimensionError("critic expects sequences of length " + std::to_string(config_.seq_len) + ", got " +
                           std::to_string(seq.size()));
    }
    for (int t : seq) {
      if (t < 0 || t >= static_cast<int>(config_.vocab_size)) throw EncodingError("critic input token out of range");
    }
  }
}

Var CriticNet::forward(nn::Tape& tape, const Batch& batch, Rng* dropout_rng) {
  check_batch(batch);
  if (batch.empty()) throw ParameterError("critic: empty batch");
  const std::size_t b = batch.size(), t_len = config_.seq_len, e = config_.embed_dim;
  std::vector<int> ids;
  ids.reserve(b * t_len);
  for (const auto& s : batch) ids.insert(ids.end(), s.begin(), s.end());
  Var emb = tape.reshape(tape.embedding(params_.at("embedding"), ids), {b, t_len * e});
  std::vector<Var> pooled;
  for (std::size_t w : widths_) {
    const std::string tag = "conv" + std::to_string(w);
    pooled.push_back(tape.conv_maxpool(emb, t_len, params_.at(tag + ".weight"), params_.at(tag + ".bias"), w,
                                       nn::Activation::Relu));
  }
  Var features = tape.concat_cols(pooled);
  Var gate = tape.sigmoid(tape.affine(features, params_.at("highway.gate.weight"), &params_.at("highway.gate.bias")));
  Var transform = tape.relu(
      tape.affine(features, params_.at("highway.transform.weight"), &params_.at("highway.transform.bias")));
  Var hidden = tape.add(features, tape.mul(gate, tape.sub(transform, features)));
  if (dropout_rng) hidden = tape.mask(hidden, nn::dropout_mask(tape.value(hidden).shape(), config_.keep_probability,
                                                                  *dropout_rng));
  return tape.affine(hidden, params_.at("head.weight"), &params_.at("head.bias"));
}

std::vector<double> CriticNet::score(const Batch& batch) {
  check_batch(batch);
  std::vector<double> out;
  out.reserve(batch.size());
  for (std::size_t start = 0; start < batch.size(); start += kScoreChunk) {
    const std::size_t end = std::min(batch.size(), start + kScoreChunk);
    Batch chunk(batch.begin() + static_cast<long>(start), batch.begin() + static_cast<long>(end));
    nn::Tape tape;
    const Tensor& values = tape.value(forward(tape, chunk, nullptr));
    for (double v : values.data()) {
      if (config_.mode == CriticMode::Classifier) {
        out.push_back(std::clamp(logistic(v), DBL_MIN, std::nextafter(1.0, 0.0)));
      } else {
        out.push_back(v);
      }
    }
  }
  return out;
}

double CriticNet::reward_from_score(CriticMode mode, double score) {
  return mode == CriticMode::Classifier ? score : logistic(score);
}

std::vector<double> CriticNet::reward(const Batch& batch) {
  auto s = score(batch);
  for (double& v : s) v = reward_from_score(config_.mode, v);
  return s;
}

Var CriticNet::classifier_loss(nn::Tape& tape, const Batch& real, const Batch& fake, Rng* dropout_rng) {
  Batch both = real;
  both.insert(both.end(), fake.begin(), fake.end());
  std::vector<double> labels(both.size(), 0.0);
  std::vector<double> weights(both.size());
  for (std::size_t i = 0; i < both.size(); ++i) {
    const bool is_real = i < real.size();
    labels[i] = is_real ? 1.0 : 0.0;
    weights[i] = 1.0 / static_cast<double>(is_real ? real.size() : fake.size());
  }
  Var bce = tape.bce_logits(forward(tape, both, dropout_rng), labels, weights);
  std::vector<nn::Parameter*> matrices;
  for (auto& p : params_) {
    if (p.is_matrix) matrices.push_back(&p);
  }
  return tape.add(bce, tape.l2_penalty(matrices, config_.l2_coefficient));
}

double CriticNet::train_step_classifier(const Batch& real, const Batch& fake, nn::Adam& opt, Rng& dropout_rng) {
  if (real.empty() || fake.empty()) throw ParameterError("train_step_classifier: empty batch");
  params_.zero_grad();
  nn::Tape tape;
  Var loss = classifier_loss(tape, real, fake, &dropout_rng);
  const double value = tape.value(loss)[0];
  tape.backward(loss);
  opt.step(params_);
  return value;
}

double CriticNet::train_step_wasserstein(const Batch& real, const Batch& fake, nn::Adam& opt, double clip) {
  if (!(clip > 0.0)) throw ParameterError("train_step_wasserstein: clip bound must be positive");
  if (real.empty() || fake.empty()) throw ParameterError("train_step_wasserstein: empty batch");
  Batch both = real;
  both.insert(both.end(), fake.begin(), fake.end());
  std::vector<double> weights(both.size());
  for (std::size_t i = 0; i < both.size(); ++i) {
    // minimizing -(mean real - mean fake)
    weights[i] = i < real.size() ? -1.0 / static_cast<double>(real.size()) : 1.0 / static_cast<double>(fake.size());
  }
  params_.zero_grad();
  nn::Tape tape;
  Var loss = tape.weighted_sum(forward(tape, both, nullptr), weights);
  const double objective = -tape.value(loss)[0];
  tape.backward(loss);
  opt.step(params_);
  params_.clamp(clip);
  return objective;
}

}  // namespace organ
