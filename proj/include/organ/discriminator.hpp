#pragma once

#include <span>
#include <string>
#include <vector>

#include "organ/optim.hpp"
#include "organ/params.hpp"
#include "organ/rng.hpp"
#include "organ/tape.hpp"
#include "organ/vocab.hpp"

namespace organ {

enum class CriticMode { Classifier, Wasserstein };

CriticMode parse_critic_mode(const std::string& name);  // "gan" or "wgan"
std::string critic_mode_name(CriticMode mode);

struct CriticConfig {
  std::size_t vocab_size = 0;  // including the pad token
  std::size_t seq_len = 0;
  std::size_t embed_dim = 16;
  std::size_t filters_per_width = 10;
  std::size_t max_width = 15;
  double keep_probability = 0.25;
  double l2_coefficient = 1e-4;
  double clip = 0.01;
  double init_scale = 0.1;
  CriticMode mode = CriticMode::Classifier;
};

/// Text-classification CNN: embedding, one bank of filters per width
/// 1..min(max_width, seq_len) with max-over-time pooling, a highway layer,
/// dropout (classifier training only) and a scalar head.
class CriticNet {
 public:
  CriticNet(const CriticConfig& config, Rng& init_rng);

  const CriticConfig& config() const { return config_; }
  CriticMode mode() const { return config_.mode; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  std::vector<std::size_t> widths() const { return widths_; }

  /// Classifier: probability of "real" in (0,1). Wasserstein: raw critic value.
  std::vector<double> score(const Batch& batch);
  /// Scores mapped to [0,1]: identity for the classifier, logistic for the critic.
  std::vector<double> reward(const Batch& batch);
  static double reward_from_score(CriticMode mode, double score);

  /// One Adam step on the binary cross-entropy (plus L2) of real vs fake;
  /// returns the loss before the update.
  double train_step_classifier(const Batch& real, const Batch& fake, nn::Adam& opt, Rng& dropout_rng);
  /// One Adam ascent step on mean(real) - mean(fake), then clamps every
  /// parameter to [-clip, clip]; returns the objective before the update.
  double train_step_wasserstein(const Batch& real, const Batch& fake, nn::Adam& opt, double clip);

  /// Logits (classifier) or critic values, shape [B, 1], optionally with a dropout mask.
  nn::Var forward(nn::Tape& tape, const Batch& batch, Rng* dropout_rng);
  /// Loss used by train_step_classifier, exposed for gradient checks.
  nn::Var classifier_loss(nn::Tape& tape, const Batch& real, const Batch& fake, Rng* dropout_rng);

 private:
  void check_batch(const Batch& batch) const;

  CriticConfig config_;
  std::vector<std::size_t> widths_;
  nn::ParameterSet params_;
};

}  // namespace organ
