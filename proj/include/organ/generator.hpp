#pragma once

#include <functional>
#include <span>
#include <vector>

#include "organ/optim.hpp"
#include "organ/params.hpp"
#include "organ/rng.hpp"
#include "organ/tape.hpp"
#include "organ/vocab.hpp"

namespace organ {

/// Scores a batch of full-length sequences; one value per sequence.
using RewardFn = std::function<std::vector<double>(const Batch&)>;

struct PolicyConfig {
  std::size_t vocab_size = 0;
  std::size_t seq_len = 0;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  double init_scale = 0.1;
};

/// Per-step rollout estimates; q[b][t] scores token t of sequence b.
using QTable = std::vector<std::vector<double>>;

/// Autoregressive LSTM policy. The embedding table has one extra row (id
/// vocab_size) used as the start token; the recurrent state starts at zero.
class PolicyNet {
 public:
  PolicyNet(const PolicyConfig& config, Rng& init_rng);
  // Layer handles point into params_, so copies would alias the source.
  PolicyNet(const PolicyNet&) = delete;
  PolicyNet& operator=(const PolicyNet&) = delete;
  PolicyNet(PolicyNet&&) = default;
  PolicyNet& operator=(PolicyNet&&) = default;

  const PolicyConfig& config() const { return config_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  int start_token() const { return static_cast<int>(config_.vocab_size); }

  /// Next-token distribution after `prefix` (length < seq_len).
  std::vector<double> step_distribution(std::span<const int> prefix) const;

  Batch sample_batch(std::size_t count, Rng& rng) const;

  /// N completions of `prefix`, each extended to full length by sampling.
  Batch rollout(std::span<const int> prefix, std::size_t n, Rng& rng) const;

  /// Q for taking prefix.back() after prefix[0..t-1]: the reward itself at
  /// full length, otherwise the mean reward of n rollout completions.
  double q_value(std::span<const int> prefix, std::size_t n, const RewardFn& reward, Rng& rng) const;

  /// Q for every (sequence, step) of a batch. Each reward call scores one
  /// completion per batch sequence, so any per-call penalty sees batch-sized groups.
  QTable q_values(const Batch& batch, std::size_t n, const RewardFn& reward, Rng& rng) const;

  /// Sum of log-probabilities of each full sequence.
  std::vector<double> log_probability(const Batch& batch) const;

  /// Exact sum over all vocab^seq_len sequences of probability * reward.
  double expected_reward_exact(const RewardFn& reward) const;

  /// Teacher-forced weighted NLL: sum_{b,t} weight(b,t) * -log p(y_t | y_<t).
  nn::Var weighted_nll(nn::Tape& tape, const Batch& batch, const std::function<double(std::size_t, std::size_t)>& weight);

  /// One Adam step on mean per-token NLL; returns the loss before the update.
  double mle_step(const Batch& batch, nn::Adam& opt);
  /// Mean per-token NLL without updating.
  double mean_nll(const Batch& batch);

  /// Leaves the estimator (1/B) sum_b (1/T) sum_t grad log G(y_t | y_<t) * (Q - baseline)
  /// in params().grad and returns its L2 norm.
  double policy_gradient(const Batch& batch, const QTable& q, double baseline = 0.0);
  /// Ascent step along policy_gradient; returns the gradient norm.
  double policy_gradient_step(const Batch& batch, const QTable& q, nn::Adam& opt, double baseline = 0.0);

  /// Recurrent state for a batch of independent streams.
  struct State {
    nn::Tensor hidden;
    nn::Tensor cell;
  };
  State initial_state(std::size_t rows) const;
  /// Feeds one input token per row and writes next-token probabilities [rows, vocab].
  void advance(State& state, std::span<const int> inputs, nn::Tensor& probs) const;

 private:
  void check_batch(const Batch& batch) const;

  PolicyConfig config_;
  nn::ParameterSet params_;
  nn::Parameter* embedding_;
  nn::Parameter* w_input_;
  nn::Parameter* w_recurrent_;
  nn::Parameter* b_gates_;
  nn::Parameter* w_out_;
  nn::Parameter* b_out_;
};

}  // namespace organ
