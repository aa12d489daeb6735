#include "organ/generator.hpp"

#include <cmath>
#include <string>

#include "organ/errors.hpp"
#include "organ/kernels.hpp"

namespace organ {

using nn::Tensor;

namespace {

double sigmoid_of(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_rewards(const std::vector<double>& r, std::size_t expected) {
  if (r.size() != expected) {
    throw ContractError("reward function returned " + std::to_string(r.size()) + " values for " +
                        std::to_string(expected) + " sequences");
  }
  for (double v : r) {
    if (!std::isfinite(v)) throw NumericError("reward function returned a non-finite value");
  }
}

}  // namespace

PolicyNet::PolicyNet(const PolicyConfig& config, Rng& init_rng) : config_(config) {
  if (config.vocab_size == 0 || config.seq_len == 0 || config.embed_dim == 0 || config.hidden_dim == 0) {
    throw ParameterError("policy dimensions must be positive");
  }
  const std::size_t v = config.vocab_size, e = config.embed_dim, h = config.hidden_dim;
  embedding_ = &params_.add("embedding", {v + 1, e}, false);
  w_input_ = &params_.add("lstm.input", {4 * h, e}, true);
  w_recurrent_ = &params_.add("lstm.recurrent", {4 * h, h}, true);
  b_gates_ = &params_.add("lstm.bias", {4 * h}, false);
  w_out_ = &params_.add("output.weight", {v, h}, true);
  b_out_ = &params_.add("output.bias", {v}, false);
  params_.init_uniform(init_rng, config.init_scale);
}

PolicyNet::State PolicyNet::initial_state(std::size_t rows) const {
  return {Tensor({rows, config_.hidden_dim}), Tensor({rows, config_.hidden_dim})};
}

void PolicyNet::advance(State& state, std::span<const int> inputs, Tensor& probs) const {
  const std::size_t rows = inputs.size();
  const std::size_t e = config_.embed_dim, h = config_.hidden_dim, v = config_.vocab_size, g4 = 4 * h;
  if (state.hidden.size() != rows * h) throw DimensionError("advance: state rows do not match inputs");
  const auto& k = kernels::active();

  Tensor x({rows, e});
  for (std::size_t r = 0; r < rows; ++r) {
    const int id = inputs[r];
    if (id < 0 || id > static_cast<int>(v)) throw EncodingError("advance: token id out of range");
    std::copy_n(embedding_->value.row(static_cast<std::size_t>(id)), e, x.row(r));
  }
  Tensor gates({rows, g4});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(b_gates_->value.ptr(), g4, gates.row(r));
  k.gemm_nt(rows, g4, e, x.ptr(), e, w_input_->value.ptr(), e, gates.ptr(), g4);
  k.gemm_nt(rows, g4, h, state.hidden.ptr(), h, w_recurrent_->value.ptr(), h, gates.ptr(), g4);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = gates.row(r);
    double* c = state.cell.row(r);
    double* hid = state.hidden.row(r);
    for (std::size_t j = 0; j < h; ++j) {
      const double ig = sigmoid_of(z[j]);
      const double fg = sigmoid_of(z[h + j]);
      const double og = sigmoid_of(z[2 * h + j]);
      const double cand = std::tanh(z[3 * h + j]);
      c[j] = fg * c[j] + ig * cand;
      hid[j] = og * std::tanh(c[j]);
    }
  }
  if (probs.shape() != nn::Shape{rows, v}) probs = Tensor({rows, v});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(b_out_->value.ptr(), v, probs.row(r));
  k.gemm_nt(rows, v, h, state.hidden.ptr(), h, w_out_->value.ptr(), h, probs.ptr(), v);
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<double> row(probs.row(r), v);
    nn::softmax(row, row);
  }
}

std::vector<double> PolicyNet::step_distribution(std::span<const int> prefix) const {
  if (prefix.size() >= config_.seq_len) {
    throw UsageError("step_distribution: prefix already has full length " + std::to_string(config_.seq_len));
  }
  State s = initial_state(1);
  Tensor probs;
  int input = start_token();
  advance(s, std::span<const int>(&input, 1), probs);
  for (int tok : prefix) {
    if (tok < 0 || tok >= static_cast<int>(config_.vocab_size)) throw EncodingError("prefix token out of range");
    advance(s, std::span<const int>(&tok, 1), probs);
  }
  return {probs.data().begin(), probs.data().end()};
}

Batch PolicyNet::sample_batch(std::size_t count, Rng& rng) const {
  const std::size_t t_len = config_.seq_len, v = config_.vocab_size;
  Batch out(count, TokenSequence(t_len));
  if (count == 0) return out;
  State s = initial_state(count);
  Tensor probs;
  std::vector<int> inputs(count, start_token());
  for (std::size_t t = 0; t < t_len; ++t) {
    advance(s, inputs, probs);
    for (std::size_t r = 0; r < count; ++r) {
      const int tok = static_cast<int>(rng.categorical(std::span<const double>(probs.row(r), v)));
      out[r][t] = tok;
      inputs[r] = tok;
    }
  }
  return out;
}

Batch PolicyNet::rollout(std::span<const int> prefix, std::size_t n, Rng& rng) const {
  const std::size_t t_len = config_.seq_len, v = config_.vocab_size;
  if (n == 0) throw ParameterError("rollout count must be at least 1");
  if (prefix.size() > t_len) throw DimensionError("rollout: prefix longer than sequence length");
  TokenSequence base(prefix.begin(), prefix.end());
  base.resize(t_len);
  Batch out(n, base);
  if (prefix.size() == t_len) return out;

  State s = initial_state(n);
  Tensor probs;
  std::vector<int> inputs(n, start_token());
  advance(s, inputs, probs);
  for (int tok : prefix) {
    std::fill(inputs.begin(), inputs.end(), tok);
    advance(s, inputs, probs);
  }
  for (std::size_t t = prefix.size(); t < t_len; ++t) {
    for (std::size_t r = 0; r < n; ++r) {
      const int tok = static_cast<int>(rng.categorical(std::span<const double>(probs.row(r), v)));
      out[r][t] = tok;
      inputs[r] = tok;
    }
    if (t + 1 < t_len) advance(s, inputs, probs);
  }
  return out;
}

double PolicyNet::q_value(std::span<const int> prefix, std::size_t n, const RewardFn& reward, Rng& rng) const {
  if (prefix.empty() || prefix.size() > config_.seq_len) {
    throw ParameterError("q_value: prefix length must lie in [1, seq_len]");
  }
  if (prefix.size() == config_.seq_len) {
    Batch one{TokenSequence(prefix.begin(), prefix.end())};
    auto r = reward(one);
    check_rewards(r, 1);
    return r[0];
  }
  Batch completions = rollout(prefix, n, rng);
  auto r = reward(completions);
  check_rewards(r, completions.size());
  double total = 0.0;
  for (double x : r) total += x;
  return total / static_cast<double>(n);
}

QTable PolicyNet::q_values(const Batch& batch, std::size_t n, const RewardFn& reward, Rng& rng) const {
  check_batch(batch);
  if (n == 0) throw ParameterError("rollout count must be at least 1");
  const std::size_t b = batch.size(), t_len = config_.seq_len, v = config_.vocab_size;
  QTable q(b, std::vector<double>(t_len, 0.0));

  State prefix_state = initial_state(b);
  Tensor prefix_probs;
  std::vector<int> inputs(b, start_token());
  const std::size_t m = b * n;
  Batch completions(m, TokenSequence(t_len));
  Batch chunk(b);
  Tensor probs;
  std::vector<int> roll_inputs(m);

  for (std::size_t k = 0; k < t_len; ++k) {
    if (k > 0) {
      for (std::size_t r = 0; r < b; ++r) inputs[r] = batch[r][k - 1];
    }
    advance(prefix_state, inputs, prefix_probs);
    if (k == 0) continue;
    // prefix length k is fixed; sample tokens k..T-1 for n copies of every row
    State s{Tensor({m, config_.hidden_dim}), Tensor({m, config_.hidden_dim})};
    probs = Tensor({m, v});
    for (std::size_t rep = 0; rep < n; ++rep) {
      std::copy(prefix_state.hidden.data().begin(), prefix_state.hidden.data().end(),
                s.hidden.ptr() + rep * b * config_.hidden_dim);
      std::copy(prefix_state.cell.data().begin(), prefix_state.cell.data().end(),
                s.cell.ptr() + rep * b * config_.hidden_dim);
      std::copy(prefix_probs.data().begin(), prefix_probs.data().end(), probs.ptr() + rep * b * v);
      for (std::size_t r = 0; r < b; ++r) {
        std::copy_n(batch[r].begin(), k, completions[rep * b + r].begin());
      }
    }
    for (std::size_t t = k; t < t_len; ++t) {
      for (std::size_t r = 0; r < m; ++r) {
        const int tok = static_cast<int>(rng.categorical(std::span<const double>(probs.row(r), v)));
        completions[r][t] = tok;
        roll_inputs[r] = tok;
      }
      if (t + 1 < t_len) advance(s, roll_inputs, probs);
    }
    for (std::size_t rep = 0; rep < n; ++rep) {
      for (std::size_t r = 0; r < b; ++r) chunk[r] = completions[rep * b + r];
      auto rewards = reward(chunk);
      check_rewards(rewards, b);
      for (std::size_t r = 0; r < b; ++r) q[r][k - 1] += rewards[r];
    }
    for (std::size_t r = 0; r < b; ++r) q[r][k - 1] /= static_cast<double>(n);
  }
  auto last = reward(batch);
  check_rewards(last, b);
  for (std::size_t r = 0; r < b; ++r) q[r][t_len - 1] = last[r];
  return q;
}

std::vector<double> PolicyNet::log_probability(const Batch& batch) const {
  check_batch(batch);
  const std::size_t b = batch.size();
  std::vector<double> lp(b, 0.0);
  State s = initial_state(b);
  Tensor probs;
  std::vector<int> inputs(b, start_token());
  for (std::size_t t = 0; t < config_.seq_len; ++t) {
    if (t > 0) {
      for (std::size_t r = 0; r < b; ++r) inputs[r] = batch[r][t - 1];
    }
    advance(s, inputs, probs);
    for (std::size_t r = 0; r < b; ++r) lp[r] += std::log(probs.at(r, static_cast<std::size_t>(batch[r][t])));
  }
  return lp;
}

double PolicyNet::expected_reward_exact(const RewardFn& reward) const {
  const std::size_t v = config_.vocab_size, t_len = config_.seq_len;
  constexpr double kGuard = 1e6;
  if (std::pow(static_cast<double>(v), static_cast<double>(t_len)) > kGuard) {
    throw ParameterError("expected_reward_exact: " + std::to_string(v) + "^" + std::to_string(t_len) +
                         " sequences exceed the enumeration guard of 1e6");
  }
  std::size_t total = 1;
  for (std::size_t i = 0; i < t_len; ++i) total *= v;
  constexpr std::size_t kChunk = 4096;
  double expectation = 0.0;
  TokenSequence counter(t_len, 0);
  for (std::size_t start = 0; start < total; start += kChunk) {
    const std::size_t count = std::min(kChunk, total - start);
    Batch chunk;
    chunk.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      chunk.push_back(counter);
      for (std::size_t pos = t_len; pos-- > 0;) {
        if (++counter[pos] < static_cast<int>(v)) break;
        counter[pos] = 0;
      }
    }
    auto lp = log_probability(chunk);
    auto r = reward(chunk);
    check_rewards(r, count);
    for (std::size_t i = 0; i < count; ++i) expectation += std::exp(lp[i]) * r[i];
  }
  return expectation;
}

void PolicyNet::check_batch(const Batch& batch) const {
  for (const auto& seq : batch) {
    if (seq.size() != config_.seq_len) {
      throw DimensionError("sequence length " + std::to_string(seq.size()) + " differs from policy length " +
                           std::to_string(config_.seq_len));
    }
    for (int tok : seq) {
      if (tok < 0 || tok >= static_cast<int>(config_.vocab_size)) {
        throw EncodingError("token id " + std::to_string(tok) + " outside vocabulary");
      }
    }
  }
}

nn::Var PolicyNet::weighted_nll(nn::Tape& tape, const Batch& batch,
                                const std::function<double(std::size_t, std::size_t)>& weight) {
  check_batch(batch);
  const std::size_t b = batch.size(), t_len = config_.seq_len, h = config_.hidden_dim;
  std::vector<int> ids(t_len * b);
  std::vector<int> targets(t_len * b);
  std::vector<double> weights(t_len * b);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t r = 0; r < b; ++r) {
      ids[t * b + r] = t == 0 ? start_token() : batch[r][t - 1];
      targets[t * b + r] = batch[r][t];
      weights[t * b + r] = weight(r, t);
    }
  }
  nn::Var emb = tape.embedding(*embedding_, ids);
  nn::LstmState state{tape.constant(Tensor({b, h})), tape.constant(Tensor({b, h}))};
  const nn::LstmWeights lw{*w_input_, *w_recurrent_, *b_gates_};
  std::vector<nn::Var> hidden;
  hidden.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    state = tape.lstm_step(tape.slice_rows(emb, t * b, b), state, lw);
    hidden.push_back(state.hidden);
  }
  nn::Var logits = tape.affine(tape.stack_rows(hidden), *w_out_, b_out_);
  return tape.softmax_xent(logits, targets, weights);
}

double PolicyNet::mean_nll(const Batch& batch) {
  if (batch.empty()) throw ParameterError("mean_nll: empty batch");
  const double w = 1.0 / static_cast<double>(batch.size() * config_.seq_len);
  nn::Tape tape;
  return tape.value(weighted_nll(tape, batch, [w](std::size_t, std::size_t) { return w; }))[0];
}

double PolicyNet::mle_step(const Batch& batch, nn::Adam& opt) {
  if (batch.empty()) throw ParameterError("mle_step: empty batch");
  const double w = 1.0 / static_cast<double>(batch.size() * config_.seq_len);
  params_.zero_grad();
  nn::Tape tape;
  nn::Var loss = weighted_nll(tape, batch, [w](std::size_t, std::size_t) { return w; });
  const double value = tape.value(loss)[0];
  tape.backward(loss);
  opt.step(params_);
  return value;
}

double PolicyNet::policy_gradient(const Batch& batch, const QTable& q, double baseline) {
  if (batch.empty()) throw ParameterError("policy_gradient: empty batch");
  if (q.size() != batch.size()) {
    throw ContractError("policy_gradient: " + std::to_string(q.size()) + " Q rows for " +
                        std::to_string(batch.size()) + " sequences");
  }
  for (const auto& row : q) {
    if (row.size() != config_.seq_len) {
      throw ContractError("policy_gradient: Q row of length " + std::to_string(row.size()) +
                          " for sequences of length " + std::to_string(config_.seq_len));
    }
  }
  // weighted_nll differentiates -sum w log p; negative weights leave +estimator in grad
  const double scale = -1.0 / static_cast<double>(batch.size() * config_.seq_len);
  params_.zero_grad();
  nn::Tape tape;
  nn::Var loss =
      weighted_nll(tape, batch, [&](std::size_t r, std::size_t t) { return scale * (q[r][t] - baseline); });
  tape.backward(loss);
  double norm = 0.0;
  for (const auto& p : params_) {
    for (double g : p.grad.data()) norm += g * g;
  }
  return std::sqrt(norm);
}

double PolicyNet::policy_gradient_step(const Batch& batch, const QTable& q, nn::Adam& opt, double baseline) {
  const double norm = policy_gradient(batch, q, baseline);
  for (auto& p : params_) {
    for (double& g : p.grad.data()) g = -g;
  }
  opt.step(params_);
  return norm;
}

}  // namespace organ
