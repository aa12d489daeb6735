#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "organ/discriminator.hpp"
#include "organ/generator.hpp"
#include "organ/molmetrics.hpp"
#include "organ/optim.hpp"
#include "organ/reward.hpp"
#include "organ/vocab.hpp"

namespace organ {

enum class Task { Molecules, Music };

Task parse_task(const std::string& name);  // "molecules" or "music"
std::string task_name(Task task);

enum class Baseline { None, Mean };

/// Every field is addressable as a key in the flat "key = value" config
/// format; list values are comma separated.
struct TrainConfig {
  std::string corpus;
  Task task = Task::Molecules;
  std::size_t corpus_limit = 0;  // 0 keeps every line
  std::optional<double> length_slack;  // unset: 0.1 for molecules, 0 for music

  double lambda = 0.5;
  std::vector<std::string> objectives;
  ObjectiveSchedule schedule = ObjectiveSchedule::Rotate;
  std::size_t fixed_index = 0;
  bool uniqueness_penalty = true;
  double invalid_reward = 0.0;

  std::size_t pretrain_gen_epochs = 250;
  std::size_t pretrain_disc_epochs = 10;
  std::size_t adversarial_epochs = 100;
  std::size_t g_steps = 1;
  std::optional<std::size_t> d_steps;  // unset: 5 for wgan, 1 for gan
  std::size_t batch_size = 64;
  std::size_t rollout_n = 16;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  CriticMode mode = CriticMode::Classifier;
  double clip = 0.01;
  double gen_learning_rate = 1e-3;
  double disc_learning_rate = 1e-3;
  double pg_learning_rate = 1e-4;
  Baseline pg_baseline = Baseline::None;

  std::uint64_t seed = 0;
  std::size_t eval_samples = 1000;
  std::size_t diversity_reference = 200;
  std::size_t checkpoint_every = 0;  // 0 writes only the final checkpoint
  std::vector<double> sweep_lambdas = {0.0, 0.25, 0.5, 0.75, 1.0};

  std::string init_checkpoint;
  std::string checkpoint_path = "model.ckpt";
  std::string metrics_path = "metrics.csv";

  /// Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// One "key = value" line per key, in keys() order.
  std::string to_text() const;
  /// '#' starts a comment; blank lines are ignored.
  static TrainConfig parse(std::string_view text);
  static TrainConfig load(const std::string& path);

  /// Throws ConfigError when a count is zero or a value is out of range.
  void validate() const;
  /// Reward settings (lambda, objectives, schedule) as ConfigError.
  void validate_reward() const;
  std::size_t resolved_d_steps() const;
  double resolved_length_slack() const;
  RewardSpec reward_spec() const;
};

struct MetricReport {
  std::size_t epoch = 0;
  double nll = 0.0;
  double d_loss = 0.0;
  double validity = 0.0;
  double diversity = 0.0;
  /// Means over valid samples, in column order.
  std::vector<std::pair<std::string, double>> objectives;
  double mean_len = 0.0;
  /// Fraction of samples whose string occurs more than once among the samples.
  double dup_frac = 0.0;
  std::size_t sample_count = 0;

  double objective(const std::string& name) const;
  std::string csv_header() const;
  std::string csv_row() const;
};

/// Corpus-derived state shared by training and evaluation.
struct TaskContext {
  Task task = Task::Molecules;
  std::vector<std::string> corpus;
  Vocabulary vocab;
  std::size_t seq_len = 0;
  /// Corpus lines that fit the vocabulary and length, encoded.
  Batch encoded;
  ObjectiveRegistry registry;
  std::shared_ptr<const chem::FragmentTable> fragments;
  std::vector<chem::Fingerprint> reference;
  /// Objective columns reported for this task.
  std::vector<std::string> report_objectives;

  /// Reads the corpus and builds vocabulary and max length from it.
  static TaskContext from_config(const TrainConfig& config);
  /// Reuses a stored vocabulary and length (evaluation of a checkpoint).
  static TaskContext from_config(const TrainConfig& config, Vocabulary vocab, std::size_t seq_len);
};

/// Generator, critic and critic optimizer, plus the config and vocabulary they were built from.
class Model {
 public:
  static Model create(const TrainConfig& config, const Vocabulary& vocab, std::size_t seq_len);
  static Model load(const std::string& path);
  static Model deserialize(std::string_view bytes);
  void save(const std::string& path) const;
  std::string serialize() const;
  /// Swaps in a run config; throws ConfigError if it changes the task or architecture.
  void use_config(const TrainConfig& next);

  TrainConfig config;
  Vocabulary vocab;
  std::size_t seq_len = 0;
  PolicyNet generator;
  CriticNet critic;
  nn::Adam critic_opt;
  std::string stage = "init";
  std::size_t epochs_done = 0;

 private:
  Model(TrainConfig config, Vocabulary vocab, std::size_t seq_len, PolicyNet generator, CriticNet critic,
        nn::Adam critic_opt);
};

struct PretrainLog {
  std::vector<double> mle_loss;
  std::vector<double> disc_loss;
  std::string csv() const;
};

struct TrainHooks {
  std::function<void(const CriticNet&)> after_critic_step;
  std::function<void(const RewardPipeline&)> after_generator_step;
  std::function<void(const MetricReport&)> on_epoch;
};

/// MLE epochs for the generator, then critic epochs on corpus vs generator samples.
PretrainLog pretrain(Model& model, const TaskContext& ctx);

/// The reward used in generator updates for one objective index.
RewardPipeline make_generator_reward(const TrainConfig& config, const TaskContext& ctx, CriticNet& critic,
                                     std::size_t objective_index);

/// Adversarial epochs; one report per epoch (1-based), evaluated on the
/// configured sample count with a fixed evaluation seed.
std::vector<MetricReport> train_adversarial(Model& model, const TaskContext& ctx, const TrainHooks& hooks = {});

std::vector<std::string> sample(const Model& model, std::size_t count, std::uint64_t seed);

/// Deterministic given the seed; the critic is only read.
MetricReport evaluate(Model& model, const TaskContext& ctx, std::size_t sample_count, std::uint64_t seed);

/// Reports over already decoded strings (standalone metric use).
MetricReport evaluate_strings(const std::vector<std::string>& samples, const TaskContext& ctx);

struct SweepResult {
  double lambda = 0.0;
  std::vector<MetricReport> reports;
};

/// train_adversarial from the same starting checkpoint bytes for every lambda.
std::vector<SweepResult> lambda_sweep(const Model& start, const TaskContext& ctx, const std::vector<double>& lambdas);

std::string metrics_csv(const std::vector<MetricReport>& reports);

/// Splits a metrics CSV into per-column (epoch, value) series. Throws
/// ParseError naming the line for malformed input.
std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> plot_series(std::string_view csv);
/// Writes <dir>/<column>.tsv for every non-epoch column; returns the paths.
std::vector<std::string> emit_plot_data(const std::string& csv_path, const std::string& dir);

/// Shortest round-trip decimal form.
std::string format_number(double value);

}  // namespace organ
