#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "organ/generator.hpp"
#include "organ/vocab.hpp"

namespace organ::chem {
class FragmentTable;
}

namespace organ {

enum class ObjectiveSchedule { Fixed, Rotate };

struct RewardSpec {
  double lambda = 0.5;
  std::vector<std::string> objectives;
  ObjectiveSchedule schedule = ObjectiveSchedule::Rotate;
  std::size_t fixed_index = 0;
  bool uniqueness_penalty = true;
  double invalid_reward = 0.0;

  /// Throws ParameterError when a field is out of range.
  void validate() const;
};

std::size_t objective_for_epoch(const RewardSpec& spec, std::size_t epoch);

/// lambda * critic + (1 - lambda) * objective, with both endpoints returning
/// the selected input unchanged.
std::vector<double> mixed_reward(const RewardSpec& spec, const Batch& batch, std::span<const double> critic,
                                 std::span<const double> objective);

/// Divides each reward by the number of identical token sequences in the batch.
std::vector<double> apply_uniqueness_penalty(std::span<const double> rewards, const Batch& batch);

/// Scores one decoded string; nullopt marks an invalid string.
using ObjectiveFn = std::function<std::optional<double>(const std::string&)>;

struct Objective {
  std::string name;
  ObjectiveFn score;
};

/// Name -> objective table. standard() registers the five built-in objectives;
/// synthesizability needs a fragment table and throws ConfigError without one.
class ObjectiveRegistry {
 public:
  static ObjectiveRegistry standard(std::shared_ptr<const chem::FragmentTable> fragments = nullptr);

  void add(Objective objective);
  bool contains(const std::string& name) const { return objectives_.count(name) != 0; }
  /// Throws LookupError for unregistered names.
  const Objective& get(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, Objective> objectives_;
};

inline const std::vector<std::string> kMoleculeObjectives = {"druglikeness", "synthesizability", "solubility"};
inline const std::vector<std::string> kMusicObjectives = {"tonality", "ratio_of_steps"};

/// Decodes and scores each sequence; invalid strings get invalid_reward and
/// values are clamped into [0,1].
std::vector<double> evaluate_objective(const Objective& objective, const Batch& batch, const Vocabulary& vocab,
                                       double invalid_reward = 0.0);

/// The reward used in generator updates. Counts how often the critic and the
/// objective are consulted; the critic is skipped at lambda 0 and the
/// objective at lambda 1.
class RewardPipeline {
 public:
  using BatchScorer = std::function<std::vector<double>(const Batch&)>;

  RewardPipeline(RewardSpec spec, BatchScorer critic, BatchScorer objective);

  std::vector<double> operator()(const Batch& batch);
  /// Callable view for the generator; the pipeline must outlive it.
  RewardFn as_reward_fn();

  const RewardSpec& spec() const { return spec_; }
  std::size_t critic_calls() const { return critic_calls_; }
  std::size_t objective_calls() const { return objective_calls_; }

 private:
  RewardSpec spec_;
  BatchScorer critic_;
  BatchScorer objective_;
  std::size_t critic_calls_ = 0;
  std::size_t objective_calls_ = 0;
};

}  // namespace organ
