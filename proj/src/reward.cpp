#include "organ/reward.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "organ/errors.hpp"
#include "organ/molmetrics.hpp"
#include "organ/musicmetrics.hpp"
#include "organ/smiles.hpp"

namespace organ {

void RewardSpec::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0,1]");
  if (lambda < 1.0 && objectives.empty()) throw ParameterError("lambda < 1 needs at least one objective");
  if (!(invalid_reward >= 0.0 && invalid_reward <= 1.0)) throw ParameterError("invalid_reward must lie in [0,1]");
  if (schedule == ObjectiveSchedule::Fixed && !objectives.empty() && fixed_index >= objectives.size()) {
    throw ParameterError("fixed objective index " + std::to_string(fixed_index) + " out of range");
  }
}

std::size_t objective_for_epoch(const RewardSpec& spec, std::size_t epoch) {
  if (spec.schedule == ObjectiveSchedule::Fixed) return spec.fixed_index;
  if (spec.objectives.empty()) return 0;
  return epoch % spec.objectives.size();
}

std::vector<double> mixed_reward(const RewardSpec& spec, const Batch& batch, std::span<const double> critic,
                                 std::span<const double> objective) {
  if (critic.size() != batch.size() || objective.size() != batch.size()) {
    throw ContractError("mixed_reward: batch, critic and objective lengths differ (" + std::to_string(batch.size()) +
                        ", " + std::to_string(critic.size()) + ", " + std::to_string(objective.size()) + ")");
  }
  const double lambda = spec.lambda;
  if (lambda == 1.0) return {critic.begin(), critic.end()};
  if (lambda == 0.0) return {objective.begin(), objective.end()};
  std::vector<double> out(batch.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda * critic[i] + (1.0 - lambda) * objective[i];
  return out;
}

std::vector<double> apply_uniqueness_penalty(std::span<const double> rewards, const Batch& batch) {
  if (rewards.size() != batch.size()) throw ContractError("apply_uniqueness_penalty: length mismatch");
  std::map<TokenSequence, std::size_t> copies;
  for (const auto& seq : batch) ++copies[seq];
  std::vector<double> out(rewards.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t k = copies[batch[i]];
    out[i] = k == 1 ? rewards[i] : rewards[i] / static_cast<double>(k);
  }
  return out;
}

namespace {

ObjectiveFn molecular(std::function<double(const chem::Molecule&)> f) {
  return [f = std::move(f)](const std::string& text) -> std::optional<double> {
    auto parsed = chem::parse_smiles(text);
    if (!parsed) return std::nullopt;
    return f(*parsed.molecule);
  };
}

ObjectiveFn musical(double (*f)(std::span<const int>)) {
  return [f](const std::string& text) -> std::optional<double> {
    try {
      return f(music::melody_from_text(text));
    } catch (const EncodingError&) {
      return std::nullopt;
    }
  };
}

}  // namespace

ObjectiveRegistry ObjectiveRegistry::standard(std::shared_ptr<const chem::FragmentTable> fragments) {
  ObjectiveRegistry r;
  r.add({"druglikeness", molecular([](const chem::Molecule& m) { return chem::druglikeness(m); })});
  r.add({"solubility", molecular([](const chem::Molecule& m) { return chem::solubility(m); })});
  r.add({"synthesizability", molecular([fragments](const chem::Molecule& m) {
           if (!fragments) throw ConfigError("synthesizability needs a fragment table");
           return chem::synthesizability(m, *fragments);
         })});
  r.add({"tonality", musical(&music::tonality)});
  r.add({"ratio_of_steps", musical(&music::ratio_of_steps)});
  return r;
}

void ObjectiveRegistry::add(Objective objective) {
  if (!objective.score) throw ParameterError("objective '" + objective.name + "' has no scoring function");
  auto name = objective.name;
  objectives_.insert_or_assign(std::move(name), std::move(objective));
}

const Objective& ObjectiveRegistry::get(const std::string& name) const {
  auto it = objectives_.find(name);
  if (it == objectives_.end()) throw LookupError("unknown objective '" + name + "'");
  return it->second;
}

std::vector<std::string> ObjectiveRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : objectives_) out.push_back(name);
  return out;
}

std::vector<double> evaluate_objective(const Objective& objective, const Batch& batch, const Vocabulary& vocab,
                                       double invalid_reward) {
  std::vector<double> out;
  out.reserve(batch.size());
  for (const auto& seq : batch) {
    auto value = objective.score(vocab.decode(seq));
    out.push_back(value ? std::clamp(*value, 0.0, 1.0) : invalid_reward);
  }
  return out;
}

RewardPipeline::RewardPipeline(RewardSpec spec, BatchScorer critic, BatchScorer objective)
    : spec_(std::move(spec)), critic_(std::move(critic)), objective_(std::move(objective)) {
  spec_.validate();
  if (spec_.lambda > 0.0 && !critic_) throw ParameterError("lambda > 0 needs a critic");
  if (spec_.lambda < 1.0 && !objective_) throw ParameterError("lambda < 1 needs an objective");
}

std::vector<double> RewardPipeline::operator()(const Batch& batch) {
  std::vector<double> critic(batch.size(), 0.0);
  std::vector<double> objective(batch.size(), 0.0);
  if (spec_.lambda > 0.0) {
    critic = critic_(batch);
    ++critic_calls_;
  }
  if (spec_.lambda < 1.0) {
    objective = objective_(batch);
    ++objective_calls_;
  }
  auto rewards = mixed_reward(spec_, batch, critic, objective);
  for (double r : rewards) {
    if (!std::isfinite(r)) throw NumericError("non-finite reward");
  }
  if (spec_.uniqueness_penalty) rewards = apply_uniqueness_penalty(rewards, batch);
  return rewards;
}

RewardFn RewardPipeline::as_reward_fn() {
  return [this](const Batch& batch) { return (*this)(batch); };
}

}  // namespace organ
