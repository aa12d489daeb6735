#include "organ/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <map>
#include <sstream>

#include "organ/checkpoint.hpp"
#include "organ/errors.hpp"
#include "organ/musicmetrics.hpp"
#include "organ/smiles.hpp"

namespace organ {

namespace {

// Rng stream ids; every phase draws from its own stream.
constexpr std::uint64_t kInitGenerator = 1;
constexpr std::uint64_t kInitCritic = 2;
constexpr std::uint64_t kMleShuffle = 3;
constexpr std::uint64_t kDiscPretrain = 4;
constexpr std::uint64_t kDiscDropout = 5;
constexpr std::uint64_t kAdversarial = 6;
constexpr std::uint64_t kEvaluation = 7;

constexpr std::size_t kNllRows = 256;

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("config key '" + key + "': cannot read '" + value + "' as " + expected);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "an unsigned integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true/false");
}

struct Field {
  std::string name;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
Field size_field(std::string name, T TrainConfig::*member) {
  return {name, [member](const TrainConfig& c) { return std::to_string(c.*member); },
          [member, name](TrainConfig& c, const std::string& v) { c.*member = to_size(name, v); }};
}

Field double_field(std::string name, double TrainConfig::*member) {
  return {name, [member](const TrainConfig& c) { return format_number(c.*member); },
          [member, name](TrainConfig& c, const std::string& v) { c.*member = to_double(name, v); }};
}

Field string_field(std::string name, std::string TrainConfig::*member) {
  return {name, [member](const TrainConfig& c) { return c.*member; },
          [member](TrainConfig& c, const std::string& v) { c.*member = v; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(string_field("corpus", &TrainConfig::corpus));
    f.push_back({"task", [](const TrainConfig& c) { return task_name(c.task); },
                 [](TrainConfig& c, const std::string& v) { c.task = parse_task(v); }});
    f.push_back(size_field("corpus_limit", &TrainConfig::corpus_limit));
    f.push_back({"length_slack",
                 [](const TrainConfig& c) { return c.length_slack ? format_number(*c.length_slack) : "auto"; },
                 [](TrainConfig& c, const std::string& v) {
                   if (v == "auto") {
                     c.length_slack.reset();
                   } else {
                     c.length_slack = to_double("length_slack", v);
                   }
                 }});
    f.push_back(double_field("lambda", &TrainConfig::lambda));
    f.push_back({"objectives", [](const TrainConfig& c) { return join(c.objectives); },
                 [](TrainConfig& c, const std::string& v) { c.objectives = split_list(v); }});
    f.push_back({"schedule",
                 [](const TrainConfig& c) { return c.schedule == ObjectiveSchedule::Fixed ? "fixed" : "rotate"; },
                 [](TrainConfig& c, const std::string& v) {
                   if (v == "fixed") {
                     c.schedule = ObjectiveSchedule::Fixed;
                   } else if (v == "rotate") {
                     c.schedule = ObjectiveSchedule::Rotate;
                   } else {
                     bad_value("schedule", v, "fixed or rotate");
                   }
                 }});
    f.push_back(size_field("fixed_index", &TrainConfig::fixed_index));
    f.push_back({"uniqueness_penalty", [](const TrainConfig& c) { return c.uniqueness_penalty ? "true" : "false"; },
                 [](TrainConfig& c, const std::string& v) { c.uniqueness_penalty = to_bool("uniqueness_penalty", v); }});
    f.push_back(double_field("invalid_reward", &TrainConfig::invalid_reward));
    f.push_back(size_field("pretrain_gen_epochs", &TrainConfig::pretrain_gen_epochs));
    f.push_back(size_field("pretrain_disc_epochs", &TrainConfig::pretrain_disc_epochs));
    f.push_back(size_field("adversarial_epochs", &TrainConfig::adversarial_epochs));
    f.push_back(size_field("g_steps", &TrainConfig::g_steps));
    f.push_back({"d_steps", [](const TrainConfig& c) { return c.d_steps ? std::to_string(*c.d_steps) : "auto"; },
                 [](TrainConfig& c, const std::string& v) {
                   if (v == "auto") {
                     c.d_steps.reset();
                   } else {
                     c.d_steps = to_size("d_steps", v);
                   }
                 }});
    f.push_back(size_field("batch_size", &TrainConfig::batch_size));
    f.push_back(size_field("rollout_n", &TrainConfig::rollout_n));
    f.push_back(size_field("embed_dim", &TrainConfig::embed_dim));
    f.push_back(size_field("hidden_dim", &TrainConfig::hidden_dim));
    f.push_back({"mode", [](const TrainConfig& c) { return critic_mode_name(c.mode); },
                 [](TrainConfig& c, const std::string& v) {
                   try {
                     c.mode = parse_critic_mode(v);
                   } catch (const Error&) {
                     bad_value("mode", v, "gan or wgan");
                   }
                 }});
    f.push_back(double_field("clip", &TrainConfig::clip));
    f.push_back(double_field("gen_learning_rate", &TrainConfig::gen_learning_rate));
    f.push_back(double_field("disc_learning_rate", &TrainConfig::disc_learning_rate));
    f.push_back(double_field("pg_learning_rate", &TrainConfig::pg_learning_rate));
    f.push_back({"pg_baseline", [](const TrainConfig& c) { return c.pg_baseline == Baseline::Mean ? "mean" : "none"; },
                 [](TrainConfig& c, const std::string& v) {
                   if (v == "mean") {
                     c.pg_baseline = Baseline::Mean;
                   } else if (v == "none") {
                     c.pg_baseline = Baseline::None;
                   } else {
                     bad_value("pg_baseline", v, "none or mean");
                   }
                 }});
    f.push_back({"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
                 [](TrainConfig& c, const std::string& v) { c.seed = to_u64("seed", v); }});
    f.push_back(size_field("eval_samples", &TrainConfig::eval_samples));
    f.push_back(size_field("diversity_reference", &TrainConfig::diversity_reference));
    f.push_back(size_field("checkpoint_every", &TrainConfig::checkpoint_every));
    f.push_back({"sweep_lambdas",
                 [](const TrainConfig& c) {
                   std::vector<std::string> parts;
                   for (double l : c.sweep_lambdas) parts.push_back(format_number(l));
                   return join(parts);
                 },
                 [](TrainConfig& c, const std::string& v) {
                   c.sweep_lambdas.clear();
                   for (const auto& item : split_list(v)) c.sweep_lambdas.push_back(to_double("sweep_lambdas", item));
                 }});
    f.push_back(string_field("init_checkpoint", &TrainConfig::init_checkpoint));
    f.push_back(string_field("checkpoint_path", &TrainConfig::checkpoint_path));
    f.push_back(string_field("metrics_path", &TrainConfig::metrics_path));
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.name == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

Batch gather(const Batch& source, std::span<const std::size_t> rows) {
  Batch out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(source[r]);
  return out;
}

Batch nll_rows(const TaskContext& ctx) {
  const std::size_t n = std::min(kNllRows, ctx.encoded.size());
  return Batch(ctx.encoded.begin(), ctx.encoded.begin() + static_cast<std::ptrdiff_t>(n));
}

// Loss as reported in logs: cross-entropy for the classifier, negated
// Wasserstein estimate for the critic.
double critic_loss(CriticNet& critic, const Batch& real, const Batch& fake) {
  if (critic.mode() == CriticMode::Classifier) {
    nn::Tape tape;
    return tape.value(critic.classifier_loss(tape, real, fake, nullptr))[0];
  }
  return -(mean_of(critic.score(real)) - mean_of(critic.score(fake)));
}

double critic_step(Model& model, const Batch& real, const Batch& fake, Rng& dropout) {
  if (model.critic.mode() == CriticMode::Classifier) {
    return model.critic.train_step_classifier(real, fake, model.critic_opt, dropout);
  }
  return -model.critic.train_step_wasserstein(real, fake, model.critic_opt, model.config.clip);
}

[[noreturn]] void numeric_failure(const Model& model, const std::string& what, const Batch& batch,
                                  const QTable* q = nullptr) {
  std::string where;
  if (!model.config.checkpoint_path.empty()) {
    where = model.config.checkpoint_path + ".nan_dump.txt";
    std::ofstream out(where, std::ios::binary);
    out << "# " << what << '\n';
    for (std::size_t r = 0; r < batch.size(); ++r) {
      out << model.vocab.decode(batch[r]);
      if (q) {
        for (double v : (*q)[r]) out << '\t' << format_number(v);
      }
      out << '\n';
    }
  }
  throw NumericError(what + (where.empty() ? "" : "; offending batch written to " + where));
}

void check_finite(const Model& model, double value, const std::string& what, const Batch& batch) {
  if (!std::isfinite(value)) numeric_failure(model, what + " is not finite", batch);
}

}  // namespace

Task parse_task(const std::string& name) {
  if (name == "molecules") return Task::Molecules;
  if (name == "music") return Task::Music;
  throw ConfigError("unknown task '" + name + "' (expected molecules or music)");
}

std::string task_name(Task task) { return task == Task::Molecules ? "molecules" : "music"; }

std::string format_number(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw Error("cannot format number");
  return std::string(buf, ptr);
}

// ---- TrainConfig -------------------------------------------------------------

void TrainConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, trim(value)); }

std::string TrainConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.name);
    return out;
  }();
  return names;
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.name + " = " + f.get(*this) + "\n";
  return out;
}

TrainConfig TrainConfig::parse(std::string_view text) {
  TrainConfig config;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    }
    config.set(trim(std::string_view(body).substr(0, eq)), body.substr(eq + 1));
  }
  return config;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open config '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

void TrainConfig::validate() const {
  const std::pair<const char*, std::size_t> counts[] = {
      {"pretrain_gen_epochs", pretrain_gen_epochs}, {"pretrain_disc_epochs", pretrain_disc_epochs},
      {"adversarial_epochs", adversarial_epochs},   {"g_steps", g_steps},
      {"d_steps", resolved_d_steps()},              {"batch_size", batch_size},
      {"rollout_n", rollout_n},                     {"embed_dim", embed_dim},
      {"hidden_dim", hidden_dim},                   {"eval_samples", eval_samples},
      {"diversity_reference", diversity_reference}};
  for (const auto& [name, value] : counts) {
    // epoch counts of zero are allowed: they mean "skip this phase"
    if (value == 0 && std::string_view(name).find("epochs") == std::string_view::npos) {
      throw ConfigError(std::string("config key '") + name + "' must be positive");
    }
  }
  if (corpus.empty()) throw ConfigError("config key 'corpus' is required");
  if (!(clip > 0.0)) throw ConfigError("config key 'clip' must be positive");
  for (double lr : {gen_learning_rate, disc_learning_rate, pg_learning_rate}) {
    if (!(lr > 0.0)) throw ConfigError("learning rates must be positive");
  }
  if (length_slack && *length_slack < 0.0) throw ConfigError("config key 'length_slack' must be non-negative");
  for (double l : sweep_lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("sweep_lambdas entries must lie in [0,1]");
  }
  const auto registered = ObjectiveRegistry::standard();
  for (const auto& name : objectives) {
    if (!registered.contains(name)) throw ConfigError("unknown objective '" + name + "'");
    const auto& own = task == Task::Molecules ? kMoleculeObjectives : kMusicObjectives;
    if (std::find(own.begin(), own.end(), name) == own.end()) {
      throw ConfigError("objective '" + name + "' does not apply to task " + task_name(task));
    }
  }
}

void TrainConfig::validate_reward() const {
  try {
    reward_spec().validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

std::size_t TrainConfig::resolved_d_steps() const {
  if (d_steps) return *d_steps;
  return mode == CriticMode::Wasserstein ? 5 : 1;
}

double TrainConfig::resolved_length_slack() const {
  if (length_slack) return *length_slack;
  return task == Task::Molecules ? 0.1 : 0.0;
}

RewardSpec TrainConfig::reward_spec() const {
  RewardSpec spec;
  spec.lambda = lambda;
  spec.objectives = objectives;
  spec.schedule = schedule;
  spec.fixed_index = fixed_index;
  spec.uniqueness_penalty = uniqueness_penalty;
  spec.invalid_reward = invalid_reward;
  return spec;
}

// ---- MetricReport ------------------------------------------------------------

double MetricReport::objective(const std::string& name) const {
  for (const auto& [n, v] : objectives) {
    if (n == name) return v;
  }
  throw LookupError("report has no objective '" + name + "'");
}

std::string MetricReport::csv_header() const {
  std::string out = "epoch,nll,d_loss,validity,diversity";
  for (const auto& [name, _] : objectives) out += "," + name;
  return out + ",mean_len,dup_frac";
}

std::string MetricReport::csv_row() const {
  std::string out = std::to_string(epoch) + "," + format_number(nll) + "," + format_number(d_loss) + "," +
                    format_number(validity) + "," + format_number(diversity);
  for (const auto& [_, value] : objectives) out += "," + format_number(value);
  return out + "," + format_number(mean_len) + "," + format_number(dup_frac);
}

std::string metrics_csv(const std::vector<MetricReport>& reports) {
  std::string out = (reports.empty() ? MetricReport{}.csv_header() : reports.front().csv_header()) + "\n";
  for (const auto& r : reports) out += r.csv_row() + "\n";
  return out;
}

std::string PretrainLog::csv() const {
  std::string out = "epoch,phase,loss\n";
  for (std::size_t i = 0; i < mle_loss.size(); ++i) out += std::to_string(i + 1) + ",mle," + format_number(mle_loss[i]) + "\n";
  for (std::size_t i = 0; i < disc_loss.size(); ++i) {
    out += std::to_string(i + 1) + ",critic," + format_number(disc_loss[i]) + "\n";
  }
  return out;
}

// ---- TaskContext -------------------------------------------------------------

namespace {

TaskContext load_context(const TrainConfig& config, std::optional<std::pair<Vocabulary, std::size_t>> stored) {
  TaskContext ctx;
  ctx.task = config.task;
  ctx.corpus = read_corpus(config.corpus);
  if (config.corpus_limit > 0 && ctx.corpus.size() > config.corpus_limit) ctx.corpus.resize(config.corpus_limit);
  if (ctx.corpus.empty()) throw ConfigError("corpus '" + config.corpus + "' has no lines");
  if (stored) {
    ctx.vocab = stored->first;
    ctx.seq_len = stored->second;
  } else {
    ctx.vocab = Vocabulary::build(ctx.corpus);
    ctx.seq_len = max_len_for(ctx.corpus, config.resolved_length_slack());
  }
  for (const auto& line : ctx.corpus) {
    if (line.size() > ctx.seq_len) continue;
    if (!std::all_of(line.begin(), line.end(), [&](char c) { return ctx.vocab.contains(c) && c != kPadChar; })) continue;
    ctx.encoded.push_back(ctx.vocab.encode(line, ctx.seq_len));
  }
  if (ctx.encoded.empty()) throw ConfigError("no corpus line fits the model vocabulary and length");

  if (ctx.task == Task::Molecules) {
    auto molecules = chem::parse_valid(ctx.corpus);
    if (molecules.size() >= chem::kMinFragmentCorpus) {
      ctx.fragments = std::make_shared<const chem::FragmentTable>(chem::FragmentTable::build(molecules));
    }
    const std::size_t n = std::min(config.diversity_reference, molecules.size());
    for (std::size_t i = 0; i < n; ++i) ctx.reference.push_back(chem::fingerprint(molecules[i]));
    ctx.report_objectives = {"druglikeness"};
    if (ctx.fragments) ctx.report_objectives.push_back("synthesizability");
    ctx.report_objectives.push_back("solubility");
  } else {
    ctx.report_objectives = kMusicObjectives;
  }
  ctx.registry = ObjectiveRegistry::standard(ctx.fragments);
  for (const auto& name : config.objectives) {
    if (name == "synthesizability" && !ctx.fragments) {
      throw ConfigError("synthesizability needs at least " + std::to_string(chem::kMinFragmentCorpus) +
                        " valid corpus molecules");
    }
  }
  return ctx;
}

}  // namespace

TaskContext TaskContext::from_config(const TrainConfig& config) { return load_context(config, std::nullopt); }

TaskContext TaskContext::from_config(const TrainConfig& config, Vocabulary vocab, std::size_t seq_len) {
  return load_context(config, std::make_pair(std::move(vocab), seq_len));
}

// ---- Model -------------------------------------------------------------------

Model::Model(TrainConfig config_in, Vocabulary vocab_in, std::size_t seq_len_in, PolicyNet generator_in,
             CriticNet critic_in, nn::Adam critic_opt_in)
    : config(std::move(config_in)),
      vocab(std::move(vocab_in)),
      seq_len(seq_len_in),
      generator(std::move(generator_in)),
      critic(std::move(critic_in)),
      critic_opt(std::move(critic_opt_in)) {}

Model Model::create(const TrainConfig& config, const Vocabulary& vocab, std::size_t seq_len) {
  const Rng root(config.seed);
  PolicyConfig pc;
  pc.vocab_size = vocab.size();
  pc.seq_len = seq_len;
  pc.embed_dim = config.embed_dim;
  pc.hidden_dim = config.hidden_dim;
  Rng gen_rng = root.split(kInitGenerator);
  PolicyNet generator(pc, gen_rng);

  CriticConfig cc;
  cc.vocab_size = vocab.size();
  cc.seq_len = seq_len;
  cc.mode = config.mode;
  cc.clip = config.clip;
  Rng critic_rng = root.split(kInitCritic);
  CriticNet critic(cc, critic_rng);
  nn::Adam opt(critic.params(), {.learning_rate = config.disc_learning_rate});
  return Model(config, vocab, seq_len, std::move(generator), std::move(critic), std::move(opt));
}

std::string Model::serialize() const {
  nn::Checkpoint ck;
  ck.set_meta("format", "organ-model");
  // output locations are per-run, so reruns elsewhere produce identical bytes
  TrainConfig stored = config;
  stored.checkpoint_path = TrainConfig{}.checkpoint_path;
  stored.metrics_path = TrainConfig{}.metrics_path;
  ck.set_meta("config", stored.to_text());
  ck.set_meta("vocab", vocab.to_text());
  ck.set_meta("seq_len", std::to_string(seq_len));
  ck.set_meta("stage", stage);
  ck.set_meta("epochs_done", std::to_string(epochs_done));
  ck.put_params("generator", generator.params());
  ck.put_params("critic", critic.params());
  ck.put_adam("critic_adam", critic.params(), critic_opt);
  return ck.serialize();
}

void Model::save(const std::string& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("short write to '" + path + "'");
}

Model Model::deserialize(std::string_view bytes) {
  const auto ck = nn::Checkpoint::deserialize(bytes);
  if (!ck.has_meta("format") || ck.meta("format") != "organ-model") throw FileError("not an organ model checkpoint");
  const auto config = TrainConfig::parse(ck.meta("config"));
  const auto vocab = Vocabulary::from_text(ck.meta("vocab"));
  Model m = create(config, vocab, std::stoull(ck.meta("seq_len")));
  ck.get_params("generator", m.generator.params());
  ck.get_params("critic", m.critic.params());
  ck.get_adam("critic_adam", m.critic.params(), m.critic_opt);
  m.stage = ck.meta("stage");
  m.epochs_done = std::stoull(ck.meta("epochs_done"));
  return m;
}

Model Model::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open checkpoint '" + path + "'");
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return deserialize(bytes.str());
}

void Model::use_config(const TrainConfig& next) {
  if (next.task != config.task || next.embed_dim != config.embed_dim || next.hidden_dim != config.hidden_dim ||
      next.mode != config.mode) {
    throw ConfigError("task, embed_dim, hidden_dim and mode must match the checkpoint");
  }
  config = next;
  critic_opt.set_learning_rate(next.disc_learning_rate);
}

// ---- training ----------------------------------------------------------------

PretrainLog pretrain(Model& model, const TaskContext& ctx) {
  const auto& config = model.config;
  config.validate();
  PretrainLog log;
  const Rng root(config.seed);
  const std::size_t n = ctx.encoded.size(), bs = config.batch_size;

  nn::Adam gen_opt(model.generator.params(), {.learning_rate = config.gen_learning_rate});
  Rng shuffle = root.split(kMleShuffle);
  for (std::size_t epoch = 0; epoch < config.pretrain_gen_epochs; ++epoch) {
    const auto order = permutation(n, shuffle);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t count = std::min(bs, n - start);
      const auto batch = gather(ctx.encoded, std::span(order).subspan(start, count));
      const double loss = model.generator.mle_step(batch, gen_opt);
      check_finite(model, loss, "MLE loss", batch);
      total += loss * static_cast<double>(count);
    }
    log.mle_loss.push_back(total / static_cast<double>(n));
  }

  Rng disc_rng = root.split(kDiscPretrain);
  Rng dropout = root.split(kDiscDropout);
  for (std::size_t epoch = 0; epoch < config.pretrain_disc_epochs; ++epoch) {
    const auto order = permutation(n, disc_rng);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t count = std::min(bs, n - start);
      const auto real = gather(ctx.encoded, std::span(order).subspan(start, count));
      const auto fake = model.generator.sample_batch(count, disc_rng);
      const double loss = critic_step(model, real, fake, dropout);
      check_finite(model, loss, "critic loss", fake);
      total += loss * static_cast<double>(count);
    }
    log.disc_loss.push_back(total / static_cast<double>(n));
  }
  model.stage = "pretrained";
  model.epochs_done = 0;
  return log;
}

RewardPipeline make_generator_reward(const TrainConfig& config, const TaskContext& ctx, CriticNet& critic,
                                     std::size_t objective_index) {
  const auto spec = config.reward_spec();
  RewardPipeline::BatchScorer critic_fn;
  RewardPipeline::BatchScorer objective_fn;
  if (spec.lambda > 0.0) critic_fn = [&critic](const Batch& b) { return critic.reward(b); };
  if (spec.lambda < 1.0) {
    const Objective& objective = ctx.registry.get(spec.objectives.at(objective_index));
    objective_fn = [&objective, &ctx, invalid = spec.invalid_reward](const Batch& b) {
      return evaluate_objective(objective, b, ctx.vocab, invalid);
    };
  }
  return RewardPipeline(spec, std::move(critic_fn), std::move(objective_fn));
}

std::vector<MetricReport> train_adversarial(Model& model, const TaskContext& ctx, const TrainHooks& hooks) {
  const auto& config = model.config;
  config.validate();
  config.validate_reward();
  const auto spec = config.reward_spec();
  const Rng adversarial = Rng(config.seed).split(kAdversarial);
  nn::Adam pg_opt(model.generator.params(), {.learning_rate = config.pg_learning_rate});
  Rng dropout = Rng(config.seed).split(kDiscDropout).split(1);
  std::vector<MetricReport> reports;

  for (std::size_t epoch = 1; epoch <= config.adversarial_epochs; ++epoch) {
    const Rng epoch_rng = adversarial.split(epoch);
    Rng g_rng = epoch_rng.split(1);
    Rng d_rng = epoch_rng.split(2);
    const std::size_t objective_index = objective_for_epoch(spec, epoch - 1);

    for (std::size_t g = 0; g < config.g_steps; ++g) {
      auto reward = make_generator_reward(config, ctx, model.critic, objective_index);
      const auto batch = model.generator.sample_batch(config.batch_size, g_rng);
      const auto q = model.generator.q_values(batch, config.rollout_n, reward.as_reward_fn(), g_rng);
      double q_mean = 0.0;
      for (const auto& row : q) {
        for (double v : row) {
          if (!std::isfinite(v)) numeric_failure(model, "rollout reward is not finite", batch, &q);
          q_mean += v;
        }
      }
      q_mean /= static_cast<double>(batch.size() * model.seq_len);
      const double baseline = config.pg_baseline == Baseline::Mean ? q_mean : 0.0;
      const double norm = model.generator.policy_gradient_step(batch, q, pg_opt, baseline);
      if (!std::isfinite(norm)) numeric_failure(model, "policy gradient is not finite", batch, &q);
      if (hooks.after_generator_step) hooks.after_generator_step(reward);
    }

    std::vector<double> d_losses;
    for (std::size_t d = 0; d < config.resolved_d_steps(); ++d) {
      std::vector<std::size_t> rows(config.batch_size);
      for (auto& r : rows) r = d_rng.uniform_index(ctx.encoded.size());
      const auto real = gather(ctx.encoded, rows);
      const auto fake = model.generator.sample_batch(config.batch_size, d_rng);
      const double loss = critic_step(model, real, fake, dropout);
      check_finite(model, loss, "critic loss", fake);
      d_losses.push_back(loss);
      if (hooks.after_critic_step) hooks.after_critic_step(model.critic);
    }

    auto report = evaluate(model, ctx, config.eval_samples, config.seed);
    report.epoch = epoch;
    report.d_loss = mean_of(d_losses);
    model.stage = "adversarial";
    model.epochs_done = epoch;
    if (hooks.on_epoch) hooks.on_epoch(report);
    reports.push_back(std::move(report));
    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && !config.checkpoint_path.empty()) {
      model.save(config.checkpoint_path);
    }
  }
  return reports;
}

std::vector<std::string> sample(const Model& model, std::size_t count, std::uint64_t seed) {
  Rng rng = Rng(seed).split(kEvaluation);
  const auto batch = model.generator.sample_batch(count, rng);
  std::vector<std::string> out;
  out.reserve(count);
  for (const auto& seq : batch) out.push_back(model.vocab.decode(seq));
  return out;
}

MetricReport evaluate_strings(const std::vector<std::string>& samples, const TaskContext& ctx) {
  MetricReport report;
  const std::size_t n = samples.size();
  report.sample_count = n;
  if (n == 0) {
    for (const auto& name : ctx.report_objectives) report.objectives.emplace_back(name, 0.0);
    return report;
  }
  double total_len = 0.0;
  for (const auto& s : samples) total_len += static_cast<double>(s.size());
  report.mean_len = total_len / static_cast<double>(n);
  std::map<std::string, std::size_t> copies;
  for (const auto& s : samples) ++copies[s];
  std::size_t repeated = 0;
  for (const auto& s : samples) repeated += copies[s] > 1 ? 1 : 0;
  report.dup_frac = static_cast<double>(repeated) / static_cast<double>(n);

  std::vector<std::size_t> valid;
  if (ctx.task == Task::Molecules) {
    std::vector<chem::Molecule> molecules;
    for (std::size_t i = 0; i < n; ++i) {
      auto parsed = chem::parse_smiles(samples[i]);
      if (!parsed) continue;
      valid.push_back(i);
      molecules.push_back(std::move(*parsed.molecule));
    }
    if (!molecules.empty() && !ctx.reference.empty()) {
      double total = 0.0;
      for (const auto& m : molecules) total += chem::diversity(chem::fingerprint(m), ctx.reference);
      report.diversity = total / static_cast<double>(molecules.size());
    }
  } else {
    std::vector<music::Melody> melodies;
    for (std::size_t i = 0; i < n; ++i) {
      if (samples[i].empty()) continue;
      try {
        melodies.push_back(music::melody_from_text(samples[i]));
        valid.push_back(i);
      } catch (const EncodingError&) {
      }
    }
    if (melodies.size() >= 2) report.diversity = music::edit_diversity(melodies);
  }
  report.validity = static_cast<double>(valid.size()) / static_cast<double>(n);

  for (const auto& name : ctx.report_objectives) {
    const auto& objective = ctx.registry.get(name);
    double total = 0.0;
    for (std::size_t i : valid) total += std::clamp(objective.score(samples[i]).value_or(0.0), 0.0, 1.0);
    report.objectives.emplace_back(name, valid.empty() ? 0.0 : total / static_cast<double>(valid.size()));
  }
  return report;
}

MetricReport evaluate(Model& model, const TaskContext& ctx, std::size_t sample_count, std::uint64_t seed) {
  Rng rng = Rng(seed).split(kEvaluation);
  const auto batch = model.generator.sample_batch(sample_count, rng);
  std::vector<std::string> decoded;
  decoded.reserve(batch.size());
  for (const auto& seq : batch) decoded.push_back(model.vocab.decode(seq));
  auto report = evaluate_strings(decoded, ctx);

  const auto real = nll_rows(ctx);
  report.nll = model.generator.mean_nll(real);
  const std::size_t k = std::min(real.size(), batch.size());
  if (k > 0) {
    const Batch real_k(real.begin(), real.begin() + static_cast<std::ptrdiff_t>(k));
    const Batch fake_k(batch.begin(), batch.begin() + static_cast<std::ptrdiff_t>(k));
    report.d_loss = critic_loss(model.critic, real_k, fake_k);
  }
  report.epoch = model.epochs_done;
  return report;
}

std::vector<SweepResult> lambda_sweep(const Model& start, const TaskContext& ctx, const std::vector<double>& lambdas) {
  if (lambdas.size() < 2) throw ParameterError("lambda_sweep needs at least two lambda values");
  const auto bytes = start.serialize();
  std::vector<SweepResult> out;
  for (double lambda : lambdas) {
    Model m = Model::deserialize(bytes);
    auto config = start.config;
    config.lambda = lambda;
    config.checkpoint_every = 0;
    m.use_config(config);
    out.push_back({lambda, train_adversarial(m, ctx)});
  }
  return out;
}

// ---- plot data ---------------------------------------------------------------

std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> plot_series(std::string_view csv) {
  std::istringstream in{std::string(csv)};
  std::string line;
  std::size_t number = 0;
  std::vector<std::string> header;
  std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>> series;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream row(line);
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (header.empty()) {
      if (cells.empty() || cells.front() != "epoch") throw ParseError("metrics log must start with an epoch column", number);
      header = cells;
      for (std::size_t c = 1; c < header.size(); ++c) series.push_back({header[c], {}});
      continue;
    }
    if (cells.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()),
                       number);
    }
    std::vector<double> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto& s = cells[c];
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), values[c]);
      if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError("column '" + header[c] + "' is not numeric: '" + s + "'", number);
      }
    }
    for (std::size_t c = 1; c < cells.size(); ++c) series[c - 1].second.emplace_back(values[0], values[c]);
  }
  if (header.empty()) throw ParseError("metrics log is empty", number == 0 ? 1 : number);
  return series;
}

std::vector<std::string> emit_plot_data(const std::string& csv_path, const std::string& dir) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw FileError("cannot open metrics log '" + csv_path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  const auto series = plot_series(text.str());
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FileError("cannot create '" + dir + "': " + ec.message());
  std::vector<std::string> paths;
  for (const auto& [name, points] : series) {
    const auto path = (std::filesystem::path(dir) / (name + ".tsv")).string();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot write '" + path + "'");
    out << "epoch\t" << name << '\n';
    for (const auto& [x, y] : points) out << format_number(x) << '\t' << format_number(y) << '\n';
    paths.push_back(path);
  }
  return paths;
}

}  // namespace organ
