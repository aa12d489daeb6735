// Acceptance suite: one PASS/FAIL line per criterion. Run with criterion
// numbers as arguments to select a subset; exits non-zero if any selected
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "mol_fuzz.hpp"
#include "organ/discriminator.hpp"
#include "organ/errors.hpp"
#include "organ/generator.hpp"
#include "organ/molmetrics.hpp"
#include "organ/musicmetrics.hpp"
#include "organ/reward.hpp"
#include "organ/smiles.hpp"
#include "organ/trainer.hpp"
#include "scratch_dir.hpp"
#include "stats.hpp"

using namespace organ;
using organ::testing::ScratchDir;

namespace {

// ---- pinned tolerances ---------------------------------------------------------
constexpr double kGradTolerance = 1e-6;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kGradInstances = 100;
constexpr double kPolicyGradTolerance = 0.02;
constexpr std::size_t kPolicyGradSamples = 100000;
constexpr double kPolicyGradSeconds = 120.0;
constexpr std::size_t kBoundaryCases = 1000;
constexpr std::size_t kWganSteps = 200;
constexpr double kWganClip = 0.01;
constexpr double kCuratedAgreement = 1.0;
constexpr double kExhaustiveAgreement = 0.99;
constexpr std::size_t kFuzzMolecules = 10000;
constexpr double kQedSpearman = 0.7;
constexpr std::size_t kOraclePairs = 100;
constexpr std::size_t kTranspositionCases = 1000;
constexpr double kRunMinutes = 30.0;
constexpr double kNllTarget = 0.01;
constexpr std::size_t kNllEpochs = 200;

const std::string kRoot = ORGAN_SOURCE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::string write_lines(const ScratchDir& dir, const std::string& name, const std::vector<std::string>& lines) {
  const auto path = dir.file(name);
  std::ofstream out(path);
  for (const auto& l : lines) out << l << '\n';
  return path;
}

std::vector<std::string> corpus_head(const std::string& file, std::size_t n) {
  auto lines = read_corpus(kRoot + "/data/" + file);
  if (lines.size() > n) lines.resize(n);
  return lines;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nn::Tensor random_tensor(Rng& rng, nn::Shape shape, double scale = 1.0) {
  nn::Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * (2.0 * rng.uniform() - 1.0);
  return t;
}

// Scalar projection of a node onto fixed random weights.
nn::Var project(nn::Tape& t, nn::Var x, const nn::Tensor& weights) { return t.sum(t.mul(x, t.constant(weights))); }

// ---- 1: gradients ------------------------------------------------------------

Outcome gradient_correctness() {
  const auto start = Clock::now();
  std::map<std::string, double> worst;
  std::size_t entries = 0;
  auto record = [&](const std::string& kernel, const testing::GradCheck& r) {
    worst[kernel] = std::max(worst[kernel], r.max_rel_error);
    entries += r.checked;
  };

  for (std::size_t i = 0; i < kGradInstances; ++i) {
    Rng rng(1000 + i);
    const std::size_t rows = 1 + rng.uniform_index(3), in = 1 + rng.uniform_index(4), out = 1 + rng.uniform_index(4);

    {  // affine
      nn::ParameterSet ps;
      auto& x = ps.add("x", {rows, in}, false);
      auto& w = ps.add("w", {out, in}, true);
      auto& b = ps.add("b", {out}, false);
      ps.init_uniform(rng, 1.0);
      const auto proj = random_tensor(rng, {rows, out});
      record("affine", testing::check_gradients(ps, [&](nn::Tape& t) { return project(t, t.affine(t.param(x), w, &b), proj); }));
    }
    {  // embedding
      nn::ParameterSet ps;
      const std::size_t vocab = 2 + rng.uniform_index(4);
      auto& table = ps.add("table", {vocab, in}, false);
      ps.init_uniform(rng, 1.0);
      std::vector<int> ids(rows + 2);
      for (auto& id : ids) id = static_cast<int>(rng.uniform_index(vocab));
      const auto proj = random_tensor(rng, {ids.size(), in});
      record("embedding", testing::check_gradients(ps, [&](nn::Tape& t) { return project(t, t.embedding(table, ids), proj); }));
    }
    {  // recurrent step
      const std::size_t hidden = 1 + rng.uniform_index(4);
      nn::ParameterSet ps;
      auto& x = ps.add("x", {rows, in}, false);
      auto& h = ps.add("h", {rows, hidden}, false);
      auto& c = ps.add("c", {rows, hidden}, false);
      auto& wx = ps.add("wx", {4 * hidden, in}, true);
      auto& wh = ps.add("wh", {4 * hidden, hidden}, true);
      auto& b = ps.add("b", {4 * hidden}, false);
      ps.init_uniform(rng, 0.8);
      const auto ph = random_tensor(rng, {rows, hidden});
      const auto pc = random_tensor(rng, {rows, hidden});
      record("lstm_step", testing::check_gradients(ps, [&](nn::Tape& t) {
               auto s = t.lstm_step(t.param(x), {t.param(h), t.param(c)}, {wx, wh, b});
               return t.add(project(t, s.hidden, ph), project(t, s.cell, pc));
             }));
    }
    {  // convolution + max-over-time pooling
      const std::size_t len = 2 + rng.uniform_index(5), emb = 1 + rng.uniform_index(3);
      const std::size_t width = 1 + rng.uniform_index(len), filters = 1 + rng.uniform_index(3);
      nn::ParameterSet ps;
      auto& x = ps.add("x", {rows, len * emb}, false);
      auto& f = ps.add("f", {filters, width * emb}, true);
      auto& b = ps.add("b", {filters}, false);
      ps.init_uniform(rng, 1.0);
      const auto act = i % 2 == 0 ? nn::Activation::Tanh : nn::Activation::Identity;
      const auto proj = random_tensor(rng, {rows, filters});
      record("conv_maxpool", testing::check_gradients(ps, [&](nn::Tape& t) {
               return project(t, t.conv_maxpool(t.param(x), len, f, b, width, act), proj);
             }));
    }
    {  // softmax cross-entropy
      nn::ParameterSet ps;
      const std::size_t classes = 2 + rng.uniform_index(4);
      auto& logits = ps.add("logits", {rows, classes}, false);
      ps.init_uniform(rng, 2.0);
      std::vector<int> targets(rows);
      std::vector<double> weights(rows);
      for (auto& t : targets) t = static_cast<int>(rng.uniform_index(classes));
      for (auto& w : weights) w = 2.0 * rng.uniform() - 0.5;
      record("softmax_xent", testing::check_gradients(ps, [&](nn::Tape& t) {
               return t.softmax_xent(t.param(logits), targets, weights);
             }));
    }
    {  // binary cross-entropy on logits
      nn::ParameterSet ps;
      auto& logits = ps.add("logits", {rows, 1}, false);
      ps.init_uniform(rng, 3.0);
      std::vector<double> labels(rows), weights(rows);
      for (auto& l : labels) l = rng.bernoulli(0.5) ? 1.0 : 0.0;
      for (auto& w : weights) w = rng.uniform();
      record("bce_logits", testing::check_gradients(ps, [&](nn::Tape& t) {
               return t.bce_logits(t.param(logits), labels, weights);
             }));
    }
    {  // L2 term
      nn::ParameterSet ps;
      auto& a = ps.add("a", {rows, in}, true);
      auto& b = ps.add("b", {out}, true);
      ps.init_uniform(rng, 1.0);
      nn::Parameter* list[] = {&a, &b};
      const double coefficient = 0.01 + rng.uniform();
      record("l2_penalty", testing::check_gradients(ps, [&](nn::Tape& t) { return t.l2_penalty(list, coefficient); }));
    }
  }
  const double elapsed = seconds_since(start);
  double overall = 0.0;
  std::string detail;
  for (const auto& [kernel, err] : worst) {
    overall = std::max(overall, err);
    detail += kernel + "=" + fmt(err, 2) + " ";
  }
  detail += "| " + std::to_string(kGradInstances) + " instances per kernel, " + std::to_string(entries) +
            " entries, " + fmt(elapsed, 3) + " s (max rel err < 1e-6, < 60 s)";
  return {overall < kGradTolerance && elapsed < kGradSeconds && worst.size() == 7, detail};
}

// ---- 2: policy-gradient oracle -------------------------------------------------

Outcome policy_gradient_oracle() {
  const auto start = Clock::now();
  Rng init(42);
  PolicyConfig cfg;
  cfg.vocab_size = 2;
  cfg.seq_len = 2;
  cfg.embed_dim = 3;
  cfg.hidden_dim = 4;
  cfg.init_scale = 1.0;
  PolicyNet policy(cfg, init);
  const double table[2][2] = {{0.1, 0.9}, {0.7, 0.2}};
  const RewardFn reward = [&](const Batch& b) {
    std::vector<double> r;
    for (const auto& s : b) r.push_back(table[s[0]][s[1]]);
    return r;
  };

  std::vector<double> exact;
  constexpr double h = 1e-6;
  for (auto& p : policy.params()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      const double up = policy.expected_reward_exact(reward);
      p.value[i] = saved - h;
      const double down = policy.expected_reward_exact(reward);
      p.value[i] = saved;
      // the estimator averages over T steps, so it targets dJ/dtheta / T
      exact.push_back((up - down) / (2.0 * h) / static_cast<double>(cfg.seq_len));
    }
  }

  Rng rng(7);
  const auto batch = policy.sample_batch(kPolicyGradSamples, rng);
  const auto q = policy.q_values(batch, 4, reward, rng);
  policy.policy_gradient(batch, q);
  std::vector<double> estimate;
  for (const auto& p : policy.params()) estimate.insert(estimate.end(), p.grad.data().begin(), p.grad.data().end());

  double diff = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    diff += (estimate[i] - exact[i]) * (estimate[i] - exact[i]);
    norm += exact[i] * exact[i];
  }
  const double rel = std::sqrt(diff / norm);
  const double elapsed = seconds_since(start);
  return {rel < kPolicyGradTolerance && elapsed < kPolicyGradSeconds,
          "relative L2 error " + fmt(rel, 3) + " over " + std::to_string(exact.size()) + " parameters, " +
              std::to_string(kPolicyGradSamples) + " samples, " + fmt(elapsed, 3) + " s (< 0.02, < 120 s)"};
}

// ---- 3: boundary of the rollout estimate ---------------------------------------

Outcome rollout_boundary() {
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < kBoundaryCases; ++i) {
    Rng rng(5000 + i);
    PolicyConfig cfg;
    cfg.vocab_size = 2 + rng.uniform_index(6);
    cfg.seq_len = 1 + rng.uniform_index(6);
    cfg.embed_dim = 3;
    cfg.hidden_dim = 4;
    PolicyNet policy(cfg, rng);
    const double salt = rng.uniform();
    const RewardFn reward = [salt](const Batch& b) {
      std::vector<double> r;
      for (const auto& s : b) {
        double v = salt;
        for (int tok : s) v = std::fmod(v * 7.31 + 0.137 * tok, 1.0);
        r.push_back(v);
      }
      return r;
    };
    const auto batch = policy.sample_batch(3, rng);
    const double q = policy.q_value(batch[0], 1 + rng.uniform_index(4), reward, rng);
    const double direct = reward({batch[0]})[0];
    if (std::memcmp(&q, &direct, sizeof q) != 0) ++mismatches;
    const auto table = policy.q_values(batch, 2, reward, rng);
    const auto rewards = reward(batch);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (std::memcmp(&table[b].back(), &rewards[b], sizeof(double)) != 0) ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(kBoundaryCases) + " cases (q_value and q_values last step), " +
                               std::to_string(mismatches) + " bitwise mismatches"};
}

// ---- shared small training setup -----------------------------------------------

TrainConfig small_config(const std::string& corpus, Task task = Task::Molecules) {
  TrainConfig c;
  c.corpus = corpus;
  c.task = task;
  c.embed_dim = 8;
  c.hidden_dim = 16;
  c.batch_size = 16;
  c.rollout_n = 4;
  c.pretrain_gen_epochs = 5;
  c.pretrain_disc_epochs = 1;
  c.adversarial_epochs = 2;
  c.eval_samples = 100;
  c.diversity_reference = 50;
  c.objectives = task == Task::Molecules ? std::vector<std::string>{"solubility"}
                                         : std::vector<std::string>{"ratio_of_steps"};
  c.seed = 11;
  return c;
}

// ---- 4: lambda endpoints -------------------------------------------------------

Outcome lambda_endpoints() {
  ScratchDir dir;
  TrainConfig c = small_config(write_lines(dir, "mol.smi", corpus_head("molecules.smi", 200)));
  c.uniqueness_penalty = false;
  const auto ctx = TaskContext::from_config(c);
  Model model = Model::create(c, ctx.vocab, ctx.seq_len);
  pretrain(model, ctx);
  Rng rng(3);
  std::size_t mismatches = 0, batches = 0;
  std::size_t seqgan_objective_calls = 0, naive_critic_calls = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto batch = model.generator.sample_batch(32, rng);
    c.lambda = 1.0;
    auto seqgan = make_generator_reward(c, ctx, model.critic, 0);
    if (!bitwise_equal(seqgan(batch), model.critic.reward(batch))) ++mismatches;
    seqgan_objective_calls += seqgan.objective_calls();
    c.lambda = 0.0;
    auto naive = make_generator_reward(c, ctx, model.critic, 0);
    const auto expected = evaluate_objective(ctx.registry.get("solubility"), batch, ctx.vocab, c.invalid_reward);
    if (!bitwise_equal(naive(batch), expected)) ++mismatches;
    naive_critic_calls += naive.critic_calls();
    batches += 2;
  }

  // the same instrumentation through full adversarial epochs
  std::size_t train_violations = 0;
  for (double lambda : {0.0, 1.0}) {
    c.lambda = lambda;
    Model m = Model::create(c, ctx.vocab, ctx.seq_len);
    pretrain(m, ctx);
    m.use_config(c);
    TrainHooks hooks;
    hooks.after_generator_step = [&](const RewardPipeline& r) {
      if (lambda == 0.0 && r.critic_calls() != 0) ++train_violations;
      if (lambda == 1.0 && r.objective_calls() != 0) ++train_violations;
    };
    train_adversarial(m, ctx, hooks);
  }
  const bool ok = mismatches == 0 && seqgan_objective_calls == 0 && naive_critic_calls == 0 && train_violations == 0;
  return {ok, std::to_string(batches) + " batches, " + std::to_string(mismatches) +
                  " bitwise mismatches; objective calls at lambda=1: " + std::to_string(seqgan_objective_calls) +
                  ", critic calls at lambda=0: " + std::to_string(naive_critic_calls) +
                  ", training-path violations: " + std::to_string(train_violations)};
}

// ---- 5: uniqueness penalty -----------------------------------------------------

TrainConfig ablation_config(const std::string& corpus, std::uint64_t seed, bool penalty) {
  TrainConfig c = small_config(corpus);
  c.lambda = 0.0;
  c.objectives = {"solubility"};
  c.uniqueness_penalty = penalty;
  c.hidden_dim = 32;
  c.embed_dim = 16;
  c.batch_size = 32;
  c.rollout_n = 4;
  c.pretrain_gen_epochs = 60;
  c.pretrain_disc_epochs = 1;
  c.adversarial_epochs = 15;
  c.pg_learning_rate = 1e-2;
  c.eval_samples = 500;
  c.seed = seed;
  return c;
}

Outcome uniqueness_penalty() {
  std::size_t exact = 0;
  const TokenSequence repeated = {3, 1, 4, 1, 5};
  for (std::size_t k : {2, 3, 5}) {
    Batch batch(k, repeated);
    batch.push_back({2, 7, 1, 8, 2});
    batch.push_back({1, 6, 1, 8, 0});
    const double base = 0.87;
    std::vector<double> rewards(batch.size(), base);
    rewards[k] = 0.4;
    rewards[k + 1] = 0.6;
    const auto out = apply_uniqueness_penalty(rewards, batch);
    bool ok = out[k] == 0.4 && out[k + 1] == 0.6;
    for (std::size_t i = 0; i < k; ++i) ok = ok && out[i] == base / static_cast<double>(k);

    // and through the reward pipeline used by the generator
    RewardSpec spec;
    spec.lambda = 0.0;
    spec.objectives = {"constant"};
    RewardPipeline pipeline(spec, nullptr, [&](const Batch& b) {
      std::vector<double> r(b.size(), base);
      r[k] = 0.4;
      r[k + 1] = 0.6;
      return r;
    });
    const auto piped = pipeline(batch);
    for (std::size_t i = 0; i < k; ++i) ok = ok && piped[i] == base / static_cast<double>(k);
    exact += ok ? 1 : 0;
  }

  ScratchDir dir;
  const auto corpus = write_lines(dir, "mol.smi", corpus_head("molecules.smi", 300));
  std::string seeds_detail;
  double with_total = 0.0, without_total = 0.0;
  std::size_t seeds_ok = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    double dup[2] = {0.0, 0.0};
    for (int penalty = 0; penalty < 2; ++penalty) {
      const auto c = ablation_config(corpus, seed, penalty == 1);
      const auto ctx = TaskContext::from_config(c);
      Model m = Model::create(c, ctx.vocab, ctx.seq_len);
      pretrain(m, ctx);
      dup[penalty] = train_adversarial(m, ctx).back().dup_frac;
    }
    with_total += dup[1];
    without_total += dup[0];
    seeds_ok += dup[1] <= dup[0] ? 1 : 0;
    seeds_detail += " seed" + std::to_string(seed) + " " + fmt(dup[1], 3) + " vs " + fmt(dup[0], 3) + ";";
  }
  const bool ok = exact == 3 && seeds_ok == 3;
  return {ok, "base/k exact for " + std::to_string(exact) + "/3 of k={2,3,5}; final dup_frac with vs without penalty:" +
                  seeds_detail + " mean " + fmt(with_total / 3, 3) + " vs " + fmt(without_total / 3, 3) + "; " +
                  std::to_string(seeds_ok) + "/3 seeds with <= without"};
}

// ---- 6: wasserstein clipping ---------------------------------------------------

Outcome wasserstein_clipping() {
  ScratchDir dir;
  TrainConfig c = small_config(write_lines(dir, "mol.smi", corpus_head("molecules.smi", 200)));
  c.mode = CriticMode::Wasserstein;
  c.clip = kWganClip;
  c.d_steps = 5;
  c.adversarial_epochs = kWganSteps / 5;
  c.eval_samples = 20;
  const auto ctx = TaskContext::from_config(c);
  Model m = Model::create(c, ctx.vocab, ctx.seq_len);
  pretrain(m, ctx);
  std::size_t steps = 0, violations = 0;
  double worst = 0.0;
  TrainHooks hooks;
  hooks.after_critic_step = [&](const CriticNet& critic) {
    ++steps;
    const double w = critic.params().max_abs();
    worst = std::max(worst, w);
    violations += w > kWganClip ? 1 : 0;
  };
  train_adversarial(m, ctx, hooks);
  return {steps == kWganSteps && violations == 0,
          std::to_string(steps) + " critic steps, " + std::to_string(violations) + " violations, max |w| " +
              fmt(worst, 3) + " (c = 0.01)"};
}

// ---- 7: parser -----------------------------------------------------------------

Outcome smiles_parser() {
  std::ifstream curated_in(kRoot + "/tests/fixtures/smiles_curated.tsv");
  std::string line;
  std::size_t curated = 0, curated_agree = 0;
  while (std::getline(curated_in, line)) {
    if (line.empty() || line.rfind("# smiles\t", 0) == 0) continue;
    std::istringstream fields(line);
    std::string smiles, flag, category;
    std::getline(fields, smiles, '\t');
    std::getline(fields, flag, '\t');
    std::getline(fields, category, '\t');
    const auto r = chem::parse_smiles(smiles);
    const bool valid = flag == "1";
    const bool same = r.ok() == valid && (valid || chem::error_category_name(r.error) == category);
    ++curated;
    curated_agree += same ? 1 : 0;
  }

  std::set<std::string> reference;
  std::ifstream ex_in(kRoot + "/tests/fixtures/smiles_exhaustive_valid.txt");
  while (std::getline(ex_in, line)) {
    if (!line.empty()) reference.insert(line);
  }
  const std::string alphabet = "CON=1()";
  std::size_t total = 0, agree = 0;
  std::string s;
  std::function<void(std::size_t)> walk = [&](std::size_t len) {
    if (s.size() == len) {
      ++total;
      agree += chem::is_valid_smiles(s) == (reference.count(s) > 0) ? 1 : 0;
      return;
    }
    for (char ch : alphabet) {
      s.push_back(ch);
      walk(len);
      s.pop_back();
    }
  };
  for (std::size_t len = 1; len <= 5; ++len) walk(len);

  const auto benzene = chem::parse_smiles("C1=CC=CC=C1");
  const bool ring6 = benzene && benzene.molecule->rings().size() == 1 && benzene.molecule->rings()[0].size() == 6;
  const double curated_rate = curated ? static_cast<double>(curated_agree) / static_cast<double>(curated) : 0.0;
  const double exhaustive_rate = static_cast<double>(agree) / static_cast<double>(total);
  return {curated == 200 && curated_rate >= kCuratedAgreement && exhaustive_rate >= kExhaustiveAgreement && ring6,
          "curated " + std::to_string(curated_agree) + "/" + std::to_string(curated) + ", exhaustive " +
              std::to_string(agree) + "/" + std::to_string(total) + " (" + fmt(100.0 * exhaustive_rate, 5) +
              "%, >= 99%), benzene one 6-ring: " + (ring6 ? "yes" : "no")};
}

// ---- 8: molecular metric ranges ------------------------------------------------

Outcome molecular_metrics() {
  const auto seeds = read_corpus(kRoot + "/data/molecules.smi");
  Rng rng(88);
  const auto fuzzed = testing::fuzz_valid_smiles(seeds, kFuzzMolecules, rng);
  auto train_lines = seeds;
  train_lines.resize(2000);
  const auto train = chem::parse_valid(train_lines);
  const auto table = chem::FragmentTable::build(train);
  std::vector<chem::Fingerprint> reference;
  for (std::size_t i = 0; i < 100; ++i) reference.push_back(chem::fingerprint(train[i]));
  std::size_t out_of_range = 0;
  for (const auto& smiles : fuzzed) {
    const auto m = *chem::parse_smiles(smiles).molecule;
    const double values[4] = {chem::solubility(m), chem::synthesizability(m, table), chem::druglikeness(m),
                              chem::diversity(chem::fingerprint(m), reference)};
    for (double v : values) out_of_range += (v >= 0.0 && v <= 1.0) ? 0 : 1;
  }

  // reference QED for the 100 corpus draws in rows 15..114 of the fixture
  std::ifstream in(kRoot + "/tests/fixtures/mol_reference.tsv");
  std::string line;
  std::vector<std::string> smiles;
  std::vector<double> qed;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream f(line);
    std::string s;
    double logp = 0.0, q = 0.0;
    f >> s >> logp >> q;
    smiles.push_back(s);
    qed.push_back(q);
  }
  std::vector<double> ours, ref;
  for (std::size_t i = 15; i < 115 && i < smiles.size(); ++i) {
    ours.push_back(chem::druglikeness(*chem::parse_smiles(smiles[i]).molecule));
    ref.push_back(qed[i]);
  }
  const double rho = testing::spearman(ours, ref);
  return {fuzzed.size() == kFuzzMolecules && out_of_range == 0 && ours.size() == 100 && rho >= kQedSpearman,
          std::to_string(fuzzed.size()) + " fuzzed molecules x 4 metrics, " + std::to_string(out_of_range) +
              " out of [0,1]; druglikeness vs reference QED Spearman " + fmt(rho, 3) + " on " +
              std::to_string(ours.size()) + " molecules (>= 0.7)"};
}

// ---- 9: music metrics ----------------------------------------------------------

double parse_fraction(const std::string& f) {
  const auto slash = f.find('/');
  return std::stod(f.substr(0, slash)) / std::stod(f.substr(slash + 1));
}

std::size_t dp_edit_distance(const music::Melody& a, const music::Melody& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
  }
  return d[a.size()][b.size()];
}

music::Melody random_melody(Rng& rng, std::size_t len) {
  music::Melody m(len);
  for (auto& t : m) t = static_cast<int>(rng.uniform_index(music::kLastToken + 1));
  return m;
}

Outcome music_metrics() {
  std::ifstream in(kRoot + "/tests/fixtures/music_cases.tsv");
  std::string line;
  std::size_t cases = 0, fixture_ok = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    const auto tokens = music::melody_from_text(cols[0]);
    ++cases;
    fixture_ok += (music::tonality(tokens) == parse_fraction(cols[2]) &&
                   music::ratio_of_steps(tokens) == parse_fraction(cols[3]))
                      ? 1
                      : 0;
  }

  Rng rng(23);
  std::size_t dp_ok = 0;
  for (std::size_t i = 0; i < kOraclePairs; ++i) {
    const auto a = random_melody(rng, rng.uniform_index(40));
    const auto b = random_melody(rng, rng.uniform_index(40));
    const std::vector<music::Melody> pair = {a, b};
    const double expected = a.empty() && b.empty()
                                ? 0.0
                                : static_cast<double>(dp_edit_distance(a, b)) /
                                      static_cast<double>(std::max(a.size(), b.size()));
    dp_ok += (music::levenshtein(a, b) == dp_edit_distance(a, b) && music::edit_diversity(pair) == expected) ? 1 : 0;
  }

  std::size_t invariant_ok = 0;
  for (std::size_t i = 0; i < kTranspositionCases; ++i) {
    const auto m = random_melody(rng, 36);
    int lo = 83, hi = 48;
    for (int p : music::to_note_events(m)) {
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    const int up = std::max(83 - hi, 0), down = std::max(lo - 48, 0);
    const int shift = rng.bernoulli(0.5) ? static_cast<int>(rng.uniform_index(static_cast<std::size_t>(up) + 1))
                                         : -static_cast<int>(rng.uniform_index(static_cast<std::size_t>(down) + 1));
    auto moved = m;
    for (auto& t : moved) {
      if (t >= music::kFirstNote) t += shift;
    }
    invariant_ok += (music::tonality(moved) == music::tonality(m) &&
                     music::ratio_of_steps(moved) == music::ratio_of_steps(m))
                        ? 1
                        : 0;
  }
  return {cases == 12 && fixture_ok == 12 && dp_ok == kOraclePairs && invariant_ok == kTranspositionCases,
          "fixture " + std::to_string(fixture_ok) + "/" + std::to_string(cases) + " exact, DP oracle " +
              std::to_string(dp_ok) + "/" + std::to_string(kOraclePairs) + " pairs exact, transposition " +
              std::to_string(invariant_ok) + "/" + std::to_string(kTranspositionCases)};
}

// ---- 10: directional training --------------------------------------------------

struct DirectionalRun {
  double before = 0.0;
  double after = 0.0;
  double minutes = 0.0;
};

DirectionalRun directional_run(const std::string& corpus, Task task, const std::string& objective,
                               std::uint64_t seed) {
  const auto start = Clock::now();
  TrainConfig c;
  c.corpus = corpus;
  c.task = task;
  c.objectives = {objective};
  c.lambda = 0.5;
  c.pretrain_gen_epochs = 100;
  c.pretrain_disc_epochs = 10;
  c.adversarial_epochs = 20;
  c.eval_samples = 1000;
  c.seed = seed;
  const auto ctx = TaskContext::from_config(c);
  Model m = Model::create(c, ctx.vocab, ctx.seq_len);
  pretrain(m, ctx);
  DirectionalRun run;
  run.before = evaluate(m, ctx, c.eval_samples, seed).objective(objective);
  train_adversarial(m, ctx);
  run.after = evaluate(m, ctx, c.eval_samples, seed).objective(objective);
  run.minutes = seconds_since(start) / 60.0;
  return run;
}

Outcome directional_training() {
  ScratchDir dir;
  const auto molecules = write_lines(dir, "mol.smi", corpus_head("molecules.smi", 500));
  const auto melodies = write_lines(dir, "mel.txt", corpus_head("melodies.txt", 200));
  std::string detail;
  bool ok = true;
  const std::pair<Task, std::string> setups[] = {{Task::Molecules, "solubility"}, {Task::Music, "ratio_of_steps"}};
  for (const auto& [task, objective] : setups) {
    std::size_t improved = 0;
    double slowest = 0.0;
    detail += objective + ":";
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto run = directional_run(task == Task::Molecules ? molecules : melodies, task, objective, seed);
      improved += run.after > run.before ? 1 : 0;
      slowest = std::max(slowest, run.minutes);
      detail += " " + fmt(run.before, 6) + "->" + fmt(run.after, 6);
    }
    detail += " (" + std::to_string(improved) + "/3 improved, slowest run " + fmt(slowest, 3) + " min); ";
    ok = ok && improved >= 2 && slowest < kRunMinutes;
  }
  return {ok, detail + "need >= 2/3 per task, < 30 min per run"};
}

// ---- 11: CLI reproducibility ---------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ORGAN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

Outcome cli_reproducibility() {
  ScratchDir dir;
  const auto corpus = write_lines(dir, "mol.smi", corpus_head("molecules.smi", 150));
  const std::string common = " --set corpus=" + corpus +
                             " --set hidden_dim=8 --set embed_dim=4 --set batch_size=16 --set rollout_n=2"
                             " --set pretrain_gen_epochs=3 --set pretrain_disc_epochs=1 --set adversarial_epochs=2"
                             " --set eval_samples=50 --objective solubility --seed 9";
  const auto a = dir.file("a"), b = dir.file("b");
  std::vector<std::string> failures;
  std::size_t compared = 0;
  auto same = [&](const std::string& x, const std::string& y) {
    ++compared;
    const auto bx = read_file(x), by = read_file(y);
    if (bx.empty() || bx != by) failures.push_back(x.substr(dir.path().string().size() + 1));
  };

  int rc = 0;
  rc |= run_cli("pretrain" + common + " --out " + a + "/pre");
  rc |= run_cli("pretrain --config " + a + "/pre/manifest.txt --out " + b + "/pre");
  same(a + "/pre/model.ckpt", b + "/pre/model.ckpt");
  same(a + "/pre/pretrain.csv", b + "/pre/pretrain.csv");

  rc |= run_cli("train" + common + " --checkpoint " + a + "/pre/model.ckpt --out " + a + "/train");
  rc |= run_cli("train --config " + a + "/train/manifest.txt --out " + b + "/train");
  same(a + "/train/model.ckpt", b + "/train/model.ckpt");
  same(a + "/train/metrics.csv", b + "/train/metrics.csv");

  rc |= run_cli("train" + common + " --out " + a + "/scratch");
  rc |= run_cli("train --config " + a + "/scratch/manifest.txt --out " + b + "/scratch");
  same(a + "/scratch/model.ckpt", b + "/scratch/model.ckpt");
  same(a + "/scratch/metrics.csv", b + "/scratch/metrics.csv");

  rc |= run_cli("sample --checkpoint " + a + "/train/model.ckpt --count 10 --seed 4 --out " + a + "/sample");
  rc |= run_cli("sample --checkpoint " + a + "/train/model.ckpt --count 10 --seed 4 --out " + b + "/sample");
  same(a + "/sample/samples.txt", b + "/sample/samples.txt");

  rc |= run_cli("eval --checkpoint " + a + "/train/model.ckpt --count 100 --seed 4 --out " + a + "/eval");
  rc |= run_cli("eval --checkpoint " + a + "/train/model.ckpt --count 100 --seed 4 --out " + b + "/eval");
  same(a + "/eval/metrics.csv", b + "/eval/metrics.csv");

  std::string detail = std::to_string(compared) + " artifact pairs compared across pretrain/train/sample/eval, " +
                       std::to_string(failures.size()) + " differ";
  for (const auto& f : failures) detail += " " + f;
  if (rc != 0) detail += "; a CLI run failed";
  return {rc == 0 && failures.empty(), detail};
}

// ---- 12: MLE overfit -----------------------------------------------------------

struct OverfitRun {
  double final_nll = 0.0;
  std::size_t first_below = 0;
};

OverfitRun overfit_single_sequence(const ScratchDir& dir, double learning_rate) {
  TrainConfig c;
  c.corpus = write_lines(dir, "one.smi", {"CC1=CC(=O)NC(N)=C1"});
  c.pretrain_gen_epochs = kNllEpochs;
  c.pretrain_disc_epochs = 0;
  c.gen_learning_rate = learning_rate;
  c.seed = 3;
  const auto ctx = TaskContext::from_config(c);
  Model m = Model::create(c, ctx.vocab, ctx.seq_len);
  const auto log = pretrain(m, ctx);
  OverfitRun run;
  // mle_loss[e] is measured before the step of epoch e + 1
  for (std::size_t e = 0; e < log.mle_loss.size() && run.first_below == 0; ++e) {
    if (log.mle_loss[e] < kNllTarget) run.first_below = e;
  }
  run.final_nll = m.generator.mean_nll(ctx.encoded);
  return run;
}

// One sequence gives one Adam step per epoch, so the check uses lr 1e-2;
// the default-rate figure is reported alongside.
Outcome mle_sanity() {
  ScratchDir dir;
  const auto fast = overfit_single_sequence(dir, 1e-2);
  const auto standard = overfit_single_sequence(dir, TrainConfig{}.gen_learning_rate);
  return {fast.final_nll < kNllTarget,
          "lr 1e-2: per-token NLL " + fmt(fast.final_nll, 3) + " after 200 epochs" +
              (fast.first_below > 0 ? " (first below 0.01 after epoch " + std::to_string(fast.first_below) + ")" : "") +
              "; default lr 1e-3 reaches " + fmt(standard.final_nll, 3) + " (target < 0.01 within 200, batch 1)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"policy-gradient oracle", policy_gradient_oracle},
      {"rollout boundary", rollout_boundary},
      {"lambda endpoints", lambda_endpoints},
      {"uniqueness penalty", uniqueness_penalty},
      {"wasserstein clipping", wasserstein_clipping},
      {"smiles parser", smiles_parser},
      {"molecular metrics", molecular_metrics},
      {"music metrics", music_metrics},
      {"directional training", directional_training},
      {"cli reproducibility", cli_reproducibility},
      {"mle sanity", mle_sanity},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));
  bool all_pass = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && selected.count(i + 1) == 0) continue;
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    all_pass = all_pass && outcome.pass;
    std::cout << "criterion " << std::setw(2) << i + 1 << " " << (outcome.pass ? "PASS" : "FAIL") << "  "
              << criteria[i].first << ": " << outcome.detail << std::endl;
  }
  return all_pass ? 0 : 1;
}
