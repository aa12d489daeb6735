// organ: pretrain, train, sample, eval, sweep and metrics verbs over one config.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "organ/errors.hpp"
#include "organ/molmetrics.hpp"
#include "organ/musicmetrics.hpp"
#include "organ/trainer.hpp"

namespace fs = std::filesystem;
using namespace organ;

namespace {

constexpr int kExitOther = 1;
constexpr int kExitUsage = 2;
constexpr int kExitFile = 3;
constexpr int kExitNumeric = 4;

constexpr const char* kVersion = "organ 0.1.0";

struct Options {
  std::string verb;
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::optional<std::size_t> count;
  std::vector<std::string> objectives;
  std::optional<double> lambda;
  std::string mode;
  std::string input;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw FileError("short write to '" + path.string() + "'");
}

fs::path out_dir(const Options& opt) {
  if (opt.out.empty()) throw ConfigError("--out is required for '" + opt.verb + "'");
  std::error_code ec;
  fs::create_directories(opt.out, ec);
  if (ec) throw FileError("cannot create '" + opt.out + "': " + ec.message());
  return opt.out;
}

TrainConfig build_config(const Options& opt) {
  TrainConfig config = opt.config_path.empty() ? TrainConfig{} : TrainConfig::load(opt.config_path);
  for (const auto& kv : opt.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opt.seed) config.seed = *opt.seed;
  if (opt.lambda) config.set("lambda", format_number(*opt.lambda));
  if (!opt.mode.empty()) config.set("mode", opt.mode);
  if (!opt.objectives.empty()) {
    std::string joined;
    for (const auto& o : opt.objectives) joined += (joined.empty() ? "" : ",") + o;
    config.set("objectives", joined);
  }
  if (!opt.checkpoint.empty()) config.init_checkpoint = opt.checkpoint;
  if (!opt.out.empty()) {
    config.checkpoint_path = (fs::path(opt.out) / "model.ckpt").string();
    config.metrics_path = (fs::path(opt.out) / "metrics.csv").string();
  }
  return config;
}

void write_manifest(const fs::path& dir, const std::string& verb, const TrainConfig& config) {
  write_file(dir / "manifest.txt", std::string("# ") + kVersion + "\n# verb = " + verb + "\n" + config.to_text());
}

Model load_checkpoint(const TrainConfig& config) {
  if (config.init_checkpoint.empty()) throw ConfigError("--checkpoint is required");
  Model model = Model::load(config.init_checkpoint);
  return model;
}

// Model for train/sweep: the given checkpoint, or a fresh pretraining run.
Model starting_model(const TrainConfig& config, TaskContext& ctx, const fs::path& dir) {
  if (!config.init_checkpoint.empty()) {
    Model model = Model::load(config.init_checkpoint);
    model.use_config(config);
    ctx = TaskContext::from_config(config, model.vocab, model.seq_len);
    return model;
  }
  ctx = TaskContext::from_config(config);
  Model model = Model::create(config, ctx.vocab, ctx.seq_len);
  write_file(dir / "pretrain.csv", pretrain(model, ctx).csv());
  return model;
}

void print_report(const MetricReport& report) {
  std::cout << "metric          value\n";
  std::cout << "samples         " << report.sample_count << "\n";
  std::cout << "validity        " << format_number(report.validity) << "\n";
  std::cout << "diversity       " << format_number(report.diversity) << "\n";
  for (const auto& [name, value] : report.objectives) {
    std::cout << name << std::string(name.size() < 16 ? 16 - name.size() : 1, ' ') << format_number(value) << "\n";
  }
  std::cout << "mean_len        " << format_number(report.mean_len) << "\n";
  std::cout << "dup_frac        " << format_number(report.dup_frac) << "\n";
  std::cout << "nll             " << format_number(report.nll) << "\n\n";
  std::cout << report.csv_header() << "\n" << report.csv_row() << "\n";
}

int run_pretrain(const Options& opt) {
  const auto config = build_config(opt);
  config.validate();
  const auto dir = out_dir(opt);
  write_manifest(dir, "pretrain", config);
  const auto ctx = TaskContext::from_config(config);
  Model model = Model::create(config, ctx.vocab, ctx.seq_len);
  const auto log = pretrain(model, ctx);
  write_file(dir / "pretrain.csv", log.csv());
  model.save(config.checkpoint_path);
  if (!log.mle_loss.empty()) std::cout << "final MLE loss " << format_number(log.mle_loss.back()) << "\n";
  return 0;
}

int run_train(const Options& opt) {
  const auto config = build_config(opt);
  config.validate();
  config.validate_reward();
  const auto dir = out_dir(opt);
  write_manifest(dir, "train", config);
  TaskContext ctx;
  Model model = starting_model(config, ctx, dir);
  TrainHooks hooks;
  hooks.on_epoch = [](const MetricReport& r) { std::cerr << "epoch " << r.epoch << " " << r.csv_row() << "\n"; };
  const auto reports = train_adversarial(model, ctx, hooks);
  write_file(config.metrics_path, metrics_csv(reports));
  model.save(config.checkpoint_path);
  emit_plot_data(config.metrics_path, (dir / "series").string());
  return 0;
}

int run_sweep(const Options& opt) {
  const auto config = build_config(opt);
  config.validate();
  const auto dir = out_dir(opt);
  write_manifest(dir, "sweep", config);
  TaskContext ctx;
  const Model start = starting_model(config, ctx, dir);
  const auto results = lambda_sweep(start, ctx, config.sweep_lambdas);
  std::string combined;
  for (const auto& result : results) {
    const auto tag = "lambda_" + format_number(result.lambda);
    const auto csv = metrics_csv(result.reports);
    write_file(dir / (tag + ".csv"), csv);
    emit_plot_data((dir / (tag + ".csv")).string(), (dir / "series" / tag).string());
    std::istringstream lines(csv);
    std::string line;
    bool header = true;
    while (std::getline(lines, line)) {
      if (header) {
        if (combined.empty()) combined = "lambda," + line + "\n";
        header = false;
        continue;
      }
      combined += format_number(result.lambda) + "," + line + "\n";
    }
  }
  write_file(config.metrics_path, combined);
  return 0;
}

int run_sample(const Options& opt) {
  const auto config = build_config(opt);
  const auto dir = out_dir(opt);
  write_manifest(dir, "sample", config);
  const Model model = load_checkpoint(config);
  const auto lines = sample(model, opt.count.value_or(1000), config.seed);
  std::string text;
  for (const auto& line : lines) text += line + "\n";
  write_file(dir / "samples.txt", text);
  return 0;
}

int run_eval(const Options& opt) {
  const auto base = build_config(opt);
  Model model = load_checkpoint(base);
  // corpus and task come from the checkpoint unless overridden on the command line
  TrainConfig config = model.config;
  for (const auto& kv : opt.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  config.seed = base.seed;
  const auto ctx = TaskContext::from_config(config, model.vocab, model.seq_len);
  const auto report = evaluate(model, ctx, opt.count.value_or(1000), config.seed);
  print_report(report);
  if (!opt.out.empty()) {
    const auto dir = out_dir(opt);
    write_manifest(dir, "eval", base);
    write_file(dir / "metrics.csv", metrics_csv({report}));
  }
  return 0;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

int run_metrics(const Options& opt) {
  if (opt.input.empty()) throw ConfigError("metrics needs a sample file");
  if (opt.objectives.empty()) throw ConfigError("metrics needs at least one --objective");
  const auto lines = read_lines(opt.input);
  std::shared_ptr<const chem::FragmentTable> fragments;
  std::vector<chem::Fingerprint> reference;
  if (!opt.config_path.empty() || !opt.overrides.empty()) {
    auto config = build_config(opt);
    config.objectives.clear();
    const auto ctx = TaskContext::from_config(config);
    fragments = ctx.fragments;
    reference = ctx.reference;
  }
  const auto registry = ObjectiveRegistry::standard(fragments);
  std::string csv = "objective,value,count\n";
  for (const auto& name : opt.objectives) {
    double value = 0.0;
    if (name == "validity") {
      value = chem::validity_fraction(lines);
    } else if (name == "edit_diversity") {
      std::vector<music::Melody> melodies;
      for (const auto& l : lines) melodies.push_back(music::melody_from_text(l));
      value = music::edit_diversity(melodies);
    } else if (name == "diversity") {
      if (reference.empty()) throw ConfigError("diversity needs a reference corpus (--config or --set corpus=...)");
      const auto molecules = chem::parse_valid(lines);
      for (const auto& m : molecules) value += chem::diversity(chem::fingerprint(m), reference);
      if (!molecules.empty()) value /= static_cast<double>(molecules.size());
    } else {
      const auto& objective = registry.get(name);
      std::size_t valid = 0;
      for (const auto& l : lines) {
        if (auto v = objective.score(l)) {
          value += std::clamp(*v, 0.0, 1.0);
          ++valid;
        }
      }
      if (valid > 0) value /= static_cast<double>(valid);
    }
    csv += name + "," + format_number(value) + "," + std::to_string(lines.size()) + "\n";
  }
  std::cout << csv;
  if (!opt.out.empty()) write_file(out_dir(opt) / "metrics.csv", csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Objective-reinforced sequence GAN: training, sampling and metrics"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options opt;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "flat key = value config file");
    sub->add_option("--set", opt.overrides, "override one config key (key=value); repeatable")->take_all();
    sub->add_option("--seed", opt.seed, "random seed");
    sub->add_option("--out", opt.out, "output directory");
    sub->add_option("--checkpoint", opt.checkpoint, "model checkpoint to start from or evaluate");
    sub->add_option("--count", opt.count, "number of sequences to sample");
    sub->add_option("--objective", opt.objectives, "objective name; repeatable");
    sub->add_option("--lambda", opt.lambda, "critic weight in [0,1]")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--mode", opt.mode, "critic mode")->check(CLI::IsMember({"gan", "wgan"}));
  };
  const std::vector<std::pair<std::string, std::string>> verbs = {
      {"pretrain", "MLE generator and critic pretraining"},
      {"train", "adversarial training (pretrains first unless --checkpoint is given)"},
      {"sample", "write --count decoded samples to samples.txt"},
      {"eval", "print a metric report for a checkpoint"},
      {"sweep", "adversarial runs for each of sweep_lambdas from one start"},
      {"metrics", "score a sample file against named objectives"}};
  for (const auto& [name, help] : verbs) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub);
    if (name == "metrics") sub->add_option("input", opt.input, "file with one sequence per line")->required();
    sub->callback([&opt, verb = name] { opt.verb = verb; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (opt.verb == "pretrain") return run_pretrain(opt);
    if (opt.verb == "train") return run_train(opt);
    if (opt.verb == "sweep") return run_sweep(opt);
    if (opt.verb == "sample") return run_sample(opt);
    if (opt.verb == "eval") return run_eval(opt);
    if (opt.verb == "metrics") return run_metrics(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LookupError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FileError& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return kExitFile;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitFile;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOther;
}
