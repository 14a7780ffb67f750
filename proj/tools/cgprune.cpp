// cgprune: command-line driver for the call-graph pruning pipeline.
//
//   cgprune gen-synth --out work --programs 12 --imbalance 10
//   cgprune ingest    --out work --input work/corpus
//   cgprune features  --out work
//   cgprune train     --out work --w1 0.5
//   cgprune prune     --out work --tau 0.95
//   cgprune eval      --out work
//   cgprune sweep     --out work
//   cgprune vuln      --out work
//   cgprune report    --out work
//
// Settings come from built-in defaults, then --config FILE, then flags.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cgprune/cgprune.hpp"

namespace {

using namespace cgprune;

// Flags are captured as optionals so that only explicitly given values
// override the config file.
struct Flags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  std::optional<std::string> out;
  std::string log_level = "info";

  // ingest
  std::vector<std::string> inputs;
  std::optional<double> test_fraction;
  std::optional<std::size_t> sample_cap;
  // gen-synth
  std::optional<std::string> synth_dir;
  std::optional<std::string> dataset;
  std::optional<std::size_t> programs, nodes, embedding_dim;
  std::optional<double> imbalance, signal, missed_rate;
  // features
  std::optional<std::string> family;
  std::optional<std::size_t> semantic_dim;
  std::optional<std::string> embeddings;
  // train
  std::optional<double> w1, lr, dropout, weight_decay;
  std::optional<std::size_t> epochs, warmup, batch, hidden;
  std::optional<std::string> model_kind;
  // prune / sweep
  std::optional<double> tau;
  std::optional<std::string> mode;
  std::vector<double> tau_grid, w1_grid;
  // vuln
  std::optional<std::size_t> k, warmup_runs, measured_runs;
};

template <class T>
void set_if(const std::optional<T>& v, T& dst) {
  if (v) dst = *v;
}

ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig c;
  if (f.config) c = load_config_file(*f.config);
  set_if(f.seed, c.seed);
  set_if(f.jobs, c.jobs);
  if (f.out) c.out = *f.out;
  if (!f.inputs.empty()) c.inputs.assign(f.inputs.begin(), f.inputs.end());
  set_if(f.test_fraction, c.test_fraction);
  set_if(f.sample_cap, c.sample_cap);
  set_if(f.dataset, c.synth.dataset);
  set_if(f.programs, c.synth.programs);
  set_if(f.nodes, c.synth.nodes);
  set_if(f.embedding_dim, c.synth.embedding_dim);
  set_if(f.imbalance, c.synth.imbalance);
  set_if(f.signal, c.synth.signal_strength);
  set_if(f.missed_rate, c.synth.missed_rate);
  if (f.family) c.family = parse_feature_family(*f.family);
  set_if(f.semantic_dim, c.semantic_dim);
  if (f.embeddings) c.embeddings_dir = fs::path(*f.embeddings);
  set_if(f.w1, c.train.w_retain);
  set_if(f.lr, c.train.learning_rate);
  set_if(f.dropout, c.train.dropout_rate);
  set_if(f.weight_decay, c.train.weight_decay);
  set_if(f.epochs, c.train.epochs);
  set_if(f.warmup, c.train.warmup_steps);
  set_if(f.batch, c.train.batch_size);
  set_if(f.hidden, c.train.hidden_dim);
  set_if(f.model_kind, c.model_kind);
  set_if(f.tau, c.tau);
  if (f.mode) c.decision_mode = parse_decision_mode(*f.mode);
  if (!f.tau_grid.empty()) c.tau_grid = f.tau_grid;
  if (!f.w1_grid.empty()) c.w1_grid = f.w1_grid;
  set_if(f.k, c.vuln.k);
  set_if(f.warmup_runs, c.vuln.warmup_runs);
  set_if(f.measured_runs, c.vuln.measured_runs);
  c.apply_seed();
  return c;
}

void log_to_spdlog(LogLevel level, const std::string& msg) {
  switch (level) {
    case LogLevel::debug: spdlog::debug(msg); break;
    case LogLevel::info: spdlog::info(msg); break;
    case LogLevel::warn: spdlog::warn(msg); break;
    case LogLevel::error: spdlog::error(msg); break;
  }
}

void add_train_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--w1", f.w1, "weight of the retain class; prune gets 1 - w1");
  cmd->add_option("--lr", f.lr, "peak learning rate");
  cmd->add_option("--epochs", f.epochs);
  cmd->add_option("--warmup-steps", f.warmup);
  cmd->add_option("--batch-size", f.batch);
  cmd->add_option("--dropout", f.dropout);
  cmd->add_option("--weight-decay", f.weight_decay);
  cmd->add_option("--hidden", f.hidden, "hidden layer width, 0 for a logistic head");
  cmd->add_option("--model-kind", f.model_kind, "neural or random")->check(CLI::IsMember({"neural", "random"}));
}

int run(int argc, char** argv) {
  CLI::App app{"Learned pruning of static call graphs"};
  app.require_subcommand(1);
  Flags f;
  app.add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed);
  app.add_option("--jobs", f.jobs, "worker threads for per-program stages");
  app.add_option("--out", f.out, "work directory");
  app.add_option("--log-level", f.log_level)->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));
  app.fallthrough();

  auto* gen = app.add_subcommand("gen-synth", "write a synthetic corpus (default: <out>/corpus)");
  gen->add_option("--dir", f.synth_dir, "output directory for the corpus");
  gen->add_option("--dataset", f.dataset, "dataset name, used as program id prefix");
  gen->add_option("--programs", f.programs);
  gen->add_option("--nodes", f.nodes, "nodes per program");
  gen->add_option("--imbalance", f.imbalance, "prune/retain ratio, >= 1");
  gen->add_option("--signal", f.signal, "strength of the structural signal in [0, 1]");
  gen->add_option("--missed-rate", f.missed_rate, "share of dynamic edges missing from the static graph");
  gen->add_option("--embedding-dim", f.embedding_dim, "also emit per-edge embeddings of this size");

  auto* ingest = app.add_subcommand("ingest", "filter, label and sample static/dynamic graph pairs");
  ingest->add_option("--input", f.inputs, "dataset directory with *.static.json / *.dynamic.json")->check(CLI::ExistingDirectory);
  ingest->add_option("--test-fraction", f.test_fraction);
  ingest->add_option("--sample-cap", f.sample_cap, "per-program edge cap");

  auto* features = app.add_subcommand("features", "compute per-edge feature vectors");
  features->add_option("--family", f.family, "struct, sig, sem or comb");
  features->add_option("--semantic-dim", f.semantic_dim, "hashed signature vector size");
  features->add_option("--embeddings", f.embeddings, "directory of <program>.embeddings.jsonl files");

  auto* train = app.add_subcommand("train", "train the edge classifier");
  add_train_flags(train, f);

  auto* prune = app.add_subcommand("prune", "prune the test programs' call graphs");
  prune->add_option("--tau", f.tau, "confidence threshold");
  prune->add_option("--mode", f.mode, "confidence or literal")->check(CLI::IsMember({"confidence", "literal"}));

  auto* eval = app.add_subcommand("eval", "precision, recall and F-scores of the pruned graphs");

  auto* sweep = app.add_subcommand("sweep", "grid over training weight and threshold");
  add_train_flags(sweep, f);
  sweep->add_option("--w1-grid", f.w1_grid)->delimiter(',');
  sweep->add_option("--tau-grid", f.tau_grid)->delimiter(',');
  sweep->add_option("--mode", f.mode)->check(CLI::IsMember({"confidence", "literal"}));

  auto* vuln = app.add_subcommand("vuln", "vulnerability propagation on unpruned and pruned graphs");
  vuln->add_option("--k", f.k, "number of vulnerable dependency methods");
  vuln->add_option("--warmup-runs", f.warmup_runs);
  vuln->add_option("--measured-runs", f.measured_runs);

  auto* report = app.add_subcommand("report", "runtime table and summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::usage);
  }

  spdlog::set_default_logger(spdlog::stderr_color_mt("cgprune"));
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::from_str(f.log_level));
  const LogSink log = log_to_spdlog;

  const auto cfg = resolve(f);
  if (gen->parsed()) {
    const fs::path dir = f.synth_dir ? fs::path(*f.synth_dir) : cfg.out / "corpus";
    run_gen_synth(cfg.synth, dir, log);
  } else if (ingest->parsed()) {
    run_ingest(cfg, log);
  } else {
    cfg.validate();
    if (features->parsed()) run_features(cfg, log);
    else if (train->parsed()) run_train(cfg, log);
    else if (prune->parsed()) run_prune(cfg, log);
    else if (eval->parsed()) run_eval(cfg, log);
    else if (sweep->parsed()) run_sweep(cfg, log);
    else if (vuln->parsed()) run_vuln(cfg, log);
    else if (report->parsed()) run_report(cfg, log);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const cgprune::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed artifact: " << e.what() << '\n';
    return static_cast<int>(cgprune::ExitCode::integrity);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(cgprune::ExitCode::integrity);
  }
}
