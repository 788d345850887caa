#include <CLI11.hpp>
#include <cstdlib>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "xconst/error.hpp"
#include "xconst/experiment.hpp"

namespace {

using namespace xconst;

constexpr int kExitPartialSweep = 5;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  int parallel = 1;
  std::vector<std::string> runs;
};

ExperimentConfig load(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  ExperimentConfig cfg = load_experiment_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (cfg.output_dir.empty()) throw ConfigError("no output directory: pass --out or set output_dir");
  cfg.resolve();
  return cfg;
}

fs::path checkpoint_path(const Options& o, const ExperimentConfig& cfg) {
  if (!o.checkpoint.empty()) return o.checkpoint;
  return fs::path(cfg.output_dir) / "checkpoint.bin";
}

int cmd_gen_data(const Options& o) {
  const ExperimentConfig cfg = load(o);
  echo_config(cfg.output_dir, cfg);
  const DataSplits data = generate_data(cfg);
  write_data(cfg.output_dir, data);
  spdlog::info("{} train / {} dev / {} test pairs, {} multiway sentences", data.train.size(), data.dev.size(),
               data.test.size(), data.multiway.size());
  return 0;
}

int cmd_train(const Options& o) {
  const ExperimentConfig cfg = load(o);
  echo_config(cfg.output_dir, cfg);
  const DataSplits data = generate_data(cfg);
  const TrainedModel model = train_model(cfg, data);
  write_train_artifacts(cfg.output_dir, cfg, model);
  return 0;
}

ModelParams load_params(const Options& o, const ExperimentConfig& cfg) {
  return load_checkpoint(checkpoint_path(o, cfg), cfg.model.vocab_size).params;
}

int cmd_evaluate(const Options& o) {
  const ExperimentConfig cfg = load(o);
  echo_config(cfg.output_dir, cfg);
  const ModelParams params = load_params(o, cfg);
  const EvalReport report = evaluate_model(params, cfg, generate_data(cfg));
  write_eval_artifacts(cfg.output_dir, report, checkpoint_path(o, cfg).string());
  for (const auto& a : report.aggregates) {
    spdlog::info("{}: bleu {:.2f} off-target {:.3f}", split_name(a.kind), a.bleu, a.off_target);
  }
  return 0;
}

int cmd_analyze(const Options& o) {
  const ExperimentConfig cfg = load(o);
  echo_config(cfg.output_dir, cfg);
  const ModelParams params = load_params(o, cfg);
  const AnalysisResult r = analyze_model(params, cfg, generate_data(cfg), checkpoint_path(o, cfg).string());
  write_analysis_artifacts(cfg.output_dir, r);
  spdlog::info("alignment score {:.4f}", r.alignment.score);
  return 0;
}

int cmd_sweep(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const SweepSummary s = run_sweep(cfg, cfg.output_dir, o.parallel);
  if (s.failed) {
    spdlog::error("{} of {} cells failed, see failures.txt", s.failed, s.cells.size());
    return kExitPartialSweep;
  }
  return 0;
}

int cmd_report(const Options& o) {
  if (o.out.empty()) throw ConfigError("report needs --out");
  std::vector<fs::path> paths(o.runs.begin(), o.runs.end());
  std::vector<std::string> skipped;
  const auto runs = collect_runs(paths, skipped);
  for (const auto& s : skipped) spdlog::warn("skipping {}", s);
  fs::create_directories(o.out);
  write_text_atomic(fs::path(o.out) / "report.md", render_report(runs));
  if (!skipped.empty()) return static_cast<int>(ErrorKind::kData);
  return 0;
}

void setup_logging() {
  spdlog::set_pattern("[%l] %v");
  const char* level = std::getenv("XCONST_LOG");
  spdlog::set_level(level && std::string(level) == "debug" ? spdlog::level::debug : spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Cross-lingual consistency regularization lab on synthetic cipher languages"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config (JSON)")->required();
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seed", seed, "Override the config seed")->each([&](const std::string&) { o.seed = seed; });
  };
  auto* gen = app.add_subcommand("gen-data", "Generate the suite and datasets");
  add_common(gen);
  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(tr);
  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on the test split");
  add_common(ev);
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint (default: <out>/checkpoint.bin)");
  auto* an = app.add_subcommand("analyze", "Representation alignment study");
  add_common(an);
  an->add_option("--checkpoint", o.checkpoint, "Checkpoint (default: <out>/checkpoint.bin)");
  auto* sw = app.add_subcommand("sweep", "Run the strategy x alpha x lora x seed grid");
  add_common(sw);
  sw->add_option("--parallel", o.parallel, "Cells run concurrently")->check(CLI::PositiveNumber);
  auto* rep = app.add_subcommand("report", "Assemble markdown tables from run directories");
  rep->add_option("runs", o.runs, "Run or sweep directories")->required();
  rep->add_option("--out", o.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::kConfig);
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_evaluate(o);
    if (*an) return cmd_analyze(o);
    if (*sw) return cmd_sweep(o);
    if (*rep) return cmd_report(o);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(ErrorKind::kData);
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return static_cast<int>(ErrorKind::kInternal);
  }
  return static_cast<int>(ErrorKind::kInternal);
}
