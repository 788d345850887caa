#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xconst/analysis.hpp"
#include "xconst/config.hpp"
#include "xconst/eval.hpp"
#include "xconst/trainer.hpp"

namespace xconst {

namespace fs = std::filesystem;

/// Everything derived from the suite and data sections of a config. Train, test
/// and multiway sentences are pairwise distinct concept sequences.
struct DataSplits {
  LanguageSuite suite;
  std::vector<ParallelExample> train, dev, test;
  std::vector<ConceptSentence> multiway;
};

DataSplits generate_data(const ExperimentConfig& cfg);
/// suite.json, train.tsv, dev.tsv, test.tsv and multiway.tsv (concept ids).
void write_data(const fs::path& dir, const DataSplits& data);

struct TrainedModel {
  ModelParams params;
  TrainerState state;
  TrainLog log;
};

TrainedModel train_model(const ExperimentConfig& cfg, const DataSplits& data);
EvalReport evaluate_model(const ModelParams& params, const ExperimentConfig& cfg, const DataSplits& data);

struct AnalysisResult {
  RepresentationSet reps;
  PcaResult pca;
  AlignmentScore alignment;
};

AnalysisResult analyze_model(const ModelParams& params, const ExperimentConfig& cfg, const DataSplits& data,
                             const std::string& checkpoint_id);

// Artifact files ------------------------------------------------------------

void write_text_atomic(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);
/// Writes config.json holding the resolved config.
void echo_config(const fs::path& dir, const ExperimentConfig& cfg);

void write_train_artifacts(const fs::path& dir, const ExperimentConfig& cfg, const TrainedModel& model);
void write_eval_artifacts(const fs::path& dir, const EvalReport& report, const std::string& title);
void write_analysis_artifacts(const fs::path& dir, const AnalysisResult& result);

// Sweep ---------------------------------------------------------------------

struct SweepCell {
  Strategy strategy = Strategy::kTDec;
  double alpha = 0.0;
  int lora_rank = 0;
  std::uint64_t seed = 0;

  std::string dir_name() const;
  /// The base config specialised to this cell. alpha 0 trains the vanilla objective.
  ExperimentConfig apply(const ExperimentConfig& base) const;
};

std::vector<SweepCell> sweep_cells(const ExperimentConfig& cfg);

struct CellResult {
  SweepCell cell;
  EvalReport report;
  double alignment = 0.0;
  bool ok = false;
  bool skipped = false;  // already complete with the same config hash
  std::string error;
};

/// Trains, evaluates and analyzes one cell inside `dir`. A `done` marker holding
/// the config hash makes a finished cell a no-op on rerun.
CellResult run_cell(const fs::path& dir, const ExperimentConfig& cell_cfg, const SweepCell& cell, const DataSplits& data);

struct SweepSummary {
  std::vector<CellResult> cells;
  int failed = 0;
};

/// Runs every cell under out_dir with up to `parallel` cells at once, then writes
/// sweep.csv (seed-averaged) and sweep.md.
SweepSummary run_sweep(const ExperimentConfig& cfg, const fs::path& out_dir, int parallel);

/// `strategy,alpha,lora,split,bleu,off_target,exact_match,alignment,n_seeds`:
/// one row per (strategy, alpha, lora, split kind), averaged over seeds.
void write_sweep_csv(std::ostream& out, const std::vector<CellResult>& cells);

// Report --------------------------------------------------------------------

struct RunRecord {
  std::string name;
  ExperimentConfig config;
  EvalReport report;
};

/// Loads a run directory (config.json + report.csv).
RunRecord load_run(const fs::path& dir);

/// Expands each path into run directories: a path holding report.csv is a run,
/// otherwise its immediate subdirectories that hold one are. Unreadable runs
/// are reported in `skipped`.
std::vector<RunRecord> collect_runs(const std::vector<fs::path>& paths, std::vector<std::string>& skipped);

/// Markdown table, one row per run: Supervised | Zero-Shot | Pivot BLEU and
/// zero-shot off-target, each with the delta against the vanilla run of the same
/// (strategy, lora, seed). Deltas without a vanilla counterpart stay blank.
std::string render_report(const std::vector<RunRecord>& runs);

}  // namespace xconst
