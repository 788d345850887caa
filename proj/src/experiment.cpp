#include "xconst/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <spdlog/spdlog.h>
#include <sstream>
#include <thread>
#include <tuple>

#include "xconst/error.hpp"
#include "xconst/rng.hpp"

namespace xconst {

namespace {

constexpr char kCheckpointFile[] = "checkpoint.bin";
constexpr char kDoneFile[] = "done";

std::string join_concepts(const ConceptSentence& s) {
  std::string out;
  for (int c : s) out += (out.empty() ? "" : " ") + std::to_string(c);
  return out;
}

std::string format_alpha(double a) { return fmt::format("{}", a); }

std::string signed_delta(double d) { return fmt::format("{:+.2f}", d); }

}  // namespace

// Data ----------------------------------------------------------------------

DataSplits generate_data(const ExperimentConfig& cfg) {
  DataSplits data;
  data.suite = cfg.language_suite();
  const int want[] = {cfg.data.train_sentences, cfg.data.dev_sentences, cfg.data.test_sentences,
                      cfg.eval.representation_sentences};
  int total = 0;
  for (int n : want) total += n;

  // Sentences are keyed by index, so oversampling keeps the prefix stable.
  const auto pool = sample_concept_corpus(data.suite, 2 * total, cfg.data.length, cfg.data.seed);
  std::set<ConceptSentence> seen;
  std::vector<ConceptSentence> distinct;
  for (const auto& s : pool) {
    if (static_cast<int>(distinct.size()) == total) break;
    if (seen.insert(s).second) distinct.push_back(s);
  }
  if (static_cast<int>(distinct.size()) < total) {
    throw DataError(fmt::format("only {} distinct sentences for {} requested; widen the length range or concept vocabulary",
                                distinct.size(), total));
  }
  std::vector<std::vector<ConceptSentence>> parts;
  auto it = distinct.begin();
  for (int n : want) {
    parts.emplace_back(it, it + n);
    it += n;
  }

  const auto supervised = cfg.supervised_directions();
  auto every = supervised;
  const auto zero_shot = cfg.zero_shot_directions();
  every.insert(every.end(), zero_shot.begin(), zero_shot.end());
  const bool reorder = cfg.data.reorder;
  data.train = filter_pairs(data.suite,
                            make_parallel_dataset(parts[0], data.suite, supervised, reorder, mix_key(cfg.data.seed, 1)),
                            cfg.data.filters);
  if (data.train.empty()) throw DataError("every training pair was filtered out");
  data.dev = make_parallel_dataset(parts[1], data.suite, every, reorder, mix_key(cfg.data.seed, 2));
  data.test = make_parallel_dataset(parts[2], data.suite, every, reorder, mix_key(cfg.data.seed, 3));
  data.multiway = std::move(parts[3]);
  return data;
}

void write_data(const fs::path& dir, const DataSplits& data) {
  fs::create_directories(dir);
  write_text_atomic(dir / "suite.json", suite_to_json(data.suite) + "\n");
  auto dump = [&](const char* name, const std::vector<ParallelExample>& xs) {
    std::ostringstream out;
    write_dataset(out, xs);
    write_text_atomic(dir / name, out.str());
  };
  dump("train.tsv", data.train);
  dump("dev.tsv", data.dev);
  dump("test.tsv", data.test);
  std::string multi;
  for (const auto& s : data.multiway) multi += join_concepts(s) + "\n";
  write_text_atomic(dir / "multiway.tsv", multi);
}

// Train / evaluate / analyze ------------------------------------------------

TrainedModel train_model(const ExperimentConfig& cfg, const DataSplits& data) {
  TrainedModel m;
  m.params = init_model(cfg.model, mix_key(cfg.seed, 0x696e6974ULL));
  m.log = train(m.params, m.state, data.train, data.suite, cfg.train, [](const TrainLogRow& row) {
    if (row.step % 100 == 0) {
      spdlog::debug("step {} ce {:.4f} kl {:.4f} grad {:.3f}", row.step, row.ce, row.kl, row.grad_norm);
    }
  });
  spdlog::info("trained {} steps in {:.1f}s, final ce {:.4f}", m.log.rows.size(), m.log.wall_ms / 1000.0,
               m.log.rows.empty() ? 0.0 : m.log.rows.back().ce);
  return m;
}

EvalReport evaluate_model(const ModelParams& params, const ExperimentConfig& cfg, const DataSplits& data) {
  EvalOptions opts;
  opts.supervised = cfg.supervised_directions();
  opts.zero_shot = cfg.zero_shot_directions();
  opts.pivot = cfg.eval.pivot;
  opts.smoothing = cfg.eval.smoothing;
  return evaluate(params, data.suite, data.test, cfg.eval.strategy, cfg.decode, opts);
}

AnalysisResult analyze_model(const ModelParams& params, const ExperimentConfig& cfg, const DataSplits& data,
                             const std::string& checkpoint_id) {
  AnalysisResult r;
  r.reps = collect_representations(params, data.suite, data.multiway, cfg.eval.strategy, cfg.representation_target(),
                                   cfg.data.reorder);
  r.reps.checkpoint_id = checkpoint_id;
  std::vector<std::vector<double>> flat;
  for (const auto& g : r.reps.groups) flat.insert(flat.end(), g.begin(), g.end());
  r.pca = pca_project(flat, 2);
  r.alignment = alignment_score(r.reps);
  if (r.alignment.zero_norm > 0) spdlog::warn("{} zero-norm representations", r.alignment.zero_norm);
  return r;
}

// Artifacts -----------------------------------------------------------------

void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void echo_config(const fs::path& dir, const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  write_text_atomic(dir / "config.json", to_json(cfg).dump(2) + "\n");
}

void write_train_artifacts(const fs::path& dir, const ExperimentConfig& cfg, const TrainedModel& model) {
  fs::create_directories(dir);
  save_checkpoint(dir / kCheckpointFile, model.params, model.state, cfg.train);
  std::ostringstream log;
  write_train_log(log, model.log, false);
  write_text_atomic(dir / "train_log.csv", log.str());
}

void write_eval_artifacts(const fs::path& dir, const EvalReport& report, const std::string& title) {
  fs::create_directories(dir);
  std::ostringstream csv, md;
  write_report_csv(csv, report);
  write_report_markdown(md, report, title);
  write_text_atomic(dir / "report.csv", csv.str());
  write_text_atomic(dir / "report.md", md.str());
}

void write_analysis_artifacts(const fs::path& dir, const AnalysisResult& result) {
  fs::create_directories(dir);
  std::ostringstream coords;
  write_coordinates_csv(coords, result.reps, result.pca);
  write_text_atomic(dir / "pca_coordinates.csv", coords.str());
  write_text_atomic(dir / "alignment.csv",
                    fmt::format("checkpoint,strategy,alignment_score\n{},{},{}\n", result.reps.checkpoint_id,
                                strategy_name(result.reps.strategy), result.alignment.score));
}

// Sweep ---------------------------------------------------------------------

std::string SweepCell::dir_name() const {
  return fmt::format("{}_a{}_lora{}_s{}", strategy_name(strategy), format_alpha(alpha), lora_rank, seed);
}

ExperimentConfig SweepCell::apply(const ExperimentConfig& base) const {
  ExperimentConfig c = base;
  c.seed = seed;
  c.train.mode = alpha > 0.0 ? ObjectiveMode::kXConst : ObjectiveMode::kVanilla;
  c.train.alpha = alpha;
  c.train.strategy_mode = StrategyMode::fixed_to(strategy);
  c.train.lora_rank = lora_rank;
  c.eval.strategy = strategy;
  c.sweep.alphas = {alpha};
  c.sweep.strategies = {strategy};
  c.sweep.lora_ranks = {lora_rank};
  c.sweep.seeds = {seed};
  c.resolve();
  return c;
}

std::vector<SweepCell> sweep_cells(const ExperimentConfig& cfg) {
  std::vector<SweepCell> cells;
  for (Strategy s : cfg.sweep.strategies) {
    for (double a : cfg.sweep.alphas) {
      for (int r : cfg.sweep.lora_ranks) {
        for (std::uint64_t seed : cfg.sweep.seeds) cells.push_back({s, a, r, seed});
      }
    }
  }
  return cells;
}

CellResult run_cell(const fs::path& dir, const ExperimentConfig& cell_cfg, const SweepCell& cell,
                    const DataSplits& data) {
  CellResult res;
  res.cell = cell;
  const std::string hash = config_hash(to_json(cell_cfg));
  try {
    if (fs::exists(dir / kDoneFile) && read_text(dir / kDoneFile) == hash + "\n") {
      std::istringstream csv(read_text(dir / "report.csv"));
      res.report = read_report_csv(csv);
      std::istringstream al(read_text(dir / "alignment.csv"));
      std::string header, row;
      std::getline(al, header);
      std::getline(al, row);
      res.alignment = std::stod(row.substr(row.rfind(',') + 1));
      res.ok = res.skipped = true;
      return res;
    }
    fs::remove(dir / kDoneFile);
    echo_config(dir, cell_cfg);
    const TrainedModel model = train_model(cell_cfg, data);
    write_train_artifacts(dir, cell_cfg, model);
    res.report = evaluate_model(model.params, cell_cfg, data);
    write_eval_artifacts(dir, res.report, cell.dir_name());
    const AnalysisResult analysis = analyze_model(model.params, cell_cfg, data, cell.dir_name());
    write_analysis_artifacts(dir, analysis);
    res.alignment = analysis.alignment.score;
    write_text_atomic(dir / kDoneFile, hash + "\n");
    res.ok = true;
  } catch (const std::exception& e) {
    res.error = e.what();
  }
  return res;
}

void write_sweep_csv(std::ostream& out, const std::vector<CellResult>& cells) {
  struct Acc {
    double bleu = 0, off = 0, exact = 0, align = 0;
    int n = 0;
  };
  using Key = std::tuple<int, int, int, int>;  // strategy order, alpha order, lora order, split
  std::map<Key, Acc> acc;
  std::vector<Strategy> strategies;
  std::vector<double> alphas;
  std::vector<int> loras;
  auto index_of = [](auto& v, auto x) {
    auto it = std::find(v.begin(), v.end(), x);
    if (it == v.end()) {
      v.push_back(x);
      return static_cast<int>(v.size()) - 1;
    }
    return static_cast<int>(it - v.begin());
  };
  for (const auto& c : cells) {
    if (!c.ok) continue;
    const int si = index_of(strategies, c.cell.strategy);
    const int ai = index_of(alphas, c.cell.alpha);
    const int li = index_of(loras, c.cell.lora_rank);
    for (const auto& a : c.report.aggregates) {
      Acc& x = acc[{si, ai, li, static_cast<int>(a.kind)}];
      x.bleu += a.bleu;
      x.off += a.off_target;
      x.exact += a.exact;
      x.align += c.alignment;
      ++x.n;
    }
  }
  out << "strategy,alpha,lora,split,bleu,off_target,exact_match,alignment,n_seeds\n";
  for (const auto& [key, x] : acc) {
    const auto [si, ai, li, kind] = key;
    out << fmt::format("{},{},{},{},{},{},{},{},{}\n", strategy_name(strategies[si]), format_alpha(alphas[ai]), loras[li],
                       split_name(static_cast<SplitKind>(kind)), x.bleu / x.n, x.off / x.n, x.exact / x.n,
                       x.align / x.n, x.n);
  }
}

SweepSummary run_sweep(const ExperimentConfig& cfg, const fs::path& out_dir, int parallel) {
  const auto cells = sweep_cells(cfg);
  fs::create_directories(out_dir);
  echo_config(out_dir, cfg);
  const DataSplits data = generate_data(cfg);
  write_data(out_dir / "data", data);

  SweepSummary summary;
  summary.cells.resize(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const fs::path dir = out_dir / cells[i].dir_name();
      try {
        const ExperimentConfig cell_cfg = cells[i].apply(cfg);
        summary.cells[i] = run_cell(dir, cell_cfg, cells[i], data);
      } catch (const std::exception& e) {
        summary.cells[i].cell = cells[i];
        summary.cells[i].error = e.what();
      }
      const auto& r = summary.cells[i];
      if (r.ok) {
        spdlog::info("cell {} {}", cells[i].dir_name(), r.skipped ? "already complete" : "done");
      } else {
        spdlog::error("cell {} failed: {}", cells[i].dir_name(), r.error);
      }
    }
  };
  const int threads = std::max(1, std::min<int>(parallel, static_cast<int>(cells.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string failures;
  for (const auto& r : summary.cells) {
    if (!r.ok) {
      ++summary.failed;
      failures += r.cell.dir_name() + "\t" + r.error + "\n";
    }
  }
  if (summary.failed) {
    write_text_atomic(out_dir / "failures.txt", failures);
  } else if (fs::exists(out_dir / "failures.txt")) {
    fs::remove(out_dir / "failures.txt");
  }
  std::ostringstream csv;
  write_sweep_csv(csv, summary.cells);
  write_text_atomic(out_dir / "sweep.csv", csv.str());

  std::vector<RunRecord> runs;
  for (const auto& r : summary.cells) {
    if (r.ok) runs.push_back({r.cell.dir_name(), r.cell.apply(cfg), r.report});
  }
  write_text_atomic(out_dir / "sweep.md", render_report(runs));
  return summary;
}

// Report --------------------------------------------------------------------

RunRecord load_run(const fs::path& dir) {
  RunRecord r;
  r.name = dir.filename().string();
  if (r.name.empty()) r.name = dir.parent_path().filename().string();
  Json j;
  try {
    j = Json::parse(read_text(dir / "config.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir.string() + "/config.json: " + e.what());
  }
  r.config = experiment_config_from_json(j);
  std::istringstream csv(read_text(dir / "report.csv"));
  r.report = read_report_csv(csv);
  return r;
}

std::vector<RunRecord> collect_runs(const std::vector<fs::path>& paths, std::vector<std::string>& skipped) {
  std::vector<fs::path> dirs;
  for (const auto& p : paths) {
    if (fs::exists(p / "report.csv")) {
      dirs.push_back(p);
    } else if (fs::is_directory(p)) {
      std::vector<fs::path> sub;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_directory() && fs::exists(e.path() / "report.csv")) sub.push_back(e.path());
      }
      std::sort(sub.begin(), sub.end());
      if (sub.empty()) skipped.push_back(p.string() + ": no report.csv");
      dirs.insert(dirs.end(), sub.begin(), sub.end());
    } else {
      skipped.push_back(p.string() + ": not a directory");
    }
  }
  std::vector<RunRecord> runs;
  for (const auto& d : dirs) {
    try {
      runs.push_back(load_run(d));
    } catch (const Error& e) {
      skipped.push_back(d.string() + ": " + e.what());
    }
  }
  return runs;
}

std::string render_report(const std::vector<RunRecord>& runs) {
  auto key = [](const RunRecord& r) {
    return std::make_tuple(static_cast<int>(r.config.eval.strategy), r.config.train.lora_rank, r.config.seed,
                           r.config.train.effective_alpha(), r.name);
  };
  std::vector<const RunRecord*> order;
  for (const auto& r : runs) order.push_back(&r);
  std::sort(order.begin(), order.end(), [&](const RunRecord* a, const RunRecord* b) { return key(*a) < key(*b); });

  auto vanilla_of = [&](const RunRecord& r) -> const RunRecord* {
    for (const RunRecord* v : order) {
      if (v->config.train.effective_alpha() == 0.0 && v->config.eval.strategy == r.config.eval.strategy &&
          v->config.train.lora_rank == r.config.train.lora_rank && v->config.seed == r.config.seed) {
        return v;
      }
    }
    return nullptr;
  };
  auto cell = [](const RunRecord& r, const RunRecord* base, SplitKind k, bool off_target) -> std::string {
    const AggregateRow* a = r.report.aggregate(k);
    if (!a) return "";
    const double v = off_target ? 100.0 * a->off_target : a->bleu;
    std::string s = fmt::format("{:.2f}", v);
    const AggregateRow* b = base ? base->report.aggregate(k) : nullptr;
    if (b) s += " (" + signed_delta(v - (off_target ? 100.0 * b->off_target : b->bleu)) + ")";
    return s;
  };

  std::string out = "| Run | Strategy | LoRA | Objective | Seed | Supervised | Zero-Shot | Pivot | Zero-Shot off-target % |\n";
  out += "|---|---|---|---|---|---|---|---|---|\n";
  for (const RunRecord* r : order) {
    const RunRecord* base = vanilla_of(*r);
    const double alpha = r->config.train.effective_alpha();
    out += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} | {} |\n", r->name, strategy_name(r->config.eval.strategy),
                       r->config.train.lora_rank > 0 ? fmt::format("r={}", r->config.train.lora_rank) : "off",
                       alpha > 0.0 ? fmt::format("+XConST a={}", format_alpha(alpha)) : "vanilla", r->config.seed,
                       cell(*r, base, SplitKind::kSupervised, false), cell(*r, base, SplitKind::kZeroShot, false),
                       cell(*r, base, SplitKind::kPivot, false), cell(*r, base, SplitKind::kZeroShot, true));
  }
  return out;
}

}  // namespace xconst
