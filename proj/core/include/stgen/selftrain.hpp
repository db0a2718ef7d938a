#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stgen/builtin_model.hpp"
#include "stgen/corpus.hpp"
#include "stgen/decode.hpp"
#include "stgen/lexicon.hpp"
#include "stgen/refine.hpp"
#include "stgen/selection.hpp"

namespace stgen {

struct SelfTrainConfig {
  int iterations = 5;          // self-training rounds after warm-up
  int mc_samples = 10;         // stochastic scorings per candidate (M)
  int aggregation_count = 10;  // averaged replicas per refinement step (R)
  double nucleus_p = 0.9;
  double trim_fraction = 0.01;
  SelectionStrategy strategy = SelectionStrategy::HighMeanHighVar;
  bool prefilter = true;
  bool filter_enabled = true;
  bool normalized_likelihood = true;
  int warmup_epochs = 30;
  int epochs_per_iteration = 10;
  double lr = 3e-3;
  int batch_size = 8;
  double weight_decay = 0.01;
  double gold_fraction = 0.2;  // minimum share of gold pairs while fine-tuning
  int dev_k = 1;               // samples per dev MR when tracking the best model
  int eval_k = 5;              // samples per test MR in the final evaluation
  int max_len = 64;
  std::uint64_t seed = 0;
  int threads = 1;
};

// One row of the run log; iteration 0 is the warm-up stage.
struct IterationRow {
  int iteration = 0;
  std::size_t annotated = 0;
  std::size_t selected = 0;
  std::size_t pseudo = 0;
  double mu_a = 0.0;
  double mean_threshold = 0.0;
  double variance_threshold = 0.0;
  double train_loss = 0.0;  // last epoch of this stage's training
  double dev_bleu = 0.0;
  double dev_err = 0.0;
  bool degenerate = false;  // fine-tuned on gold alone
};

struct RunReport {
  std::vector<IterationRow> rows;
  int best_iteration = 0;
  double best_dev_bleu = 0.0;
  double test_bleu = 0.0;
  double test_err = 0.0;
};

struct EvalResult {
  double bleu = 0.0;
  double err = 0.0;
  std::size_t n_mrs = 0;  // unique MRs evaluated
};

// Groups pairs by unique MR (multi-reference BLEU), decodes one hypothesis
// per MR with lowest-ERR-of-k selection, and aggregates BLEU and slot error
// rate. MR i decodes under derive(seed, i).
EvalResult evaluate_pairs(const Generator& model, std::span<const LabeledPair> pairs,
                          const ValueLexicon& lexicon, int k, const DecodeOptions& options,
                          std::uint64_t seed, int threads = 1);

// Runs warm-up plus S iterations of annotate -> score -> select -> refine ->
// fine-tune, with per-stage artifacts under run_dir:
//   selftrain_config.json, state.json, metrics.tsv, report.txt, best.ckpt,
//   warmup/model.ckpt and iter_NNN/{annotated.txt, selection.tsv,
//   pseudo.txt, provenance.tsv, model.ckpt}.
// Every stage is a pure function of (config.seed, stage index), so an
// interrupted run resumed from its directory reproduces the uninterrupted
// artifacts byte for byte.
class SelfTrainDriver {
 public:
  SelfTrainDriver(SelfTrainConfig config, ArchitectureConfig arch, DataSplit split,
                  std::filesystem::path run_dir, bool resume = false);

  // Stages still to run, warm-up included.
  bool done() const { return completed_ >= config_.iterations; }
  // Runs the next stage (warm-up first); returns the stage's log row.
  const IterationRow& step();
  // Final test evaluation with the best checkpoint; writes report.txt.
  RunReport finalize();

  const SelfTrainConfig& config() const { return config_; }
  const std::vector<IterationRow>& rows() const { return rows_; }
  int completed() const { return completed_; }  // -1 before warm-up
  const BuiltinModel& model() const { return *model_; }
  const ValueLexicon& lexicon() const { return lexicon_; }
  std::filesystem::path run_dir() const { return run_dir_; }

 private:
  void warm_up();
  void run_iteration(int s);
  void persist_state();
  void append_metrics();
  void update_best(const IterationRow& row);
  std::filesystem::path stage_dir(int iteration) const;
  std::filesystem::path stage_checkpoint(int iteration) const;
  EvalResult eval_dev(int iteration) const;

  SelfTrainConfig config_;
  ArchitectureConfig arch_;
  DataSplit split_;
  std::filesystem::path run_dir_;
  ValueLexicon lexicon_;
  std::optional<BuiltinModel> model_;
  std::vector<IterationRow> rows_;
  int completed_ = -1;  // -1 none, 0 warm-up done, s iterations done
  int best_iteration_ = 0;
  double best_dev_bleu_ = -1.0;
};

RunReport run_selftrain(const SelfTrainConfig& config, const ArchitectureConfig& arch, const DataSplit& split,
                        const std::filesystem::path& run_dir, bool resume = false);

}  // namespace stgen
