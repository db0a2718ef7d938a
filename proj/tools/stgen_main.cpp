#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "stgen/config.hpp"
#include "stgen/decode.hpp"
#include "stgen/metrics.hpp"
#include "stgen/refine.hpp"
#include "stgen/selftrain.hpp"
#include "stgen/tokens.hpp"
#include "stgen/uncertainty.hpp"

namespace fs = std::filesystem;
using namespace stgen;

namespace {

fs::path output_root() {
  if (const char* env = std::getenv("STGEN_OUTPUT_ROOT")) return fs::path(env);
  return fs::path(".");
}

fs::path resolve_out(const std::string& flag, const RunConfig& config, const std::string& fallback) {
  if (!flag.empty()) return fs::path(flag);
  if (!config.output_dir.empty()) {
    fs::path dir(config.output_dir);
    return dir.is_absolute() ? dir : output_root() / dir;
  }
  return output_root() / fallback;
}

RunConfig load_config_with_seed(const std::string& path, const std::optional<std::uint64_t>& seed) {
  RunConfig config = load_run_config(path);
  if (seed) {
    config.seed = *seed;
    config.selftrain.seed = *seed;
  }
  return config;
}

struct LoadedModel {
  BuiltinModel model;
  ValueLexicon lexicon;
};

LoadedModel load_model(const std::string& checkpoint_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  return {ckpt.restore(), ValueLexicon::from_values(ckpt.lexicon_values)};
}

int cmd_synth(const std::string& config_path, const std::string& out_flag,
              const std::optional<std::uint64_t>& seed) {
  const RunConfig config = load_config_with_seed(config_path, seed);
  if (!config.has_toy) throw ConfigError("synth requires a 'toy' section in the config");
  const DataSplit split =
      synth_toy_corpus(config.grammar, config.n_train, config.n_dev, config.n_test, config.n_unlabeled);
  const fs::path out = resolve_out(out_flag, config, "corpus");
  fs::create_directories(out);
  save_pairs(out / "train.txt", split.train);
  save_pairs(out / "dev.txt", split.dev);
  save_pairs(out / "test.txt", split.test);
  save_mrs(out / "unlabeled.txt", split.unlabeled);
  std::cout << "wrote " << (out / "train.txt").string() << " (" << split.train.size() << " pairs)\n"
            << "wrote " << (out / "dev.txt").string() << " (" << split.dev.size() << " pairs)\n"
            << "wrote " << (out / "test.txt").string() << " (" << split.test.size() << " pairs)\n"
            << "wrote " << (out / "unlabeled.txt").string() << " (" << split.unlabeled.size() << " MRs)\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_flag,
              const std::optional<std::uint64_t>& seed) {
  const RunConfig config = load_config_with_seed(config_path, seed);
  const DataSplit split = materialize_split(config);
  const fs::path out = resolve_out(out_flag, config, "train_run");
  SelfTrainDriver driver(config.selftrain, config.arch, split, out);
  const IterationRow& row = driver.step();  // warm-up only
  std::cout << "warm-up done: train_loss " << row.train_loss << ", dev_bleu " << row.dev_bleu
            << ", dev_err " << row.dev_err << '\n'
            << "checkpoint " << (out / "warmup" / "model.ckpt").string() << '\n';
  return 0;
}

int cmd_selftrain(const std::string& config_path, const std::string& out_flag, bool resume,
                  const std::optional<std::uint64_t>& seed) {
  const RunConfig config = load_config_with_seed(config_path, seed);
  const DataSplit split = materialize_split(config);
  const fs::path out = resolve_out(out_flag, config, "selftrain_run");
  SelfTrainDriver driver(config.selftrain, config.arch, split, out, resume);
  while (!driver.done()) {
    const IterationRow& row = driver.step();
    std::cout << "stage " << row.iteration << ": annotated " << row.annotated << ", selected "
              << row.selected << ", pseudo " << row.pseudo << ", dev_bleu " << row.dev_bleu << '\n';
  }
  const RunReport report = driver.finalize();
  std::cout << "best stage " << report.best_iteration << " (dev_bleu " << report.best_dev_bleu << ")\n"
            << "test_bleu " << report.test_bleu << "\ttest_err " << report.test_err << '\n'
            << "report " << (out / "report.txt").string() << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& test_path, int k,
             const std::string& hyp_file, double nucleus_p, int max_len,
             const std::optional<std::uint64_t>& seed) {
  const LoadedModel loaded = load_model(checkpoint_path);
  const std::vector<LabeledPair> pairs = load_pairs(test_path, ParseMode::Strict, Origin::Gold);

  // Group rows by unique MR so repeated MRs become multiple references.
  std::vector<MeaningRepresentation> mrs;
  std::vector<std::vector<std::vector<std::string>>> refs;
  std::map<std::string, std::size_t> index;
  for (const auto& pair : pairs) {
    const std::string key = render_mr(pair.mr);
    auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(key, mrs.size());
      mrs.push_back(pair.mr);
      refs.push_back({pair.text});
    } else {
      refs[it->second].push_back(pair.text);
    }
  }

  std::vector<std::vector<std::string>> hyps(mrs.size());
  ErrTotals totals;
  if (!hyp_file.empty()) {
    std::ifstream is(hyp_file);
    if (!is) throw IoError("cannot open hypothesis file: " + hyp_file);
    std::string line;
    for (std::size_t i = 0; i < mrs.size(); ++i) {
      if (!std::getline(is, line)) throw LengthMismatchError("hypothesis file shorter than unique MR count");
      hyps[i] = tokenize(line);
      totals.add(compute_err(mrs[i], hyps[i], loaded.lexicon));
    }
  } else {
    const DecodeOptions options{nucleus_p, max_len};
    for (std::size_t i = 0; i < mrs.size(); ++i) {
      const BestOfK best = best_of_k(loaded.model, mrs[i], k, loaded.lexicon, options,
                                     derive_seed(seed.value_or(0), {static_cast<std::uint64_t>(i)}));
      hyps[i] = best.decode.tokens;
      totals.add(best.err);
    }
  }

  const double bleu = corpus_bleu(hyps, refs);
  std::cout << "# eval\tk=" << k << "\tnucleus_p=" << nucleus_p << "\tcheckpoint=" << checkpoint_path
            << '\n';
  std::cout << "n_mrs\tbleu\terr\tmissing\tredundant\tslots\n";
  std::cout << mrs.size() << '\t' << bleu << '\t' << totals.err() << '\t' << totals.missing << '\t'
            << totals.redundant << '\t' << totals.total << '\n';
  return 0;
}

int cmd_inspect(const std::string& checkpoint_path, const std::string& unlabeled_path, int m_samples,
                const std::string& train_path, const std::string& strategy_name_flag, bool verbose,
                double nucleus_p, int max_len, const std::optional<std::uint64_t>& seed) {
  const LoadedModel loaded = load_model(checkpoint_path);
  const std::vector<MeaningRepresentation> unlabeled = load_mrs(unlabeled_path, ParseMode::Strict);
  const std::uint64_t base_seed = seed.value_or(0);
  const DecodeOptions options{nucleus_p, max_len};

  std::vector<LabeledPair> annotated(unlabeled.size());
  std::vector<UncertaintyScore> scores(unlabeled.size());
  std::vector<ScoredCandidate> candidates(unlabeled.size());
  for (std::size_t n = 0; n < unlabeled.size(); ++n) {
    const DecodeResult decode =
        sample(loaded.model, unlabeled[n], options,
               derive_seed(base_seed, {seed_tag::kAnnotate, 1ull, static_cast<std::uint64_t>(n)}));
    annotated[n] = {unlabeled[n], decode.tokens, Origin::Augmented};
    scores[n] = estimate(loaded.model, annotated[n], m_samples,
                         derive_seed(base_seed, {seed_tag::kScoreAugmented, 1ull, static_cast<std::uint64_t>(n)}));
    candidates[n] = {static_cast<std::int64_t>(n), scores[n].mean, scores[n].variance};
  }

  std::vector<ScoredCandidate> gold_scores;
  if (!train_path.empty()) {
    const std::vector<LabeledPair> gold = load_pairs(train_path, ParseMode::Strict, Origin::Gold);
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const UncertaintyScore s =
          estimate(loaded.model, gold[i], m_samples,
                   derive_seed(base_seed, {seed_tag::kScoreGold, 1ull, static_cast<std::uint64_t>(i)}));
      gold_scores.push_back({-static_cast<std::int64_t>(i) - 1, s.mean, s.variance});
    }
  }

  SelectionConfig selection_config;
  selection_config.strategy = parse_strategy(strategy_name_flag);
  const SelectionOutcome outcome = select(candidates, gold_scores, selection_config);

  std::cout << "id\tmean\tvariance\tsamples\tsurvived_prefilter\tselected\ttext";
  if (verbose) std::cout << "\traw_log_samples";
  std::cout << '\n';
  for (std::size_t n = 0; n < unlabeled.size(); ++n) {
    const CandidateDecision& d = outcome.decisions[n];
    std::cout << n << '\t' << scores[n].mean << '\t' << scores[n].variance << '\t' << scores[n].samples
              << '\t' << (d.survived_prefilter ? 1 : 0) << '\t' << (d.selected ? 1 : 0) << '\t'
              << join_tokens(annotated[n].text);
    if (verbose) {
      std::cout << '\t';
      for (std::size_t i = 0; i < scores[n].raw_log_samples.size(); ++i) {
        if (i) std::cout << ' ';
        std::cout << scores[n].raw_log_samples[i];
      }
    }
    std::cout << '\n';
  }
  std::cout << "# mu_a\t" << outcome.mu_a << '\n';
  if (!gold_scores.empty()) {
    std::cout << "# mean_threshold\t" << outcome.mean_threshold << '\n';
    std::cout << "# variance_threshold\t" << outcome.variance_threshold << '\n';
  }
  return 0;
}

int cmd_augment(const std::string& config_path, const std::string& checkpoint_path,
                const std::string& out_flag, const std::optional<std::uint64_t>& seed) {
  const RunConfig config = load_config_with_seed(config_path, seed);
  const DataSplit split = materialize_split(config);
  const LoadedModel loaded = load_model(checkpoint_path);
  const fs::path out = resolve_out(out_flag, config, "augment_run");
  fs::create_directories(out);
  const SelfTrainConfig& sc = config.selftrain;
  const DecodeOptions options{sc.nucleus_p, sc.max_len};
  const std::uint64_t iter_tag = 1;

  std::vector<LabeledPair> annotated(split.unlabeled.size());
  std::vector<ScoredCandidate> augmented_scores(split.unlabeled.size());
  for (std::size_t n = 0; n < split.unlabeled.size(); ++n) {
    const DecodeResult decode =
        sample(loaded.model, split.unlabeled[n], options,
               derive_seed(sc.seed, {seed_tag::kAnnotate, iter_tag, static_cast<std::uint64_t>(n)}));
    annotated[n] = {split.unlabeled[n], decode.tokens, Origin::Augmented};
    const UncertaintyScore score = estimate(
        loaded.model, annotated[n], sc.mc_samples,
        derive_seed(sc.seed, {seed_tag::kScoreAugmented, iter_tag, static_cast<std::uint64_t>(n)}),
        sc.normalized_likelihood);
    augmented_scores[n] = {static_cast<std::int64_t>(n), score.mean, score.variance};
  }
  std::vector<ScoredCandidate> gold_scores(split.train.size());
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    const UncertaintyScore score =
        estimate(loaded.model, split.train[i], sc.mc_samples,
                 derive_seed(sc.seed, {seed_tag::kScoreGold, iter_tag, static_cast<std::uint64_t>(i)}),
                 sc.normalized_likelihood);
    gold_scores[i] = {-static_cast<std::int64_t>(i) - 1, score.mean, score.variance};
  }
  save_pairs(out / "annotated.txt", annotated);

  const SelectionConfig selection_config{sc.strategy, sc.trim_fraction, sc.prefilter};
  const SelectionOutcome outcome = select(augmented_scores, gold_scores, selection_config);
  {
    std::ofstream os(out / "selection.tsv", std::ios::trunc);
    write_selection_report(os, outcome);
  }

  std::vector<std::pair<std::int64_t, MeaningRepresentation>> selected_mrs;
  for (std::int64_t id : outcome.selected)
    selected_mrs.emplace_back(id, split.unlabeled[static_cast<std::size_t>(id)]);
  RefinementConfig refine_config;
  refine_config.aggregation_count = sc.aggregation_count;
  refine_config.nucleus_p = sc.nucleus_p;
  refine_config.max_len = sc.max_len;
  refine_config.seed = derive_seed(sc.seed, {seed_tag::kRefine, iter_tag});
  refine_config.filter_enabled = sc.filter_enabled;
  const PseudoSetResult pseudo =
      build_pseudo_set(loaded.model, selected_mrs, refine_config, loaded.lexicon, sc.threads);
  save_pairs(out / "pseudo.txt", pseudo.pairs);
  {
    std::ofstream os(out / "provenance.tsv", std::ios::trunc);
    os << "id\tseed\taccepted\ttext\treasons\n";
    for (const auto& p : pseudo.provenance)
      os << p.id << '\t' << p.seed << '\t' << (p.accepted ? 1 : 0) << '\t' << p.text << '\t' << p.reasons
         << '\n';
  }
  std::cout << "annotated " << annotated.size() << ", selected " << outcome.selected.size() << ", kept "
            << pseudo.pairs.size() << '\n'
            << "artifacts under " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot MR-to-text generation with uncertainty-guided self-training"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "override the config seed")->group("global");

  std::string config_path, out_dir, checkpoint, test_path, hyp_file, unlabeled_path, train_path;
  std::string strategy_flag = "high_mean_high_var";
  bool resume = false, verbose = false;
  int k = 5, m_samples = 10, max_len = 64;
  double nucleus_p = 0.9;

  auto* synth = app.add_subcommand("synth", "synthesize a toy corpus onto disk");
  synth->add_option("-c,--config", config_path, "run config JSON")->required();
  synth->add_option("-o,--out", out_dir, "output directory");

  auto* train = app.add_subcommand("train", "warm-up training only");
  train->add_option("-c,--config", config_path, "run config JSON")->required();
  train->add_option("-o,--out", out_dir, "run directory");

  auto* selftrain = app.add_subcommand("selftrain", "full self-training run");
  selftrain->add_option("-c,--config", config_path, "run config JSON")->required();
  selftrain->add_option("-o,--out", out_dir, "run directory");
  selftrain->add_flag("--resume", resume, "continue an interrupted run");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a test file");
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--test", test_path, "combined-line test file")->required();
  eval->add_option("-k", k, "samples per MR, lowest slot error wins");
  eval->add_option("--hyp-file", hyp_file, "score these hypotheses instead of decoding");
  eval->add_option("--nucleus-p", nucleus_p, "nucleus threshold");
  eval->add_option("--max-len", max_len, "decode length cap");

  auto* inspect = app.add_subcommand("inspect", "uncertainty table for an unlabeled pool");
  inspect->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  inspect->add_option("--unlabeled", unlabeled_path, "MR-per-line pool")->required();
  inspect->add_option("-M", m_samples, "stochastic scorings per MR");
  inspect->add_option("--train", train_path, "gold pairs for full threshold lines");
  inspect->add_option("--strategy", strategy_flag, "selection strategy");
  inspect->add_flag("-v,--verbose", verbose, "include raw log samples");
  inspect->add_option("--nucleus-p", nucleus_p, "nucleus threshold");
  inspect->add_option("--max-len", max_len, "decode length cap");

  auto* augment = app.add_subcommand("augment", "annotate, select and refine without fine-tuning");
  augment->add_option("-c,--config", config_path, "run config JSON")->required();
  augment->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  augment->add_option("-o,--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  const std::string active = app.get_subcommands().front()->get_name();
  try {
    if (synth->parsed()) return cmd_synth(config_path, out_dir, seed);
    if (train->parsed()) return cmd_train(config_path, out_dir, seed);
    if (selftrain->parsed()) return cmd_selftrain(config_path, out_dir, resume, seed);
    if (eval->parsed()) return cmd_eval(checkpoint, test_path, k, hyp_file, nucleus_p, max_len, seed);
    if (inspect->parsed())
      return cmd_inspect(checkpoint, unlabeled_path, m_samples, train_path, strategy_flag, verbose,
                         nucleus_p, max_len, seed);
    if (augment->parsed()) return cmd_augment(config_path, checkpoint, out_dir, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << active << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
