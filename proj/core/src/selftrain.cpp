#include "stgen/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "stgen/metrics.hpp"
#include "stgen/parallel.hpp"
#include "stgen/tokens.hpp"
#include "stgen/uncertainty.hpp"

namespace stgen {

namespace {

using nlohmann::json;

json config_json(const SelfTrainConfig& c, const ArchitectureConfig& a) {
  json j;
  j["iterations"] = c.iterations;
  j["mc_samples"] = c.mc_samples;
  j["aggregation_count"] = c.aggregation_count;
  j["nucleus_p"] = c.nucleus_p;
  j["trim_fraction"] = c.trim_fraction;
  j["strategy"] = std::string(strategy_name(c.strategy));
  j["prefilter"] = c.prefilter;
  j["filter_enabled"] = c.filter_enabled;
  j["normalized_likelihood"] = c.normalized_likelihood;
  j["warmup_epochs"] = c.warmup_epochs;
  j["epochs_per_iteration"] = c.epochs_per_iteration;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["weight_decay"] = c.weight_decay;
  j["gold_fraction"] = c.gold_fraction;
  j["dev_k"] = c.dev_k;
  j["eval_k"] = c.eval_k;
  j["max_len"] = c.max_len;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["model"] = {{"arch", std::string(arch_kind_name(a.kind))},
                {"embed_dim", a.embed_dim},
                {"hidden_dim", a.hidden_dim},
                {"layers", a.layers},
                {"max_positions", a.max_positions},
                {"dropout", a.dropout_rate}};
  return j;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << content;
  }
  std::filesystem::rename(tmp, path);
}

json row_to_json(const IterationRow& r) {
  json j;
  j["iteration"] = r.iteration;
  j["annotated"] = r.annotated;
  j["selected"] = r.selected;
  j["pseudo"] = r.pseudo;
  j["mu_a"] = r.mu_a;
  j["mean_threshold"] = r.mean_threshold;
  j["variance_threshold"] = r.variance_threshold;
  j["train_loss"] = r.train_loss;
  j["dev_bleu"] = r.dev_bleu;
  j["dev_err"] = r.dev_err;
  j["degenerate"] = r.degenerate;
  return j;
}

IterationRow row_from_json(const json& j) {
  IterationRow r;
  r.iteration = j.at("iteration").get<int>();
  r.annotated = j.at("annotated").get<std::size_t>();
  r.selected = j.at("selected").get<std::size_t>();
  r.pseudo = j.at("pseudo").get<std::size_t>();
  r.mu_a = j.at("mu_a").get<double>();
  r.mean_threshold = j.at("mean_threshold").get<double>();
  r.variance_threshold = j.at("variance_threshold").get<double>();
  r.train_loss = j.at("train_loss").get<double>();
  r.dev_bleu = j.at("dev_bleu").get<double>();
  r.dev_err = j.at("dev_err").get<double>();
  r.degenerate = j.at("degenerate").get<bool>();
  return r;
}

void write_metrics_table(std::ostream& os, std::span<const IterationRow> rows) {
  os << "iteration\tannotated\tselected\tpseudo\tmu_a\tmean_threshold\tvariance_threshold"
     << "\ttrain_loss\tdev_bleu\tdev_err\tdegenerate\n";
  for (const auto& r : rows) {
    os << r.iteration << '\t' << r.annotated << '\t' << r.selected << '\t' << r.pseudo << '\t' << r.mu_a
       << '\t' << r.mean_threshold << '\t' << r.variance_threshold << '\t' << r.train_loss << '\t'
       << r.dev_bleu << '\t' << r.dev_err << '\t' << (r.degenerate ? 1 : 0) << '\n';
  }
}

}  // namespace

EvalResult evaluate_pairs(const Generator& model, std::span<const LabeledPair> pairs,
                          const ValueLexicon& lexicon, int k, const DecodeOptions& options,
                          std::uint64_t seed, int threads) {
  // Group by canonical MR; every gold text becomes a reference.
  std::vector<MeaningRepresentation> mrs;
  std::vector<std::vector<std::vector<std::string>>> references;
  std::map<std::string, std::size_t> index;
  for (const auto& pair : pairs) {
    const std::string key = render_mr(pair.mr);
    auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(key, mrs.size());
      mrs.push_back(pair.mr);
      references.push_back({pair.text});
    } else {
      references[it->second].push_back(pair.text);
    }
  }

  std::vector<std::vector<std::string>> hypotheses(mrs.size());
  std::vector<ErrBreakdown> errs(mrs.size());
  parallel_for(mrs.size(), threads, [&](std::size_t i) {
    const BestOfK best = best_of_k(model, mrs[i], k, lexicon, options,
                                   derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    hypotheses[i] = best.decode.tokens;
    errs[i] = best.err;
  });

  EvalResult result;
  result.n_mrs = mrs.size();
  if (mrs.empty()) return result;
  result.bleu = corpus_bleu(hypotheses, references);
  ErrTotals totals;
  for (const auto& e : errs) totals.add(e);
  result.err = totals.err();
  return result;
}

SelfTrainDriver::SelfTrainDriver(SelfTrainConfig config, ArchitectureConfig arch, DataSplit split,
                                 std::filesystem::path run_dir, bool resume)
    : config_(std::move(config)), arch_(arch), split_(std::move(split)), run_dir_(std::move(run_dir)) {
  if (config_.iterations < 1) throw ConfigError("iterations must be >= 1");
  if (config_.mc_samples < 2) throw ConfigError("mc_samples must be >= 2");
  if (config_.aggregation_count < 1) throw ConfigError("aggregation_count must be >= 1");
  if (config_.gold_fraction < 0.0 || config_.gold_fraction >= 1.0)
    throw ConfigError("gold_fraction must be in [0, 1)");
  if (split_.train.empty()) throw ConfigError("training split is empty");

  lexicon_ = ValueLexicon::build(split_.train, split_.unlabeled);
  const std::string canonical = config_json(config_, arch_).dump(2);
  const auto state_path = run_dir_ / "state.json";

  if (!resume) {
    if (std::filesystem::exists(state_path))
      throw ConfigError("run directory already holds a run; pass resume to continue: " + run_dir_.string());
    std::filesystem::create_directories(run_dir_);
    model_.emplace(arch_, Vocab::build(split_.train, split_.unlabeled),
                   derive_seed(config_.seed, {seed_tag::kInit}));
    write_file_atomic(run_dir_ / "selftrain_config.json", canonical + "\n");
    return;
  }

  if (!std::filesystem::exists(state_path))
    throw ConfigError("cannot resume: no state.json under " + run_dir_.string());
  json state;
  {
    std::ifstream is(state_path);
    is >> state;
  }
  if (state.at("config").dump(2) != canonical)
    throw ConfigError("cannot resume: configuration differs from the stored run");
  completed_ = state.at("completed").get<int>();
  best_iteration_ = state.at("best_iteration").get<int>();
  best_dev_bleu_ = state.at("best_dev_bleu").get<double>();
  rows_.clear();
  for (const auto& rj : state.at("rows")) rows_.push_back(row_from_json(rj));

  const Checkpoint ckpt = load_checkpoint(stage_checkpoint(completed_).string());
  model_.emplace(ckpt.restore());
  const Vocab rebuilt = Vocab::build(split_.train, split_.unlabeled);
  if (rebuilt.tokens() != model_->vocab().tokens())
    throw ConfigError("cannot resume: data split does not match the stored run");
}

std::filesystem::path SelfTrainDriver::stage_dir(int iteration) const {
  if (iteration == 0) return run_dir_ / "warmup";
  std::ostringstream name;
  name << "iter_" << std::setw(3) << std::setfill('0') << iteration;
  return run_dir_ / name.str();
}

std::filesystem::path SelfTrainDriver::stage_checkpoint(int iteration) const {
  return stage_dir(iteration) / "model.ckpt";
}

EvalResult SelfTrainDriver::eval_dev(int iteration) const {
  const DecodeOptions options{config_.nucleus_p, config_.max_len};
  return evaluate_pairs(*model_, split_.dev, lexicon_, config_.dev_k, options,
                        derive_seed(config_.seed, {seed_tag::kDevEval, static_cast<std::uint64_t>(iteration)}),
                        config_.threads);
}

void SelfTrainDriver::update_best(const IterationRow& row) {
  if (row.dev_bleu > best_dev_bleu_) {
    best_dev_bleu_ = row.dev_bleu;
    best_iteration_ = row.iteration;
  }
}

void SelfTrainDriver::persist_state() {
  json state;
  state["schema"] = 1;
  state["config"] = config_json(config_, arch_);
  state["completed"] = completed_;
  state["best_iteration"] = best_iteration_;
  state["best_dev_bleu"] = best_dev_bleu_;
  state["rows"] = json::array();
  for (const auto& r : rows_) state["rows"].push_back(row_to_json(r));
  write_file_atomic(run_dir_ / "state.json", state.dump(2) + "\n");

  std::ostringstream metrics;
  write_metrics_table(metrics, rows_);
  write_file_atomic(run_dir_ / "metrics.tsv", metrics.str());
}

void SelfTrainDriver::warm_up() {
  std::filesystem::create_directories(stage_dir(0));
  IterationRow row;
  row.iteration = 0;
  if (config_.warmup_epochs > 0) {
    const TrainOptions options{config_.warmup_epochs, config_.lr, config_.batch_size, config_.weight_decay,
                               derive_seed(config_.seed, {seed_tag::kWarmup})};
    const TrainingReport report = model_->train_epochs(split_.train, options);
    if (!report.epoch_loss.empty()) row.train_loss = report.epoch_loss.back();
  }
  const EvalResult dev = eval_dev(0);
  row.dev_bleu = dev.bleu;
  row.dev_err = dev.err;
  save_checkpoint(stage_checkpoint(0).string(), *model_, lexicon_.values());
  update_best(row);
  rows_.push_back(row);
  completed_ = 0;
  persist_state();
}

void SelfTrainDriver::run_iteration(int s) {
  const auto dir = stage_dir(s);
  std::filesystem::create_directories(dir);
  const std::uint64_t iter_tag = static_cast<std::uint64_t>(s);
  const DecodeOptions decode_options{config_.nucleus_p, config_.max_len};

  IterationRow row;
  row.iteration = s;

  // Synthetic annotation: one sampled response per unlabeled MR.
  std::vector<LabeledPair> annotated(split_.unlabeled.size());
  parallel_for(split_.unlabeled.size(), config_.threads, [&](std::size_t n) {
    const DecodeResult decode =
        sample(*model_, split_.unlabeled[n], decode_options,
               derive_seed(config_.seed, {seed_tag::kAnnotate, iter_tag, static_cast<std::uint64_t>(n)}));
    annotated[n] = {split_.unlabeled[n], decode.tokens, Origin::Augmented};
  });
  row.annotated = annotated.size();
  save_pairs(dir / "annotated.txt", annotated);

  // Stochastic scoring of the annotated pool and the gold set.
  std::vector<ScoredCandidate> augmented_scores(annotated.size());
  parallel_for(annotated.size(), config_.threads, [&](std::size_t n) {
    const UncertaintyScore score = estimate(
        *model_, annotated[n], config_.mc_samples,
        derive_seed(config_.seed, {seed_tag::kScoreAugmented, iter_tag, static_cast<std::uint64_t>(n)}),
        config_.normalized_likelihood);
    augmented_scores[n] = {static_cast<std::int64_t>(n), score.mean, score.variance};
  });
  std::vector<ScoredCandidate> gold_scores(split_.train.size());
  parallel_for(split_.train.size(), config_.threads, [&](std::size_t i) {
    const UncertaintyScore score = estimate(
        *model_, split_.train[i], config_.mc_samples,
        derive_seed(config_.seed, {seed_tag::kScoreGold, iter_tag, static_cast<std::uint64_t>(i)}),
        config_.normalized_likelihood);
    gold_scores[i] = {-static_cast<std::int64_t>(i) - 1, score.mean, score.variance};
  });

  const SelectionConfig selection_config{config_.strategy, config_.trim_fraction, config_.prefilter};
  const SelectionOutcome outcome = select(augmented_scores, gold_scores, selection_config);
  row.selected = outcome.selected.size();
  row.mu_a = outcome.mu_a;
  row.mean_threshold = outcome.mean_threshold;
  row.variance_threshold = outcome.variance_threshold;
  {
    std::ostringstream report;
    write_selection_report(report, outcome);
    write_file_atomic(dir / "selection.tsv", report.str());
  }

  // Refinement of the selected MRs.
  std::vector<std::pair<std::int64_t, MeaningRepresentation>> selected_mrs;
  selected_mrs.reserve(outcome.selected.size());
  for (std::int64_t id : outcome.selected)
    selected_mrs.emplace_back(id, split_.unlabeled[static_cast<std::size_t>(id)]);
  RefinementConfig refine_config;
  refine_config.aggregation_count = config_.aggregation_count;
  refine_config.nucleus_p = config_.nucleus_p;
  refine_config.max_len = config_.max_len;
  refine_config.seed = derive_seed(config_.seed, {seed_tag::kRefine, iter_tag});
  refine_config.filter_enabled = config_.filter_enabled;
  const PseudoSetResult pseudo = build_pseudo_set(*model_, selected_mrs, refine_config, lexicon_,
                                                  config_.threads);
  row.pseudo = pseudo.pairs.size();
  save_pairs(dir / "pseudo.txt", pseudo.pairs);
  {
    std::ostringstream prov;
    prov << "id\tseed\taccepted\ttext\treasons\n";
    for (const auto& p : pseudo.provenance)
      prov << p.id << '\t' << p.seed << '\t' << (p.accepted ? 1 : 0) << '\t' << p.text << '\t' << p.reasons
           << '\n';
    write_file_atomic(dir / "provenance.tsv", prov.str());
  }

  // Fine-tune on gold plus pseudo pairs, oversampling gold to its floor share.
  std::vector<LabeledPair> mixture;
  if (pseudo.pairs.empty()) {
    row.degenerate = true;
    mixture = split_.train;
  } else {
    const double g = config_.gold_fraction;
    std::size_t copies = 1;
    if (g > 0.0) {
      const double needed = g * static_cast<double>(pseudo.pairs.size()) /
                            ((1.0 - g) * static_cast<double>(split_.train.size()));
      copies = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(needed)));
    }
    for (std::size_t c = 0; c < copies; ++c)
      mixture.insert(mixture.end(), split_.train.begin(), split_.train.end());
    mixture.insert(mixture.end(), pseudo.pairs.begin(), pseudo.pairs.end());
  }
  const TrainOptions train_options{config_.epochs_per_iteration, config_.lr, config_.batch_size,
                                   config_.weight_decay,
                                   derive_seed(config_.seed, {seed_tag::kFineTune, iter_tag})};
  const TrainingReport report = model_->train_epochs(mixture, train_options);
  if (!report.epoch_loss.empty()) row.train_loss = report.epoch_loss.back();

  const EvalResult dev = eval_dev(s);
  row.dev_bleu = dev.bleu;
  row.dev_err = dev.err;
  save_checkpoint(stage_checkpoint(s).string(), *model_, lexicon_.values());
  update_best(row);
  rows_.push_back(row);
  completed_ = s;
  persist_state();
}

const IterationRow& SelfTrainDriver::step() {
  if (completed_ < 0) {
    warm_up();
  } else if (completed_ < config_.iterations) {
    run_iteration(completed_ + 1);
  } else {
    throw Error("all self-training iterations already completed");
  }
  return rows_.back();
}

RunReport SelfTrainDriver::finalize() {
  if (completed_ < 0) throw Error("finalize before warm-up");

  // Evaluate from the restored best checkpoint so the report reflects the
  // persisted artifact, not in-memory state.
  const auto best_path = stage_checkpoint(best_iteration_);
  std::filesystem::copy_file(best_path, run_dir_ / "best.ckpt",
                             std::filesystem::copy_options::overwrite_existing);
  const Checkpoint ckpt = load_checkpoint(best_path.string());
  const BuiltinModel best_model = ckpt.restore();

  RunReport report;
  report.rows = rows_;
  report.best_iteration = best_iteration_;
  report.best_dev_bleu = best_dev_bleu_;
  if (!split_.test.empty()) {
    const DecodeOptions options{config_.nucleus_p, config_.max_len};
    const EvalResult test = evaluate_pairs(best_model, split_.test, lexicon_, config_.eval_k, options,
                                           derive_seed(config_.seed, {seed_tag::kTestEval}), config_.threads);
    report.test_bleu = test.bleu;
    report.test_err = test.err;
  }

  std::ostringstream os;
  os << "self-training run report\n";
  os << "strategy " << strategy_name(config_.strategy) << ", iterations " << config_.iterations
     << ", mc_samples " << config_.mc_samples << ", aggregation " << config_.aggregation_count << ", seed "
     << config_.seed << "\n\n";
  write_metrics_table(os, rows_);
  os << "\nbest stage\t" << report.best_iteration << "\tdev_bleu\t" << report.best_dev_bleu << '\n';
  os << "test_bleu\t" << report.test_bleu << "\ttest_err\t" << report.test_err << '\n';
  write_file_atomic(run_dir_ / "report.txt", os.str());
  return report;
}

RunReport run_selftrain(const SelfTrainConfig& config, const ArchitectureConfig& arch, const DataSplit& split,
                        const std::filesystem::path& run_dir, bool resume) {
  SelfTrainDriver driver(config, arch, split, run_dir, resume);
  while (!driver.done()) driver.step();
  return driver.finalize();
}

}  // namespace stgen
