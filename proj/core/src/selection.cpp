#include "stgen/selection.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace stgen {

std::string_view strategy_name(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::HighMeanHighVar:
      return "high_mean_high_var";
    case SelectionStrategy::HighMeanLowVar:
      return "high_mean_low_var";
    case SelectionStrategy::LowMeanHighVar:
      return "low_mean_high_var";
    case SelectionStrategy::LowMeanLowVar:
      return "low_mean_low_var";
  }
  return "unknown";
}

SelectionStrategy parse_strategy(std::string_view name) {
  if (name == "high_mean_high_var") return SelectionStrategy::HighMeanHighVar;
  if (name == "high_mean_low_var") return SelectionStrategy::HighMeanLowVar;
  if (name == "low_mean_high_var") return SelectionStrategy::LowMeanHighVar;
  if (name == "low_mean_low_var") return SelectionStrategy::LowMeanLowVar;
  throw ConfigError("unknown selection strategy: " + std::string(name));
}

namespace {

// Mean of the pool after trimming `trim` entries from each end when sorted
// by `key` (ties by id). Returns the count that entered the mean.
template <typename Key>
std::pair<double, std::size_t> trimmed_mean(std::vector<ScoredCandidate> pool, double trim_fraction, Key key) {
  std::sort(pool.begin(), pool.end(), [&](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (key(a) != key(b)) return key(a) < key(b);
    return a.id < b.id;
  });
  std::size_t trim = 0;
  if (pool.size() >= 3 && trim_fraction > 0.0) {
    trim = static_cast<std::size_t>(std::ceil(trim_fraction * static_cast<double>(pool.size())));
    trim = std::min(trim, (pool.size() - 1) / 2);  // never trim to emptiness
  }
  double sum = 0.0;
  const std::size_t lo = trim, hi = pool.size() - trim;
  for (std::size_t i = lo; i < hi; ++i) sum += key(pool[i]);
  const std::size_t n = hi - lo;
  return {n > 0 ? sum / static_cast<double>(n) : 0.0, n};
}

}  // namespace

SelectionOutcome select(std::span<const ScoredCandidate> augmented, std::span<const ScoredCandidate> gold,
                        const SelectionConfig& config) {
  if (config.trim_fraction < 0.0 || config.trim_fraction >= 0.5)
    throw ConfigError("trim_fraction must be in [0, 0.5)");

  SelectionOutcome out;

  // Corpus-level mean over the augmented scores.
  double mu_a = 0.0;
  if (!augmented.empty()) {
    for (const auto& c : augmented) mu_a += c.mean;
    mu_a /= static_cast<double>(augmented.size());
  }
  out.mu_a = mu_a;

  std::vector<ScoredCandidate> survivors;
  for (const auto& c : augmented) {
    const bool keep = !config.prefilter || c.mean >= mu_a;
    if (keep) survivors.push_back(c);
    CandidateDecision d;
    d.id = c.id;
    d.mean = c.mean;
    d.variance = c.variance;
    d.survived_prefilter = keep;
    if (!keep) d.reason = "prefilter: mean below corpus mean";
    out.decisions.push_back(d);
  }
  for (const auto& c : gold) {
    CandidateDecision d;
    d.id = c.id;
    d.mean = c.mean;
    d.variance = c.variance;
    d.gold = true;
    d.survived_prefilter = true;
    d.reason = "gold: threshold pool only";
    out.decisions.push_back(d);
  }

  if (survivors.empty()) {
    out.empty_pool_warning = true;
    return out;
  }

  std::vector<ScoredCandidate> pool(gold.begin(), gold.end());
  pool.insert(pool.end(), survivors.begin(), survivors.end());

  const auto [mean_thr, n_mean] =
      trimmed_mean(pool, config.trim_fraction, [](const ScoredCandidate& c) { return c.mean; });
  const auto [var_thr, n_var] =
      trimmed_mean(pool, config.trim_fraction, [](const ScoredCandidate& c) { return c.variance; });
  out.mean_threshold = mean_thr;
  out.variance_threshold = var_thr;
  out.pool_n = n_mean;  // both statistics trim the same count
  (void)n_var;

  const bool want_high_mean = config.strategy == SelectionStrategy::HighMeanHighVar ||
                              config.strategy == SelectionStrategy::HighMeanLowVar;
  const bool want_high_var = config.strategy == SelectionStrategy::HighMeanHighVar ||
                             config.strategy == SelectionStrategy::LowMeanHighVar;

  for (const auto& c : survivors) {
    const bool mean_ok = want_high_mean ? c.mean > mean_thr : c.mean < mean_thr;
    const bool var_ok = want_high_var ? c.variance > var_thr : c.variance < var_thr;
    if (mean_ok && var_ok) out.selected.push_back(c.id);
  }
  std::sort(out.selected.begin(), out.selected.end());

  for (auto& d : out.decisions) {
    if (d.gold || !d.survived_prefilter) continue;
    const bool mean_ok = want_high_mean ? d.mean > mean_thr : d.mean < mean_thr;
    const bool var_ok = want_high_var ? d.variance > var_thr : d.variance < var_thr;
    d.selected = mean_ok && var_ok;
    std::ostringstream reason;
    reason << "mean " << (d.mean > mean_thr ? ">" : "<=") << " threshold, variance "
           << (d.variance > var_thr ? ">" : "<=") << " threshold";
    d.reason = reason.str();
  }
  return out;
}

void write_selection_report(std::ostream& os, const SelectionOutcome& outcome) {
  os << "id\tmean\tvariance\tgold\tsurvived_prefilter\tselected\treason\n";
  for (const auto& d : outcome.decisions) {
    os << d.id << '\t' << d.mean << '\t' << d.variance << '\t' << (d.gold ? 1 : 0) << '\t'
       << (d.survived_prefilter ? 1 : 0) << '\t' << (d.selected ? 1 : 0) << '\t' << d.reason << '\n';
  }
  os << "# mu_a\t" << outcome.mu_a << '\n';
  os << "# mean_threshold\t" << outcome.mean_threshold << '\n';
  os << "# variance_threshold\t" << outcome.variance_threshold << '\n';
  os << "# pool_n\t" << outcome.pool_n << '\n';
  if (outcome.empty_pool_warning) os << "# warning\tempty pool after prefilter\n";
}

}  // namespace stgen
