#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "stgen/common.hpp"

namespace stgen {

// The four threshold predicates compared in the strategy study. The default
// keeps candidates the model likes (mean above threshold) but is still
// unsure about (variance above threshold).
enum class SelectionStrategy { HighMeanHighVar, HighMeanLowVar, LowMeanHighVar, LowMeanLowVar };

std::string_view strategy_name(SelectionStrategy s);
SelectionStrategy parse_strategy(std::string_view name);

struct SelectionConfig {
  SelectionStrategy strategy = SelectionStrategy::HighMeanHighVar;
  double trim_fraction = 0.01;  // per tail, [0, 0.5)
  bool prefilter = true;        // drop augmented pairs below the corpus mean
};

struct ScoredCandidate {
  std::int64_t id = 0;
  double mean = 0.0;
  double variance = 0.0;
};

struct CandidateDecision {
  std::int64_t id = 0;
  double mean = 0.0;
  double variance = 0.0;
  bool gold = false;
  bool survived_prefilter = false;
  bool selected = false;
  std::string reason;
};

struct SelectionOutcome {
  std::vector<std::int64_t> selected;  // ascending id
  double mu_a = 0.0;                   // corpus mean of the augmented pool
  double mean_threshold = 0.0;         // over the trimmed gold+survivor pool
  double variance_threshold = 0.0;
  std::size_t pool_n = 0;              // datapoints entering each threshold
  bool empty_pool_warning = false;     // nothing survived prefiltering
  std::vector<CandidateDecision> decisions;
};

// Filters and selects augmented candidates:
//   1. prefilter: drop augmented pairs with mean < mu_A (corpus mean of the
//      augmented scores);
//   2. pool the gold scores with the survivors;
//   3. per statistic, sort the pool by that statistic, trim
//      ceil(trim_fraction * pool) datapoints from each end (skipped for
//      pools smaller than 3, capped so the pool never empties) and take the
//      mean of the remainder as the threshold;
//   4. apply the strategy predicate (strict inequalities) to augmented
//      survivors only. Gold pairs shape the thresholds but are never
//      selected. Invariant to input order; ties broken by id.
SelectionOutcome select(std::span<const ScoredCandidate> augmented, std::span<const ScoredCandidate> gold,
                        const SelectionConfig& config);

// Tab-separated selection report, one row per candidate plus threshold
// comment lines.
void write_selection_report(std::ostream& os, const SelectionOutcome& outcome);

}  // namespace stgen
