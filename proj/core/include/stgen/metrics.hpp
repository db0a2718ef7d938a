#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stgen/decode.hpp"
#include "stgen/generator.hpp"
#include "stgen/lexicon.hpp"
#include "stgen/mr.hpp"

namespace stgen {

// Slot error breakdown for one (MR, response) pair:
//   missing    p  — concrete values absent from the response (multiset
//                   semantics) plus requested slots whose name is absent
//   redundant  q  — lexicon values present but not required, counted per
//                   occurrence, plus surplus occurrences of required values
//   total      N  — all slots of the MR, requested and ignore-valued
//                   included. Slots carrying control values ("none", ...)
//                   count toward N but are never matched.
// err = (p+q)/N; an MR with zero slots has err 0 by convention.
struct ErrBreakdown {
  int missing = 0;
  int redundant = 0;
  int total = 0;

  double err() const { return total > 0 ? static_cast<double>(missing + redundant) / total : 0.0; }
  bool defined() const { return total > 0; }
};

using SynonymMap = std::map<std::string, std::vector<std::string>>;

ErrBreakdown compute_err(const MeaningRepresentation& mr, std::span<const std::string> text_tokens,
                         const ValueLexicon& lexicon);

// Corpus aggregate: (sum p + sum q) / (sum N).
struct ErrTotals {
  long missing = 0;
  long redundant = 0;
  long total = 0;
  void add(const ErrBreakdown& b) {
    missing += b.missing;
    redundant += b.redundant;
    total += b.total;
  }
  double err() const { return total > 0 ? static_cast<double>(missing + redundant) / total : 0.0; }
};

// Slot-match acceptance used before admitting a refined response. Rejects on
// any missing concrete value, any unmentioned requested slot name (synonyms
// allowed), or any redundant lexicon value.
struct FilterCheck {
  bool accepted = true;
  std::vector<std::string> reasons;  // one line per performed check
};

FilterCheck slot_match_filter(const MeaningRepresentation& mr, std::span<const std::string> text_tokens,
                              const ValueLexicon& lexicon, const SynonymMap& synonyms = {});

// Corpus BLEU-4: geometric mean of modified n-gram precisions with brevity
// penalty, one or more references per hypothesis, zero precisions smoothed
// to 1e-9. Returns a score in [0, 100].
double corpus_bleu(std::span<const std::vector<std::string>> hypotheses,
                   std::span<const std::vector<std::vector<std::string>>> references);

// Single-reference convenience overload.
double corpus_bleu_single(std::span<const std::vector<std::string>> hypotheses,
                          std::span<const std::vector<std::string>> references);

// Draws k nucleus samples (sample i seeded seed+i) and returns the one with
// the lowest slot error rate; ties broken by higher model log-likelihood,
// then by sample index.
struct BestOfK {
  DecodeResult decode;
  ErrBreakdown err;
  int index = 0;
};

BestOfK best_of_k(const Generator& model, const MeaningRepresentation& mr, int k, const ValueLexicon& lexicon,
                  const DecodeOptions& options, std::uint64_t seed);

}  // namespace stgen
