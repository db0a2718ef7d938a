#pragma once

#include <span>
#include <string>
#include <vector>

#include "stgen/mr.hpp"

namespace stgen {

// Domain slot-value lexicon used for redundancy checks: every concrete value
// seen in the gold pairs and the unlabeled MR pool, lowercased and
// tokenized, minus stopwords and values shorter than 3 characters.
class ValueLexicon {
 public:
  ValueLexicon() = default;

  static ValueLexicon build(std::span<const LabeledPair> gold, std::span<const MeaningRepresentation> unlabeled,
                            const std::vector<std::string>& ignored = default_ignored_values());

  // Round-trips through checkpoints as plain value strings.
  static ValueLexicon from_values(std::span<const std::string> values);
  std::vector<std::string> values() const;

  // Token sequences sorted longest-first (then lexicographic), the matching
  // order used by the redundancy scan.
  const std::vector<std::vector<std::string>>& token_sequences() const { return sequences_; }

  bool empty() const { return sequences_.empty(); }
  std::size_t size() const { return sequences_.size(); }

 private:
  void insert_value(const std::string& value);
  void finalize();

  std::vector<std::vector<std::string>> sequences_;
};

const std::vector<std::string>& stopwords();

}  // namespace stgen
