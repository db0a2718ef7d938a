#include "stgen/lexicon.hpp"

#include <algorithm>

#include "stgen/tokens.hpp"

namespace stgen {

const std::vector<std::string>& stopwords() {
  static const std::vector<std::string> kStopwords = {
      "the", "a",  "an", "of",  "in",  "on",  "at", "is",  "are", "was", "be",  "to",  "for",
      "and", "or", "it", "you", "i",   "we",  "do", "did", "not", "have", "has", "with", "that",
      "this", "there", "what", "which", "would", "like", "your"};
  return kStopwords;
}

void ValueLexicon::insert_value(const std::string& value) {
  const std::string lowered = lowercase(value);
  if (lowered.size() < 3) return;
  const auto& stop = stopwords();
  if (std::find(stop.begin(), stop.end(), lowered) != stop.end()) return;
  std::vector<std::string> toks = tokenize(lowered);
  if (toks.empty()) return;
  sequences_.push_back(std::move(toks));
}

void ValueLexicon::finalize() {
  std::sort(sequences_.begin(), sequences_.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return a < b;
  });
  sequences_.erase(std::unique(sequences_.begin(), sequences_.end()), sequences_.end());
}

ValueLexicon ValueLexicon::build(std::span<const LabeledPair> gold,
                                 std::span<const MeaningRepresentation> unlabeled,
                                 const std::vector<std::string>& ignored) {
  ValueLexicon lex;
  for (const auto& pair : gold)
    for (const auto& [name, value] : concrete_slot_values(pair.mr, ignored)) lex.insert_value(value);
  for (const auto& mr : unlabeled)
    for (const auto& [name, value] : concrete_slot_values(mr, ignored)) lex.insert_value(value);
  lex.finalize();
  return lex;
}

ValueLexicon ValueLexicon::from_values(std::span<const std::string> values) {
  ValueLexicon lex;
  for (const auto& v : values) lex.insert_value(v);
  lex.finalize();
  return lex;
}

std::vector<std::string> ValueLexicon::values() const {
  std::vector<std::string> out;
  out.reserve(sequences_.size());
  for (const auto& seq : sequences_) out.push_back(join_tokens(seq));
  return out;
}

}  // namespace stgen
