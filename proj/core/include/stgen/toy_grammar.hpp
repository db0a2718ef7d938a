#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stgen/corpus.hpp"
#include "stgen/mr.hpp"

namespace stgen {

// Declarative MR-to-Text grammar for desk-scale runs. Each template belongs
// to an intent combination and is a space-separated pattern where
//   {slot}  realizes a concrete value of that slot (and adds slot = value)
//   [slot]  realizes the slot name itself (and adds slot = ?)
// Every placeholder must resolve to exactly one intent of its combination.
struct ToySlotSpec {
  std::string name;
  std::vector<std::string> values;  // concrete values; requested-only slots may hold just "?"
};

struct ToyIntentSpec {
  std::string name;
  std::vector<ToySlotSpec> slots;
};

struct ToyTemplateSpec {
  std::vector<std::string> intents;  // combination, in MR order
  std::string pattern;
};

struct ToyGrammarSpec {
  std::vector<ToyIntentSpec> intents;
  std::vector<ToyTemplateSpec> templates;
  std::uint64_t seed = 0;
};

// A compact default grammar (restaurant-flavoured, two intents) whose
// instance space is large enough for few-shot experiments with hundreds of
// unlabeled MRs.
ToyGrammarSpec default_toy_grammar();

// Validates the grammar; throws SpecError naming the offending template or
// placeholder.
void validate_grammar(const ToyGrammarSpec& spec);

// Number of distinct (template, value assignment) instances.
std::uint64_t grammar_cardinality(const ToyGrammarSpec& spec);

// All instances the grammar can produce, as gold pairs; response text is the
// realized template, so every pair matches its MR exactly.
std::vector<LabeledPair> enumerate_grammar(const ToyGrammarSpec& spec);

// Deterministic split synthesis: enumerates the instance space, shuffles it
// with the grammar seed and deals train/dev/test/unlabeled. Unlabeled MRs
// are deduplicated and disjoint from train MRs while the pool allows; dev
// and test wrap around the non-train region when it is too small.
DataSplit synth_toy_corpus(const ToyGrammarSpec& spec, std::size_t n_train, std::size_t n_dev,
                           std::size_t n_test, std::size_t n_unlabeled);

}  // namespace stgen
