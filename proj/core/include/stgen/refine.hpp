#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stgen/decode.hpp"
#include "stgen/generator.hpp"
#include "stgen/metrics.hpp"

namespace stgen {

struct RefinementConfig {
  int aggregation_count = 10;  // stream replicas averaged per step (R)
  double nucleus_p = 0.9;
  int max_len = 64;
  std::uint64_t seed = 0;
  bool filter_enabled = true;
  SynonymMap synonyms;
};

// Decodes a refined response: at every step the pre-softmax hidden vectors
// of R independently seeded stochastic replicas (mask seeds seed..seed+R-1)
// are averaged, softmaxed once, and nucleus-sampled. With R=1 this is
// exactly a single stochastic pass; with dropout rate 0 it is exactly plain
// sampling.
DecodeResult refine_decode(const Generator& model, const MeaningRepresentation& mr,
                           const RefinementConfig& config, std::vector<StepTrace>* trace = nullptr);

struct ProvenanceRow {
  std::int64_t id = 0;
  std::uint64_t seed = 0;
  bool accepted = false;
  std::string text;
  std::string reasons;  // "; "-joined failed checks, empty when accepted
};

struct PseudoSetResult {
  std::vector<LabeledPair> pairs;  // origin PseudoLabeled
  std::vector<ProvenanceRow> provenance;
  std::map<std::string, int> rejection_counts;  // reason -> count
};

// Refines every selected MR and keeps the responses that pass the slot-match
// filter (all of them when the filter is disabled). MR n decodes under
// derive(config.seed, n) so jobs are order-independent.
PseudoSetResult build_pseudo_set(const Generator& model,
                                 std::span<const std::pair<std::int64_t, MeaningRepresentation>> selected,
                                 const RefinementConfig& config, const ValueLexicon& lexicon, int threads = 1);

}  // namespace stgen
