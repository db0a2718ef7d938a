#pragma once

#include <cstdint>
#include <vector>

#include "stgen/generator.hpp"

namespace stgen {

struct DecodeOptions {
  double nucleus_p = 0.9;
  int max_len = 64;
};

struct DecodeResult {
  std::vector<std::string> tokens;
  std::vector<int> ids;      // response ids, EOS excluded
  double logprob = 0.0;      // log-likelihood of the emitted tokens (incl. EOS)
  bool truncated = false;    // hit max_len before EOS
};

// Per-step record of the aggregated distribution, for diagnostics and tests.
struct StepTrace {
  std::vector<double> hidden;
  std::vector<double> distribution;
  int chosen = -1;
};

// Decodes a response for `mr` by running `n_streams` parallel stream
// replicas, averaging their pre-softmax hidden vectors at every step, taking
// a single softmax and nucleus-sampling from the result. Stream i runs under
// mask_seed_base + i when stochastic; with dropout rate 0 all replicas are
// identical, so a single disabled stream is used and the output matches
// plain sampling exactly.
DecodeResult aggregated_decode(const Generator& model, const MeaningRepresentation& mr, int n_streams,
                               bool stochastic, const DecodeOptions& options, std::uint64_t seed,
                               std::vector<StepTrace>* trace = nullptr);

// Plain nucleus sampling: one deterministic (dropout-disabled) stream.
DecodeResult sample(const Generator& model, const MeaningRepresentation& mr, const DecodeOptions& options,
                    std::uint64_t seed);

// Nucleus truncation of a distribution: returns the sampled index given a
// uniform draw in [0,1). Exposed for the oracle tests.
int nucleus_pick(std::span<const double> distribution, double nucleus_p, double uniform_draw);

}  // namespace stgen
