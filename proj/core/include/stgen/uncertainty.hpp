#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stgen/generator.hpp"

namespace stgen {

// Predictive mean and variance of the model likelihood of one pair, from M
// stochastic forward passes.
struct UncertaintyScore {
  double mean = 0.0;                    // E[p], in (0,1] when normalized
  double variance = 0.0;                // biased (1/M) estimator, >= 0
  int samples = 0;                      // M
  std::vector<double> raw_log_samples;  // per-pass sequence log-likelihoods
  int response_len = 0;                 // scored positions (response + EOS)
  bool normalized = true;               // statistics over exp(logprob / len)
};

// Mean/variance from likelihoods given in log space. The mean is computed as
// exp(LSE(logs) - log M) and the variance through the second moment, also in
// log space, so raw sequence likelihoods never leave log space until the
// final exponentiation. Identical inputs give variance exactly 0.
UncertaintyScore score_from_logs(std::span<const double> log_likelihoods);

// M independently seeded stochastic scorings of `pair`. Sample i uses mask
// seed derive(seed, i), so the first M samples of a longer run coincide with
// a shorter run's samples. With `normalized`, each likelihood is
// exp(total_logprob / response_len) before the statistics.
UncertaintyScore estimate(const Generator& model, const LabeledPair& pair, int samples, std::uint64_t seed,
                          bool normalized = true);

// Corpus-level predictive mean: arithmetic mean of per-pair means.
double corpus_mean(std::span<const UncertaintyScore> scores);

}  // namespace stgen
