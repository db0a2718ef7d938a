#include "stgen/uncertainty.hpp"

#include <cmath>
#include <stdexcept>

#include "stgen/numeric.hpp"

namespace stgen {

UncertaintyScore score_from_logs(std::span<const double> log_likelihoods) {
  if (log_likelihoods.empty()) throw EmptyCorpusError("no likelihood samples");
  const double log_m = std::log(static_cast<double>(log_likelihoods.size()));
  const double log_mean = log_sum_exp(log_likelihoods) - log_m;

  std::vector<double> doubled(log_likelihoods.size());
  for (std::size_t i = 0; i < log_likelihoods.size(); ++i) doubled[i] = 2.0 * log_likelihoods[i];
  const double log_second_moment = log_sum_exp(doubled) - log_m;

  UncertaintyScore score;
  score.samples = static_cast<int>(log_likelihoods.size());
  score.mean = std::exp(log_mean);
  score.variance = std::max(0.0, std::exp(log_second_moment) - std::exp(2.0 * log_mean));
  score.raw_log_samples.assign(log_likelihoods.begin(), log_likelihoods.end());
  return score;
}

UncertaintyScore estimate(const Generator& model, const LabeledPair& pair, int samples, std::uint64_t seed,
                          bool normalized) {
  if (samples < 2) throw std::invalid_argument("estimate requires at least 2 samples");

  std::vector<double> raw_logs(static_cast<std::size_t>(samples));
  int response_len = 0;
  for (int i = 0; i < samples; ++i) {
    const DropoutMask mask = DropoutMask::stochastic(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    const LogLikelihood ll = model.log_likelihood(mask, pair);
    raw_logs[static_cast<std::size_t>(i)] = ll.total;
    response_len = ll.response_len();
  }

  std::vector<double> stat_logs = raw_logs;
  if (normalized && response_len > 0)
    for (double& v : stat_logs) v /= static_cast<double>(response_len);

  UncertaintyScore score = score_from_logs(stat_logs);
  score.raw_log_samples = std::move(raw_logs);
  score.response_len = response_len;
  score.normalized = normalized;
  return score;
}

double corpus_mean(std::span<const UncertaintyScore> scores) {
  if (scores.empty()) throw EmptyCorpusError("corpus_mean over empty score list");
  double sum = 0.0;
  for (const auto& s : scores) sum += s.mean;
  return sum / static_cast<double>(scores.size());
}

}  // namespace stgen
