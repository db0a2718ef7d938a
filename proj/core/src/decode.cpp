#include "stgen/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stgen/numeric.hpp"

namespace stgen {

int nucleus_pick(std::span<const double> distribution, double nucleus_p, double uniform_draw) {
  const std::size_t n = distribution.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (distribution[static_cast<std::size_t>(a)] != distribution[static_cast<std::size_t>(b)])
      return distribution[static_cast<std::size_t>(a)] > distribution[static_cast<std::size_t>(b)];
    return a < b;  // stable tie order across platforms
  });
  // Smallest probability-sorted prefix whose mass reaches the threshold.
  std::size_t cut = 0;
  double mass = 0.0;
  while (cut < n) {
    mass += distribution[static_cast<std::size_t>(order[cut])];
    ++cut;
    if (mass >= nucleus_p) break;
  }
  const double target = uniform_draw * mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < cut; ++i) {
    acc += distribution[static_cast<std::size_t>(order[i])];
    if (target < acc) return order[i];
  }
  return order[cut - 1];
}

DecodeResult aggregated_decode(const Generator& model, const MeaningRepresentation& mr, int n_streams,
                               bool stochastic, const DecodeOptions& options, std::uint64_t seed,
                               std::vector<StepTrace>* trace) {
  if (n_streams < 1) throw ConfigError("aggregation count must be >= 1");
  if (!(options.nucleus_p > 0.0) || options.nucleus_p > 1.0)
    throw ConfigError("nucleus_p must be in (0, 1]");

  // Dropout rate 0 makes every stochastic replica identical to the disabled
  // pass, so collapse to one stream; this also keeps the aggregation exact.
  const bool effective_stochastic = stochastic && model.dropout_rate() > 0.0;
  const int replicas = effective_stochastic ? n_streams : 1;

  std::vector<std::unique_ptr<StepStream>> streams;
  streams.reserve(static_cast<std::size_t>(replicas));
  for (int i = 0; i < replicas; ++i) {
    const DropoutMask mask = effective_stochastic
                                 ? DropoutMask::stochastic(seed + static_cast<std::uint64_t>(i))
                                 : DropoutMask::disabled();
    streams.push_back(model.make_stream(mask));
  }

  const std::vector<int> prefix = model.encode_prefix(mr);
  for (auto& s : streams) s->reset(prefix);

  Rng draw_rng(derive_seed(seed, {seed_tag::kDraw}));
  const Vocab& vocab = model.vocab();
  const int v_size = vocab.size();

  DecodeResult result;
  std::vector<double> hidden(static_cast<std::size_t>(v_size));
  std::vector<double> dist(static_cast<std::size_t>(v_size));
  for (int step = 0; step < options.max_len; ++step) {
    std::fill(hidden.begin(), hidden.end(), 0.0);
    for (auto& s : streams) {
      const StepOutput& out = s->output();
      for (int i = 0; i < v_size; ++i) hidden[static_cast<std::size_t>(i)] += out.hidden[static_cast<std::size_t>(i)];
    }
    if (replicas > 1) {
      const double inv = 1.0 / static_cast<double>(replicas);
      for (double& h : hidden) h *= inv;
    }
    softmax(hidden, dist);

    const int chosen = nucleus_pick(dist, options.nucleus_p, draw_rng.uniform());
    // Likelihood of the pick under the full (untruncated) step distribution.
    result.logprob += std::log(dist[static_cast<std::size_t>(chosen)]);
    if (trace) trace->push_back({hidden, dist, chosen});
    if (chosen == Vocab::kEos) return result;
    result.ids.push_back(chosen);
    result.tokens.push_back(vocab.token(chosen));
    for (auto& s : streams) s->feed(chosen);
  }
  result.truncated = true;
  return result;
}

DecodeResult sample(const Generator& model, const MeaningRepresentation& mr, const DecodeOptions& options,
                    std::uint64_t seed) {
  return aggregated_decode(model, mr, 1, /*stochastic=*/false, options, seed);
}

}  // namespace stgen
