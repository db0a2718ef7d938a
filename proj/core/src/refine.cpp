#include "stgen/refine.hpp"

#include "stgen/parallel.hpp"
#include "stgen/tokens.hpp"

namespace stgen {

DecodeResult refine_decode(const Generator& model, const MeaningRepresentation& mr,
                           const RefinementConfig& config, std::vector<StepTrace>* trace) {
  DecodeOptions options{config.nucleus_p, config.max_len};
  return aggregated_decode(model, mr, config.aggregation_count, /*stochastic=*/true, options, config.seed,
                           trace);
}

PseudoSetResult build_pseudo_set(const Generator& model,
                                 std::span<const std::pair<std::int64_t, MeaningRepresentation>> selected,
                                 const RefinementConfig& config, const ValueLexicon& lexicon, int threads) {
  struct Job {
    DecodeResult decode;
    FilterCheck check;
    std::uint64_t seed = 0;
  };
  std::vector<Job> jobs(selected.size());
  parallel_for(selected.size(), threads, [&](std::size_t i) {
    const auto& [id, mr] = selected[i];
    Job& job = jobs[i];
    RefinementConfig per_mr = config;
    per_mr.seed = derive_seed(config.seed, {static_cast<std::uint64_t>(id)});
    job.seed = per_mr.seed;
    job.decode = refine_decode(model, mr, per_mr);
    if (config.filter_enabled)
      job.check = slot_match_filter(mr, job.decode.tokens, lexicon, config.synonyms);
  });

  PseudoSetResult result;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const auto& [id, mr] = selected[i];
    Job& job = jobs[i];
    const bool accepted = job.check.accepted && !job.decode.tokens.empty();

    ProvenanceRow row;
    row.id = id;
    row.seed = job.seed;
    row.accepted = accepted;
    row.text = join_tokens(job.decode.tokens);
    if (!accepted) {
      std::string reasons;
      if (job.decode.tokens.empty()) {
        reasons = "empty response";
        ++result.rejection_counts["empty response"];
      }
      for (const auto& r : job.check.reasons) {
        if (r.rfind("missing", 0) != 0 && r.rfind("redundant", 0) != 0) continue;  // keep failures only
        if (!reasons.empty()) reasons += "; ";
        reasons += r;
        // Aggregate by check kind, not by the specific value.
        const std::string kind = r.substr(0, r.find(' ', r.find(' ') + 1));
        ++result.rejection_counts[kind];
      }
      row.reasons = reasons;
    }
    result.provenance.push_back(std::move(row));
    if (accepted) result.pairs.push_back({mr, job.decode.tokens, Origin::PseudoLabeled});
  }
  return result;
}

}  // namespace stgen
