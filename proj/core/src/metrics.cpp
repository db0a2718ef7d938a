#include "stgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "stgen/tokens.hpp"

namespace stgen {

namespace {

// Finds the leftmost occurrence of `needle` over unconsumed positions of
// `hay`; marks it consumed and returns true.
bool consume_occurrence(std::span<const std::string> hay, std::vector<char>& consumed,
                        std::span<const std::string> needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    bool match = true;
    for (std::size_t k = 0; k < needle.size(); ++k) {
      if (consumed[i + k] || hay[i + k] != needle[k]) {
        match = false;
        break;
      }
    }
    if (match) {
      for (std::size_t k = 0; k < needle.size(); ++k) consumed[i + k] = 1;
      return true;
    }
  }
  return false;
}

struct SlotAccounting {
  int missing = 0;
  int redundant = 0;
  int total = 0;
  std::vector<std::string> reasons;
};

// Shared accounting behind compute_err and the slot-match filter.
//   phase 1: each required concrete value (longest first) consumes one
//            occurrence; misses count as missing.
//   phase 2: each requested slot needs its name (or a synonym) mentioned;
//            the mention is consumed so it cannot be double-booked.
//   phase 3: every remaining occurrence of a lexicon or required value is
//            redundant, counted per occurrence.
SlotAccounting account_slots(const MeaningRepresentation& mr, std::span<const std::string> text_tokens,
                             const ValueLexicon& lexicon, const SynonymMap* synonyms, bool want_reasons) {
  SlotAccounting acc;
  acc.total = static_cast<int>(mr.total_slots());
  const std::vector<std::string> toks = lowercase_tokens(text_tokens);
  std::vector<char> consumed(toks.size(), 0);

  struct Required {
    std::vector<std::string> seq;
    std::string display;
    std::string slot;
  };
  std::vector<Required> required;
  for (const auto& [name, value] : concrete_slot_values(mr)) {
    Required r;
    r.seq = tokenize(lowercase(value));
    r.display = value;
    r.slot = name;
    if (!r.seq.empty()) required.push_back(std::move(r));
  }
  std::stable_sort(required.begin(), required.end(),
                   [](const Required& a, const Required& b) { return a.seq.size() > b.seq.size(); });

  for (const auto& r : required) {
    if (consume_occurrence(toks, consumed, r.seq)) {
      if (want_reasons) acc.reasons.push_back("value '" + r.display + "' present (slot " + r.slot + ")");
    } else {
      ++acc.missing;
      acc.reasons.push_back("missing value '" + r.display + "' (slot " + r.slot + ")");
    }
  }

  for (const auto& intent : mr.intents) {
    for (const auto& slot : intent.slots) {
      if (!slot.requested()) continue;
      std::vector<std::vector<std::string>> names;
      names.push_back(tokenize(lowercase(slot.name)));
      if (synonyms) {
        auto it = synonyms->find(slot.name);
        if (it != synonyms->end())
          for (const auto& syn : it->second) names.push_back(tokenize(lowercase(syn)));
      }
      bool found = false;
      for (const auto& seq : names) {
        if (consume_occurrence(toks, consumed, seq)) {
          found = true;
          break;
        }
      }
      if (found) {
        if (want_reasons) acc.reasons.push_back("slot name '" + slot.name + "' mentioned");
      } else {
        ++acc.missing;
        acc.reasons.push_back("missing slot name '" + slot.name + "'");
      }
    }
  }

  // Redundancy candidates: lexicon values plus the required values (so
  // surplus occurrences of required values are caught even when the value is
  // not in the lexicon). Longest first, deduplicated.
  std::vector<std::vector<std::string>> candidates = lexicon.token_sequences();
  for (const auto& r : required) candidates.push_back(r.seq);
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return a < b;
  });
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  for (const auto& seq : candidates) {
    while (consume_occurrence(toks, consumed, seq)) {
      ++acc.redundant;
      acc.reasons.push_back("redundant value '" + join_tokens(seq) + "'");
    }
  }
  return acc;
}

}  // namespace

ErrBreakdown compute_err(const MeaningRepresentation& mr, std::span<const std::string> text_tokens,
                         const ValueLexicon& lexicon) {
  const SlotAccounting acc = account_slots(mr, text_tokens, lexicon, nullptr, /*want_reasons=*/false);
  ErrBreakdown out;
  out.missing = acc.missing;
  out.redundant = acc.redundant;
  out.total = acc.total;
  return out;
}

FilterCheck slot_match_filter(const MeaningRepresentation& mr, std::span<const std::string> text_tokens,
                              const ValueLexicon& lexicon, const SynonymMap& synonyms) {
  const SlotAccounting acc = account_slots(mr, text_tokens, lexicon, &synonyms, /*want_reasons=*/true);
  FilterCheck check;
  check.accepted = acc.missing == 0 && acc.redundant == 0;
  check.reasons = acc.reasons;
  return check;
}

// --- BLEU --------------------------------------------------------------------

namespace {

constexpr int kMaxOrder = 4;
constexpr double kSmoothEpsilon = 1e-9;

// n-grams keyed by joining tokens with an unprintable separator.
std::unordered_map<std::string, int> ngram_counts(std::span<const std::string> tokens, int order) {
  std::unordered_map<std::string, int> counts;
  if (static_cast<int>(tokens.size()) < order) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(order) <= tokens.size(); ++i) {
    std::string key;
    for (int k = 0; k < order; ++k) {
      if (k) key.push_back('\x1f');
      key += tokens[i + static_cast<std::size_t>(k)];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

double corpus_bleu(std::span<const std::vector<std::string>> hypotheses,
                   std::span<const std::vector<std::vector<std::string>>> references) {
  if (hypotheses.size() != references.size())
    throw LengthMismatchError("hypothesis/reference list length mismatch");
  long matches[kMaxOrder] = {0, 0, 0, 0};
  long totals[kMaxOrder] = {0, 0, 0, 0};
  long hyp_len = 0, ref_len = 0;

  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& hyp = hypotheses[i];
    const auto& refs = references[i];
    if (refs.empty()) throw LengthMismatchError("hypothesis without references");
    hyp_len += static_cast<long>(hyp.size());

    // Closest reference length; ties resolved toward the shorter one.
    long best_ref = static_cast<long>(refs[0].size());
    for (const auto& r : refs) {
      const long len = static_cast<long>(r.size());
      const long d_new = std::abs(len - static_cast<long>(hyp.size()));
      const long d_old = std::abs(best_ref - static_cast<long>(hyp.size()));
      if (d_new < d_old || (d_new == d_old && len < best_ref)) best_ref = len;
    }
    ref_len += best_ref;

    for (int order = 1; order <= kMaxOrder; ++order) {
      auto hyp_counts = ngram_counts(hyp, order);
      std::unordered_map<std::string, int> max_ref;
      for (const auto& r : refs)
        for (const auto& [key, count] : ngram_counts(r, order))
          max_ref[key] = std::max(max_ref[key], count);
      long total = 0, match = 0;
      for (const auto& [key, count] : hyp_counts) {
        total += count;
        auto it = max_ref.find(key);
        if (it != max_ref.end()) match += std::min(count, it->second);
      }
      matches[order - 1] += match;
      totals[order - 1] += total;
    }
  }

  double log_precision = 0.0;
  for (int order = 0; order < kMaxOrder; ++order) {
    double p = kSmoothEpsilon;
    if (totals[order] > 0 && matches[order] > 0)
      p = static_cast<double>(matches[order]) / static_cast<double>(totals[order]);
    log_precision += std::log(p) / kMaxOrder;
  }
  double brevity = 1.0;
  if (hyp_len == 0) return 0.0;
  if (hyp_len < ref_len) brevity = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * brevity * std::exp(log_precision);
}

double corpus_bleu_single(std::span<const std::vector<std::string>> hypotheses,
                          std::span<const std::vector<std::string>> references) {
  std::vector<std::vector<std::vector<std::string>>> wrapped;
  wrapped.reserve(references.size());
  for (const auto& r : references) wrapped.push_back({r});
  return corpus_bleu(hypotheses, wrapped);
}

BestOfK best_of_k(const Generator& model, const MeaningRepresentation& mr, int k, const ValueLexicon& lexicon,
                  const DecodeOptions& options, std::uint64_t seed) {
  if (k < 1) throw ConfigError("best_of_k requires k >= 1");
  BestOfK best;
  for (int i = 0; i < k; ++i) {
    DecodeResult candidate = sample(model, mr, options, seed + static_cast<std::uint64_t>(i));
    const ErrBreakdown err = compute_err(mr, candidate.tokens, lexicon);
    const bool better =
        i == 0 || err.err() < best.err.err() ||
        (err.err() == best.err.err() && candidate.logprob > best.decode.logprob);
    if (better) {
      best.decode = std::move(candidate);
      best.err = err;
      best.index = i;
    }
  }
  return best;
}

}  // namespace stgen
