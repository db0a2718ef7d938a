#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stgen/common.hpp"

namespace stgen {

// One slot of a dialogue act: a category name and its content. The literal
// value "?" marks a requested slot with no concrete value.
struct SlotValue {
  std::string name;
  std::string value;

  bool requested() const { return value == "?"; }
  friend bool operator==(const SlotValue&, const SlotValue&) = default;
};

// A dialogue intent (system action kind) with its ordered slot list.
struct Intent {
  std::string act;
  std::vector<SlotValue> slots;

  friend bool operator==(const Intent&, const Intent&) = default;
};

// Structured dialogue act: one or more intents, each with slot-value pairs.
// Immutable by convention after construction; parsing and rendering round-trip
// exactly (single-space normalization, acts folded to lowercase).
struct MeaningRepresentation {
  std::vector<Intent> intents;

  std::size_t total_slots() const {
    std::size_t n = 0;
    for (const auto& intent : intents) n += intent.slots.size();
    return n;
  }
  friend bool operator==(const MeaningRepresentation&, const MeaningRepresentation&) = default;
};

enum class Origin { Gold, Augmented, PseudoLabeled };

std::string_view origin_name(Origin origin);

// An MR paired with a tokenized text response.
struct LabeledPair {
  MeaningRepresentation mr;
  std::vector<std::string> text;
  Origin origin = Origin::Gold;
};

// Parses the linearized wire format
//   intent ( s = v ; s = v ) [@ intent ( ... )]* [&]
// where an intent may carry an empty group "( )" or no group at all.
// Whitespace between tokens is normalized to single spaces, intent acts are
// folded to lowercase, and a trailing "&" separator is consumed, never stored.
// Throws MalformedMrError with the byte position on any grammar violation.
MeaningRepresentation parse_mr(std::string_view line);

// Canonical single-space serialization without the trailing "&".
// parse_mr(render_mr(mr)) == mr for every valid mr.
std::string render_mr(const MeaningRepresentation& mr);

// Splits a combined line `<MR serialization> & <response tokens>` using the
// grammar itself, so "&" inside slot values cannot confuse the split.
struct CombinedLine {
  MeaningRepresentation mr;
  std::vector<std::string> text;
};
CombinedLine parse_combined_line(std::string_view line);

std::string render_combined_line(const MeaningRepresentation& mr, std::span<const std::string> text);

// Values excluded from value-matching metrics: control values that are not
// expected verbatim in responses. Comparison is case-insensitive.
const std::vector<std::string>& default_ignored_values();

bool is_ignored_value(std::string_view value, const std::vector<std::string>& ignored = default_ignored_values());

// All (name, value) pairs whose value is concrete: not "?" and not in the
// ignore list. Order and duplicates preserved.
std::vector<std::pair<std::string, std::string>> concrete_slot_values(
    const MeaningRepresentation& mr, const std::vector<std::string>& ignored = default_ignored_values());

// Checks the structural invariants (non-empty intents, lowercase acts,
// non-empty names/values, no reserved characters). Throws MalformedMrError
// on violation; used when MRs are built programmatically.
void validate_mr(const MeaningRepresentation& mr);

}  // namespace stgen
