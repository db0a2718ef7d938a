#include "stgen/mr.hpp"

#include <algorithm>
#include <cctype>

#include "stgen/tokens.hpp"

namespace stgen {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_name_char(char c) {
  switch (c) {
    case '(':
    case ')':
    case '=':
    case ';':
    case '@':
    case '&':
      return false;
    default:
      return !is_space(c);
  }
}

// Collapse interior whitespace runs to single spaces; input is already
// trimmed at both ends.
std::string collapse_spaces(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool in_space = false;
  for (char c : raw) {
    if (is_space(c)) {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(c);
  }
  return out;
}

class Scanner {
 public:
  explicit Scanner(std::string_view text) : text_(text) {}

  void skip_ws() {
    while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
  }
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }
  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }

  [[noreturn]] void fail(const std::string& reason) const { throw MalformedMrError(pos_, reason); }

  std::string read_name() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && is_name_char(text_[pos_])) ++pos_;
    return std::string(text_.substr(start, pos_ - start));
  }

  // Reads a slot value: everything up to ';' or ')'. '(' and '=' are
  // rejected so a forgotten separator surfaces as an error instead of a
  // silently merged value.
  std::string read_value() {
    const std::size_t start = pos_;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == ';' || c == ')') break;
      if (c == '(') fail("unexpected '(' in slot value");
      if (c == '=') fail("unexpected '=' in slot value (missing ';'?)");
      ++pos_;
    }
    if (pos_ >= text_.size()) fail("unbalanced parentheses");
    std::size_t end = pos_;
    std::size_t begin = start;
    while (begin < end && is_space(text_[begin])) ++begin;
    while (end > begin && is_space(text_[end - 1])) --end;
    return collapse_spaces(text_.substr(begin, end - begin));
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

Intent parse_intent(Scanner& sc) {
  Intent intent;
  sc.skip_ws();
  const std::size_t act_pos = sc.pos();
  std::string act = sc.read_name();
  if (act.empty()) throw MalformedMrError(act_pos, "empty intent name");
  intent.act = lowercase(act);

  sc.skip_ws();
  if (sc.at_end() || sc.peek() != '(') return intent;  // group is optional
  sc.advance();  // consume '('
  sc.skip_ws();
  if (sc.at_end()) sc.fail("unbalanced parentheses");
  if (sc.peek() == ')') {
    sc.advance();
    return intent;  // empty slot group
  }

  while (true) {
    sc.skip_ws();
    const std::size_t name_pos = sc.pos();
    std::string name = sc.read_name();
    if (name.empty()) {
      if (sc.at_end()) throw MalformedMrError(name_pos, "unbalanced parentheses");
      throw MalformedMrError(name_pos, "empty slot name");
    }
    sc.skip_ws();
    if (sc.at_end()) sc.fail("unbalanced parentheses");
    if (sc.peek() != '=') sc.fail("expected '=' after slot name");
    sc.advance();  // consume '='
    std::string value = sc.read_value();
    if (value.empty()) sc.fail("empty slot value");
    intent.slots.push_back({std::move(name), std::move(value)});

    if (sc.peek() == ')') {
      sc.advance();
      return intent;
    }
    sc.advance();  // consume ';'
  }
}

// Parses the MR portion. In combined mode the parse stops after the "&"
// separator and reports how many bytes were consumed; in full mode the
// separator is optional and the input must end afterwards.
MeaningRepresentation parse_internal(std::string_view line, bool combined, std::size_t* consumed) {
  Scanner sc(line);
  MeaningRepresentation mr;
  while (true) {
    mr.intents.push_back(parse_intent(sc));
    sc.skip_ws();
    if (!sc.at_end() && sc.peek() == '@') {
      sc.advance();
      continue;
    }
    break;
  }
  sc.skip_ws();
  if (!sc.at_end() && sc.peek() == '&') {
    sc.advance();
    if (combined) {
      *consumed = sc.pos();
      return mr;
    }
    sc.skip_ws();
  }
  if (combined) sc.fail("missing '&' separator between MR and response");
  if (!sc.at_end()) sc.fail("trailing garbage after MR");
  *consumed = sc.pos();
  return mr;
}

}  // namespace

std::string_view origin_name(Origin origin) {
  switch (origin) {
    case Origin::Gold:
      return "gold";
    case Origin::Augmented:
      return "augmented";
    case Origin::PseudoLabeled:
      return "pseudo";
  }
  return "unknown";
}

MeaningRepresentation parse_mr(std::string_view line) {
  std::size_t consumed = 0;
  return parse_internal(line, /*combined=*/false, &consumed);
}

std::string render_mr(const MeaningRepresentation& mr) {
  std::string out;
  for (std::size_t k = 0; k < mr.intents.size(); ++k) {
    if (k) out += " @ ";
    const Intent& intent = mr.intents[k];
    out += intent.act;
    out += " ( ";
    for (std::size_t i = 0; i < intent.slots.size(); ++i) {
      if (i) out += " ; ";
      out += intent.slots[i].name;
      out += " = ";
      out += intent.slots[i].value;
    }
    if (!intent.slots.empty()) out.push_back(' ');
    out.push_back(')');
  }
  return out;
}

CombinedLine parse_combined_line(std::string_view line) {
  std::size_t consumed = 0;
  CombinedLine out;
  out.mr = parse_internal(line, /*combined=*/true, &consumed);
  out.text = tokenize(line.substr(consumed));
  if (out.text.empty()) throw MalformedMrError(consumed, "empty response after '&'");
  return out;
}

std::string render_combined_line(const MeaningRepresentation& mr, std::span<const std::string> text) {
  return render_mr(mr) + " & " + join_tokens(text);
}

const std::vector<std::string>& default_ignored_values() {
  static const std::vector<std::string> kIgnored = {"?", "none", "yes", "no", "dont_care"};
  return kIgnored;
}

bool is_ignored_value(std::string_view value, const std::vector<std::string>& ignored) {
  const std::string lowered = lowercase(value);
  return std::find(ignored.begin(), ignored.end(), lowered) != ignored.end();
}

std::vector<std::pair<std::string, std::string>> concrete_slot_values(
    const MeaningRepresentation& mr, const std::vector<std::string>& ignored) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& intent : mr.intents)
    for (const auto& slot : intent.slots)
      if (!is_ignored_value(slot.value, ignored)) out.emplace_back(slot.name, slot.value);
  return out;
}

void validate_mr(const MeaningRepresentation& mr) {
  if (mr.intents.empty()) throw MalformedMrError(0, "MR has no intents");
  for (const auto& intent : mr.intents) {
    if (intent.act.empty()) throw MalformedMrError(0, "empty intent name");
    for (char c : intent.act) {
      if (!is_name_char(c)) throw MalformedMrError(0, "reserved character in intent name");
      if (std::isupper(static_cast<unsigned char>(c))) throw MalformedMrError(0, "intent act must be lowercase");
    }
    for (const auto& slot : intent.slots) {
      if (slot.name.empty()) throw MalformedMrError(0, "empty slot name");
      for (char c : slot.name)
        if (!is_name_char(c)) throw MalformedMrError(0, "reserved character in slot name");
      const std::string collapsed = collapse_spaces(slot.value);
      if (collapsed.empty() || collapsed != slot.value)
        throw MalformedMrError(0, "slot value must be non-empty and space-normalized");
      for (char c : slot.value)
        if (c == '(' || c == ')' || c == ';' || c == '=')
          throw MalformedMrError(0, "reserved character in slot value");
    }
  }
}

}  // namespace stgen
