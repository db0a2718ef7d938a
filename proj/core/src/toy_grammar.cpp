#include "stgen/toy_grammar.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include "stgen/numeric.hpp"
#include "stgen/tokens.hpp"

namespace stgen {

namespace {

struct Placeholder {
  std::string slot;
  std::size_t intent_index = 0;  // within the template combination
  bool requested = false;
  std::vector<std::string> values;  // concrete candidates; empty when requested
};

struct CompiledTemplate {
  std::vector<std::string> intents;
  std::vector<std::string> tokens;          // pattern tokens, placeholders included
  std::vector<Placeholder> placeholders;    // in pattern order
  std::uint64_t instances = 1;
};

const ToyIntentSpec* find_intent(const ToyGrammarSpec& spec, const std::string& name) {
  for (const auto& intent : spec.intents)
    if (intent.name == name) return &intent;
  return nullptr;
}

const ToySlotSpec* find_slot(const ToyIntentSpec& intent, const std::string& name) {
  for (const auto& slot : intent.slots)
    if (slot.name == name) return &slot;
  return nullptr;
}

// Patterns are author-tokenized: split on whitespace only, so placeholder
// tokens like "{food}" stay whole.
std::vector<std::string> split_pattern(const std::string& pattern) {
  std::vector<std::string> out;
  std::string current;
  for (char c : pattern) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

CompiledTemplate compile_template(const ToyGrammarSpec& spec, const ToyTemplateSpec& tmpl,
                                  std::size_t tmpl_index) {
  const std::string where = "template #" + std::to_string(tmpl_index);
  if (tmpl.intents.empty()) throw SpecError(where + ": empty intent combination");
  CompiledTemplate out;
  out.intents = tmpl.intents;
  for (const auto& name : tmpl.intents)
    if (!find_intent(spec, name)) throw SpecError(where + ": unknown intent '" + name + "'");

  out.tokens = split_pattern(tmpl.pattern);
  if (out.tokens.empty()) throw SpecError(where + ": empty pattern");

  std::set<std::string> seen;
  for (const auto& tok : out.tokens) {
    const bool concrete = tok.size() > 2 && tok.front() == '{' && tok.back() == '}';
    const bool requested = tok.size() > 2 && tok.front() == '[' && tok.back() == ']';
    if (!concrete && !requested) continue;
    Placeholder ph;
    ph.slot = tok.substr(1, tok.size() - 2);
    ph.requested = requested;
    if (!seen.insert(ph.slot).second) throw SpecError(where + ": duplicate placeholder '" + tok + "'");

    // Ownership: {x} binds to the intent offering concrete values for x,
    // [x] prefers an intent whose x is request-only ("?" values).
    struct Owner {
      std::size_t index;
      const ToySlotSpec* slot;
      bool request_only;
      bool has_concrete;
    };
    std::vector<Owner> owners;
    for (std::size_t i = 0; i < tmpl.intents.size(); ++i) {
      const ToyIntentSpec* intent = find_intent(spec, tmpl.intents[i]);
      const ToySlotSpec* slot = find_slot(*intent, ph.slot);
      if (!slot) continue;
      bool has_concrete = false;
      for (const auto& v : slot->values)
        if (v != "?") has_concrete = true;
      owners.push_back({i, slot, !has_concrete, has_concrete});
    }
    if (owners.empty()) throw SpecError(where + ": placeholder '" + tok + "' names no slot of its intents");
    if (concrete) {
      std::erase_if(owners, [](const Owner& o) { return !o.has_concrete; });
      if (owners.empty()) throw SpecError(where + ": slot '" + ph.slot + "' has no concrete values");
    } else {
      const bool any_request_only =
          std::any_of(owners.begin(), owners.end(), [](const Owner& o) { return o.request_only; });
      if (any_request_only) std::erase_if(owners, [](const Owner& o) { return !o.request_only; });
    }
    if (owners.size() > 1) throw SpecError(where + ": placeholder '" + tok + "' is ambiguous across intents");
    ph.intent_index = owners.front().index;
    if (concrete)
      for (const auto& v : owners.front().slot->values)
        if (v != "?") ph.values.push_back(v);
    out.placeholders.push_back(std::move(ph));
  }
  for (const auto& ph : out.placeholders)
    if (!ph.requested) out.instances *= ph.values.size();
  return out;
}

std::vector<CompiledTemplate> compile(const ToyGrammarSpec& spec) {
  if (spec.intents.empty()) throw SpecError("grammar has no intents");
  std::vector<CompiledTemplate> out;
  for (std::size_t i = 0; i < spec.templates.size(); ++i)
    out.push_back(compile_template(spec, spec.templates[i], i));
  if (out.empty()) throw SpecError("grammar has no templates");
  return out;
}

// Single-token slot values colliding with static pattern words would plant
// phantom "redundant" slots into otherwise exact responses.
void check_value_collisions(const ToyGrammarSpec& spec, const std::vector<CompiledTemplate>& templates) {
  std::set<std::string> value_tokens;
  for (const auto& intent : spec.intents)
    for (const auto& slot : intent.slots)
      for (const auto& v : slot.values)
        if (v != "?") value_tokens.insert(lowercase(v));
  for (std::size_t t = 0; t < templates.size(); ++t) {
    for (const auto& tok : templates[t].tokens) {
      if (tok.front() == '{' || tok.front() == '[') continue;
      if (value_tokens.count(lowercase(tok)))
        throw SpecError("template #" + std::to_string(t) + ": static token '" + tok +
                        "' collides with a slot value");
    }
  }
}

LabeledPair realize(const CompiledTemplate& tmpl, const std::vector<std::size_t>& choice) {
  MeaningRepresentation mr;
  for (const auto& name : tmpl.intents) mr.intents.push_back({name, {}});

  std::map<std::string, std::string> realization;  // placeholder slot -> text
  std::size_t concrete_i = 0;
  for (const auto& ph : tmpl.placeholders) {
    std::string value;
    if (ph.requested) {
      value = "?";
      realization[ph.slot] = ph.slot;
    } else {
      value = ph.values[choice[concrete_i++]];
      realization[ph.slot] = value;
    }
    mr.intents[ph.intent_index].slots.push_back({ph.slot, value});
  }

  LabeledPair pair;
  pair.mr = std::move(mr);
  pair.origin = Origin::Gold;
  for (const auto& tok : tmpl.tokens) {
    const bool placeholder =
        tok.size() > 2 && ((tok.front() == '{' && tok.back() == '}') || (tok.front() == '[' && tok.back() == ']'));
    if (!placeholder) {
      pair.text.push_back(tok);
      continue;
    }
    for (const auto& word : tokenize(realization[tok.substr(1, tok.size() - 2)])) pair.text.push_back(word);
  }
  return pair;
}

}  // namespace

void validate_grammar(const ToyGrammarSpec& spec) {
  for (const auto& intent : spec.intents) {
    if (intent.name.empty()) throw SpecError("intent with empty name");
    for (const auto& slot : intent.slots) {
      if (slot.name.empty()) throw SpecError("slot with empty name in intent '" + intent.name + "'");
      if (slot.values.empty())
        throw SpecError("slot '" + slot.name + "' of intent '" + intent.name + "' has no values");
    }
  }
  const auto templates = compile(spec);
  check_value_collisions(spec, templates);
}

std::uint64_t grammar_cardinality(const ToyGrammarSpec& spec) {
  std::uint64_t total = 0;
  for (const auto& tmpl : compile(spec)) total += tmpl.instances;
  return total;
}

std::vector<LabeledPair> enumerate_grammar(const ToyGrammarSpec& spec) {
  const auto templates = compile(spec);
  check_value_collisions(spec, templates);
  std::uint64_t total = 0;
  for (const auto& t : templates) total += t.instances;
  if (total > 2'000'000) throw SpecError("grammar instance space too large to enumerate");

  std::vector<LabeledPair> out;
  out.reserve(total);
  for (const auto& tmpl : templates) {
    std::size_t n_concrete = 0;
    for (const auto& ph : tmpl.placeholders)
      if (!ph.requested) ++n_concrete;
    std::vector<std::size_t> choice(n_concrete, 0);
    while (true) {
      out.push_back(realize(tmpl, choice));
      // odometer over concrete placeholder values
      std::size_t concrete_i = 0;
      bool rolled_over = true;
      for (const auto& ph : tmpl.placeholders) {
        if (ph.requested) continue;
        if (rolled_over) {
          if (++choice[concrete_i] < ph.values.size()) {
            rolled_over = false;
          } else {
            choice[concrete_i] = 0;
          }
        }
        ++concrete_i;
      }
      if (rolled_over) break;  // all digits wrapped (or no digits)
    }
  }
  return out;
}

DataSplit synth_toy_corpus(const ToyGrammarSpec& spec, std::size_t n_train, std::size_t n_dev,
                           std::size_t n_test, std::size_t n_unlabeled) {
  if (n_train < 1) throw SpecError("n_train must be >= 1");
  std::vector<LabeledPair> all = enumerate_grammar(spec);
  if (all.size() < n_train)
    throw SpecError("grammar yields only " + std::to_string(all.size()) + " instances; n_train too large");

  Rng rng(derive_seed(spec.seed, {0x70ull}));
  shuffle(all, rng);

  DataSplit split;
  split.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));

  std::set<std::string> train_mrs;
  for (const auto& pair : split.train) train_mrs.insert(render_mr(pair.mr));

  // Unlabeled pool: first pass over non-train instances, deduplicated; train
  // MRs are admitted only if the pool cannot be filled without them.
  std::set<std::string> pool_mrs;
  for (std::size_t i = n_train; i < all.size() && split.unlabeled.size() < n_unlabeled; ++i) {
    const std::string key = render_mr(all[i].mr);
    if (train_mrs.count(key) || !pool_mrs.insert(key).second) continue;
    split.unlabeled.push_back(all[i].mr);
  }
  for (std::size_t i = 0; i < all.size() && split.unlabeled.size() < n_unlabeled; ++i) {
    const std::string key = render_mr(all[i].mr);
    if (!pool_mrs.insert(key).second) continue;
    split.unlabeled.push_back(all[i].mr);
  }

  // Dev and test deal from the non-train region, wrapping when it is small.
  const std::size_t region = all.size() - n_train;
  std::size_t cursor = 0;
  auto deal = [&](std::size_t count, std::vector<LabeledPair>& dst) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t idx = region > 0 ? n_train + (cursor % region) : cursor % all.size();
      dst.push_back(all[idx]);
      ++cursor;
    }
  };
  deal(n_dev, split.dev);
  deal(n_test, split.test);
  return split;
}

ToyGrammarSpec default_toy_grammar() {
  ToyGrammarSpec spec;
  spec.seed = 7;
  spec.intents = {
      {"inform",
       {{"food", {"seafood", "pizza", "tapas", "sushi", "noodles", "curry", "steak", "ramen"}},
        {"area", {"north", "south", "east", "west", "centre", "riverside"}},
        {"price", {"cheap", "moderate", "expensive", "premium"}},
        {"choice", {"several", "many", "dozens", "plenty"}},
        {"rating", {"superb", "decent", "mediocre", "outstanding"}}}},
      {"request", {{"food", {"?"}}, {"area", {"?"}}, {"price", {"?"}}}},
  };
  spec.templates = {
      {{"inform"}, "there is a nice {food} place in the {area} of town ."},
      {{"inform"}, "i found a {price} restaurant serving {food} ."},
      {{"inform"}, "there are {choice} {price} places in the {area} part ."},
      {{"inform"}, "the {food} spot here has {rating} reviews ."},
      {{"inform"}, "there are {choice} spots serving {food} close to the {area} side ."},
      {{"inform"}, "this venue is {rating} and the rates are {price} ."},
      {{"inform"}, "you can get {food} at a {price} cost in the {area} district ."},
      {{"request"}, "what kind of [food] would you like ?"},
      {{"request"}, "which [area] do you prefer ?"},
      {{"request"}, "what [price] range are you looking for ?"},
      {{"inform", "request"}, "there are {choice} restaurants . which [area] do you prefer ?"},
      {{"inform", "request"}, "i found {choice} {food} places . what [price] range do you want ?"},
      {{"inform", "request"}, "there is a good spot in the {area} . what kind of [food] would you like ?"},
      {{"inform", "request"}, "there are {choice} options for {food} . which [area] would you like ?"},
      {{"inform", "request"}, "the {area} side has {choice} choices . what [price] limit do you have ?"},
  };
  return spec;
}

}  // namespace stgen
