#include "stgen/vocab.hpp"

#include <algorithm>
#include <set>

#include "stgen/tokens.hpp"

namespace stgen {

namespace {
const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "&", "<unk>"};
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int>(i);
  if (tokens_.size() < kSpecials.size()) throw ConfigError("vocab too small for special tokens");
  for (std::size_t i = 0; i < kSpecials.size(); ++i)
    if (tokens_[i] != kSpecials[i]) throw ConfigError("vocab special tokens out of place");
}

Vocab Vocab::build(std::span<const LabeledPair> train, std::span<const MeaningRepresentation> unlabeled) {
  std::set<std::string> words;
  auto add_mr = [&](const MeaningRepresentation& mr) {
    for (const auto& tok : tokenize(render_mr(mr))) words.insert(tok);
  };
  for (const auto& pair : train) {
    add_mr(pair.mr);
    for (const auto& tok : pair.text) words.insert(tok);
  }
  for (const auto& mr : unlabeled) add_mr(mr);

  std::vector<std::string> tokens = kSpecials;
  for (const auto& w : words)
    if (std::find(kSpecials.begin(), kSpecials.end(), w) == kSpecials.end()) tokens.push_back(w);
  return Vocab(std::move(tokens));
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::ids(std::span<const std::string> tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

}  // namespace stgen
