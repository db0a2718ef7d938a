#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stgen/mr.hpp"

namespace stgen {

// Token table with dense ids. The "&" boundary between MR and response is
// its own special token (SEP).
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSep = 3;
  static constexpr int kUnk = 4;

  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);

  // Builds the table from the training pairs plus the unlabeled MR pool.
  // Non-special tokens are sorted lexicographically for determinism.
  static Vocab build(std::span<const LabeledPair> train, std::span<const MeaningRepresentation> unlabeled);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_[static_cast<std::size_t>(id)]; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> ids(std::span<const std::string> tokens) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace stgen
