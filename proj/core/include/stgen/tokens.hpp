#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stgen {

// Whitespace tokenization with edge punctuation split into its own tokens.
// Interior punctuation stays attached, so "16:34", "tr8132" and "11.02"
// survive as single tokens while "criteria." becomes ["criteria", "."].
std::vector<std::string> tokenize(std::string_view text);

std::string join_tokens(std::span<const std::string> tokens);

std::string lowercase(std::string_view text);

// Lowercased tokens, used on both sides of every matching operation.
std::vector<std::string> lowercase_tokens(std::span<const std::string> tokens);

// True if `needle` occurs as a contiguous subsequence of `hay`.
bool contains_subsequence(std::span<const std::string> hay, std::span<const std::string> needle);

}  // namespace stgen
