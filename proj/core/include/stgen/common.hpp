#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>

namespace stgen {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by the MR parser; carries the byte offset of the offending input.
class MalformedMrError : public Error {
 public:
  MalformedMrError(std::size_t position, const std::string& reason)
      : Error("malformed MR at byte " + std::to_string(position) + ": " + reason),
        position_(position),
        reason_(reason) {}
  std::size_t position() const { return position_; }
  const std::string& reason() const { return reason_; }

 private:
  std::size_t position_;
  std::string reason_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A data file line that does not parse. Carries the 1-based line number.
class FormatError : public Error {
 public:
  FormatError(std::size_t line_no, const std::string& reason)
      : Error("line " + std::to_string(line_no) + ": " + reason), line_no_(line_no) {}
  std::size_t line_no() const { return line_no_; }

 private:
  std::size_t line_no_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Invalid toy grammar definition (e.g. template references an unknown slot).
class SpecError : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite; the model has been restored to the last
// finite snapshot before this is thrown.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class EmptyCorpusError : public Error {
 public:
  using Error::Error;
};

class LengthMismatchError : public Error {
 public:
  using Error::Error;
};

// --- Seeding -----------------------------------------------------------
//
// Every stochastic operation in the library is a pure function of an
// explicit 64-bit seed. Sub-streams are derived by mixing tags into the
// parent seed, never by advancing a shared generator, so phases can be
// re-run or parallelized without perturbing one another.

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t value) {
  return splitmix64(seed ^ (0x9e3779b97f4a7c15ULL + (value << 1)));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(seed);
  for (std::uint64_t t : tags) s = mix_seed(s, t);
  return s;
}

// Stream tags used when deriving per-phase seeds.
namespace seed_tag {
constexpr std::uint64_t kInit = 1;
constexpr std::uint64_t kWarmup = 2;
constexpr std::uint64_t kAnnotate = 3;
constexpr std::uint64_t kScoreAugmented = 4;
constexpr std::uint64_t kScoreGold = 5;
constexpr std::uint64_t kRefine = 6;
constexpr std::uint64_t kFineTune = 7;
constexpr std::uint64_t kDevEval = 8;
constexpr std::uint64_t kTestEval = 9;
constexpr std::uint64_t kDraw = 10;  // token draws inside a decode
}  // namespace seed_tag

}  // namespace stgen
