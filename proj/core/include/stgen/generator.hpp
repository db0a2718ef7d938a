#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stgen/mr.hpp"
#include "stgen/vocab.hpp"

namespace stgen {

// Dropout control for a forward pass. Stochastic masks are a pure function
// of the seed: two passes with equal seeds are bit-identical, and Disabled
// passes are deterministic.
struct DropoutMask {
  enum class Mode { Disabled, Stochastic };
  Mode mode = Mode::Disabled;
  std::uint64_t seed = 0;

  static DropoutMask disabled() { return {}; }
  static DropoutMask stochastic(std::uint64_t seed) { return {Mode::Stochastic, seed}; }
};

// One decoding step: the pre-softmax hidden vector (logits over the vocab)
// and its softmax distribution.
struct StepOutput {
  std::vector<double> hidden;
  std::vector<double> distribution;
};

struct LogLikelihood {
  double total = 0.0;                  // sum over response tokens incl. EOS
  std::vector<double> per_token;       // one entry per scored position
  int response_len() const { return static_cast<int>(per_token.size()); }
};

struct TrainOptions {
  int epochs = 1;
  double lr = 1e-3;                    // initial rate; decays linearly to ~0
  int batch_size = 8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

struct TrainingReport {
  std::vector<double> epoch_loss;      // mean NLL per response token
  long steps = 0;
  double final_lr = 0.0;
};

// Incremental decoding stream under one fixed dropout mask. Masks are
// sampled once per stream (variational style), so the stream behaves as a
// single perturbed parameterization for its whole lifetime and incremental
// decoding matches a from-scratch pass over the same tokens bit for bit.
class StepStream {
 public:
  virtual ~StepStream() = default;
  virtual void reset(std::span<const int> prefix) = 0;
  virtual void feed(int token_id) = 0;
  // Logits and distribution for the position following everything consumed.
  virtual const StepOutput& output() const = 0;
};

// Conditional autoregressive generator contract. Any implementation that
// provides a vocab, streams and a training step can be dropped in; encoding,
// scoring and sampling are derived from those.
class Generator {
 public:
  virtual ~Generator() = default;

  virtual const Vocab& vocab() const = 0;
  virtual double dropout_rate() const = 0;
  virtual std::unique_ptr<StepStream> make_stream(const DropoutMask& mask) const = 0;
  virtual TrainingReport train_epochs(std::span<const LabeledPair> data, const TrainOptions& options) = 0;

  // <bos> MR tokens & response tokens <eos>; out-of-vocab tokens map to UNK.
  std::vector<int> encode(const MeaningRepresentation& mr, std::span<const std::string> text) const;
  // <bos> MR tokens &  — the conditioning prefix used when decoding.
  std::vector<int> encode_prefix(const MeaningRepresentation& mr) const;

  // Sum of log p(x_t | x_<t, MR) over response positions (after SEP,
  // including EOS). Deterministic when the mask is Disabled.
  LogLikelihood log_likelihood(const DropoutMask& mask, const LabeledPair& pair) const;

  // From-scratch pass over `prefix` under `mask`; returns the next-token
  // logits and distribution.
  StepOutput forward_step(const DropoutMask& mask, std::span<const int> prefix) const;
};

}  // namespace stgen
