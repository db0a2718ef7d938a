#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stgen/generator.hpp"

namespace stgen {

// Layer shapes of the built-in model. Two variants share the parameter-vector
// machinery: a single-layer GRU conditional LM (default) and a small causal
// self-attention LM whose dropout additionally acts on attention
// probabilities.
struct ArchitectureConfig {
  enum class Kind { Gru, Attention };

  Kind kind = Kind::Gru;
  int embed_dim = 64;
  int hidden_dim = 128;  // GRU state size; FFN width for the attention variant
  int layers = 1;        // attention blocks; ignored by the GRU variant
  int max_positions = 256;
  double dropout_rate = 0.3;
};

std::string_view arch_kind_name(ArchitectureConfig::Kind kind);
ArchitectureConfig::Kind parse_arch_kind(std::string_view name);

// Named window into the flat parameter vector.
struct ParamView {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

class BuiltinModel final : public Generator {
 public:
  BuiltinModel(ArchitectureConfig arch, Vocab vocab, std::uint64_t init_seed);

  const ArchitectureConfig& arch() const { return arch_; }
  const Vocab& vocab() const override { return vocab_; }
  double dropout_rate() const override { return arch_.dropout_rate; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  const std::vector<ParamView>& views() const { return views_; }
  std::span<double> view(std::string_view name);

  std::unique_ptr<StepStream> make_stream(const DropoutMask& mask) const override;

  // Gradient ascent on the response log-likelihood: decoupled-weight-decay
  // Adam on the per-token NLL with the rate decaying linearly to ~0 across
  // the whole epoch span. Dropout is stochastic per example per epoch.
  // Throws DivergenceError (after restoring the last finite snapshot) if the
  // loss or any parameter becomes non-finite.
  TrainingReport train_epochs(std::span<const LabeledPair> data, const TrainOptions& options) override;

  // Mean NLL per response token over `data`; accumulates d(loss)/d(params)
  // into `grad_out` (sized like parameters(), caller-zeroed). `mask_seeds`
  // gives one dropout seed per example; empty means dropout disabled.
  double loss_and_gradient(std::span<const LabeledPair> data, std::span<const std::uint64_t> mask_seeds,
                           std::span<double> grad_out) const;
  // Same loss without the gradient (finite-difference probes).
  double loss(std::span<const LabeledPair> data, std::span<const std::uint64_t> mask_seeds) const;

 private:
  void build_views();
  void init_params(std::uint64_t seed);

  ArchitectureConfig arch_;
  Vocab vocab_;
  std::vector<double> params_;
  std::vector<ParamView> views_;
};

// Checkpoint container: versioned binary file holding the architecture
// descriptor, vocab, domain value lexicon and the parameter vector.
struct Checkpoint {
  ArchitectureConfig arch;
  std::vector<std::string> vocab_tokens;
  std::vector<std::string> lexicon_values;  // may be empty
  std::vector<double> params;

  BuiltinModel restore() const;
};

void save_checkpoint(const std::string& path, const BuiltinModel& model,
                     std::span<const std::string> lexicon_values);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace stgen
