#pragma once

#include <filesystem>
#include <string>

#include "stgen/builtin_model.hpp"
#include "stgen/corpus.hpp"
#include "stgen/selftrain.hpp"
#include "stgen/toy_grammar.hpp"

namespace stgen {

// Declarative experiment configuration. The file is strict JSON: unknown
// keys are rejected with the offending key named, so typos fail loudly
// instead of silently running defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir;  // optional; CLI falls back to the output root env var

  bool has_data = false;
  std::filesystem::path train_path, dev_path, test_path, unlabeled_path;
  ParseMode parse_mode = ParseMode::Strict;

  bool has_toy = false;
  ToyGrammarSpec grammar;
  std::size_t n_train = 50, n_dev = 30, n_test = 100, n_unlabeled = 500;

  ArchitectureConfig arch;
  SelfTrainConfig selftrain;
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& text);

ToyGrammarSpec load_grammar_file(const std::filesystem::path& path);
ToyGrammarSpec parse_grammar(const std::string& text);

// Loads the data files or synthesizes the toy corpus, whichever the config
// declares.
DataSplit materialize_split(const RunConfig& config, LoadReport* report = nullptr);

}  // namespace stgen
