#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stgen/mr.hpp"

namespace stgen {

// train/dev/test gold pairs plus the unlabeled MR pool. Immutable once
// loaded; shared freely across threads.
struct DataSplit {
  std::vector<LabeledPair> train;
  std::vector<LabeledPair> dev;
  std::vector<LabeledPair> test;
  std::vector<MeaningRepresentation> unlabeled;
};

enum class ParseMode { Strict, Lenient };

struct LoadReport {
  std::size_t parsed = 0;
  std::size_t skipped = 0;
  std::vector<std::pair<std::size_t, std::string>> errors;  // line number, reason
};

// One combined line `MR & response` per row.
std::vector<LabeledPair> load_pairs(const std::filesystem::path& path, ParseMode mode, Origin origin,
                                    LoadReport* report = nullptr);

// One MR per row, deduplicated by canonical serialization (first wins).
std::vector<MeaningRepresentation> load_mrs(const std::filesystem::path& path, ParseMode mode,
                                            LoadReport* report = nullptr);

DataSplit load_split(const std::filesystem::path& train_path, const std::filesystem::path& dev_path,
                     const std::filesystem::path& test_path, const std::filesystem::path& unlabeled_path,
                     ParseMode mode = ParseMode::Strict, LoadReport* report = nullptr);

void save_pairs(const std::filesystem::path& path, std::span<const LabeledPair> pairs);
void save_mrs(const std::filesystem::path& path, std::span<const MeaningRepresentation> mrs);

}  // namespace stgen
