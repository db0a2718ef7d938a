#include "stgen/corpus.hpp"

#include <cctype>
#include <fstream>
#include <set>

#include "stgen/tokens.hpp"

namespace stgen {

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open data file: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

bool blank(const std::string& line) {
  for (char c : line)
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  return true;
}

void note_failure(ParseMode mode, LoadReport* report, std::size_t line_no, const std::string& reason) {
  if (mode == ParseMode::Strict) throw FormatError(line_no, reason);
  if (report) {
    ++report->skipped;
    report->errors.emplace_back(line_no, reason);
  }
}

}  // namespace

std::vector<LabeledPair> load_pairs(const std::filesystem::path& path, ParseMode mode, Origin origin,
                                    LoadReport* report) {
  std::vector<LabeledPair> pairs;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    try {
      CombinedLine combined = parse_combined_line(lines[i]);
      pairs.push_back({std::move(combined.mr), std::move(combined.text), origin});
      if (report) ++report->parsed;
    } catch (const MalformedMrError& e) {
      note_failure(mode, report, i + 1, e.what());
    }
  }
  return pairs;
}

std::vector<MeaningRepresentation> load_mrs(const std::filesystem::path& path, ParseMode mode,
                                            LoadReport* report) {
  std::vector<MeaningRepresentation> mrs;
  std::set<std::string> seen;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    try {
      MeaningRepresentation mr = parse_mr(lines[i]);
      if (seen.insert(render_mr(mr)).second) mrs.push_back(std::move(mr));
      if (report) ++report->parsed;
    } catch (const MalformedMrError& e) {
      note_failure(mode, report, i + 1, e.what());
    }
  }
  return mrs;
}

DataSplit load_split(const std::filesystem::path& train_path, const std::filesystem::path& dev_path,
                     const std::filesystem::path& test_path, const std::filesystem::path& unlabeled_path,
                     ParseMode mode, LoadReport* report) {
  DataSplit split;
  split.train = load_pairs(train_path, mode, Origin::Gold, report);
  split.dev = load_pairs(dev_path, mode, Origin::Gold, report);
  split.test = load_pairs(test_path, mode, Origin::Gold, report);
  split.unlabeled = load_mrs(unlabeled_path, mode, report);
  if (split.train.empty()) throw FormatError(0, "training file has no valid pairs: " + train_path.string());
  return split;
}

void save_pairs(const std::filesystem::path& path, std::span<const LabeledPair> pairs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open file for writing: " + path.string());
  for (const auto& pair : pairs) os << render_combined_line(pair.mr, pair.text) << '\n';
  if (!os) throw IoError("failed writing: " + path.string());
}

void save_mrs(const std::filesystem::path& path, std::span<const MeaningRepresentation> mrs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open file for writing: " + path.string());
  for (const auto& mr : mrs) os << render_mr(mr) << '\n';
  if (!os) throw IoError("failed writing: " + path.string());
}

}  // namespace stgen
