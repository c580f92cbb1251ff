#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mnem/corpus.hpp"

namespace mnem {

using WordSet = std::set<std::string>;

enum class ContextMode { description, section, wiki };
std::string_view to_string(ContextMode m);
ContextMode parse_context_mode(std::string_view s);

// wiki = description + " " + section.
std::string context_text(const ContextualSample& s, ContextMode mode);

enum class Difficulty { Easy, Hard };
std::string_view to_string(Difficulty d);

struct JaccardRecord {
  std::string sample_id;
  double score = 0.0;
  Difficulty label = Difficulty::Hard;
  ContextMode context_mode = ContextMode::wiki;
  bool operator==(const JaccardRecord&) const = default;
};

// Lowercased, punctuation-trimmed whitespace words, deduplicated.
WordSet word_set(std::string_view text);

// |a & b| / |a | b|; 0 when both are empty.
double jaccard(const WordSet& a, const WordSet& b);

inline constexpr double kEasyThreshold = 0.5;

// Easy iff the caption/context Jaccard score is strictly above threshold.
std::vector<JaccardRecord> assign(const Corpus& corpus, ContextMode mode, double threshold = kEasyThreshold);

std::string split_records_to_jsonl(const std::vector<JaccardRecord>& records);
std::vector<JaccardRecord> load_split_records(const std::filesystem::path& path);

struct OverlapStats {
  double gt_overlap = 0.0;   // GT ol.
  double gen_overlap = 0.0;  // Gen. ol.
  std::size_t n = 0;
};

struct OverlapReport {
  OverlapStats overall;
  OverlapStats easy;
  OverlapStats hard;
  std::vector<std::string> missing_ids;
};

// Samples without a generated caption are listed in missing_ids and left out
// of every mean. Records supply the context mode and Easy/Hard labels.
OverlapReport overlap_report(const std::map<std::string, std::string>& generated, const Corpus& corpus,
                             const std::vector<JaccardRecord>& records);

std::string overlap_report_to_json(const OverlapReport& report);

}  // namespace mnem
