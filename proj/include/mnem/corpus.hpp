#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mnem {

enum class Source { wiki, news, synthetic };

std::string_view to_string(Source s);
Source parse_source(std::string_view s);

// One (image, caption, section, description) quadruple.
struct ContextualSample {
  std::string id;
  std::string page_title;
  std::string caption;
  std::string section;
  std::string description;
  std::optional<std::string> image_feature_id;
  Source source = Source::wiki;

  bool operator==(const ContextualSample&) const = default;
};

using Corpus = std::vector<ContextualSample>;

enum class TextField { caption, section, description };
std::string_view to_string(TextField f);
TextField parse_field(std::string_view s);
const std::string& field_text(const ContextualSample& s, TextField f);

struct Reject {
  std::size_t line_no = 0;  // 1-based
  std::string reason;
};

// Maps keys of the input JSON objects onto sample fields. Sample fields are
// id, page_title, caption, section, description, image_feature_id, source.
struct FieldMap {
  std::map<std::string, std::string> source_to_field;
  Source default_source = Source::wiki;

  // Keys of the corpus JSONL format map onto themselves.
  static FieldMap identity();
  // caption_reference_description -> caption, context_section_description ->
  // section, caption_attribution_description -> description, page_title,
  // image_url -> image_feature_id.
  static FieldMap wit();
  // Parses "src=field,src=field".
  static FieldMap parse(std::string_view spec);
};

struct IngestResult {
  Corpus corpus;
  std::vector<Reject> rejects;
};

// Lines that fail to parse, miss the caption, or have neither section nor
// description are reported in `rejects`; ingestion continues. Without a mapped
// id the 1-based line number becomes the id.
IngestResult ingest_jsonl(const std::filesystem::path& path, const FieldMap& map = FieldMap::identity());
IngestResult ingest_jsonl_string(std::string_view content, const FieldMap& map = FieldMap::identity());

void write_corpus_jsonl(const std::filesystem::path& path, const Corpus& corpus);
std::string corpus_to_jsonl(const Corpus& corpus);
void write_rejects_jsonl(const std::filesystem::path& path, const std::vector<Reject>& rejects);

// ---- filtering ----

struct FilterOptions {
  std::size_t min_caption_words = 3;
  std::size_t min_section_words = 10;
};

struct FilterReport {
  std::size_t input = 0;
  std::size_t removed_short_caption = 0;
  std::size_t removed_short_section = 0;
  std::size_t chars_stripped = 0;
  std::size_t kept = 0;
};

struct FilterResult {
  Corpus corpus;
  FilterReport report;
};

// Allowed: ASCII letters and digits; space, tab, newline; the punctuation in
// kAllowedPunct; Latin-1 and Latin Extended-A/B letters U+00C0..U+024F except
// U+00D7 and U+00F7; curly quotes U+2018 U+2019 U+201C U+201D; dashes U+2013
// U+2014. Everything else, including control characters, is removed.
inline constexpr std::string_view kAllowedPunct = ".,;:!?'\"()[]-&/%$#+@*=";
bool is_allowed_char(char32_t cp);
std::string allowlist_description();
std::string strip_disallowed(std::string_view s, std::size_t* removed = nullptr);

// Strips disallowed characters from every text field, then drops samples whose
// caption or section has fewer words than the thresholds.
FilterResult filter_corpus(const Corpus& corpus, const FilterOptions& opts = {});

// ---- dedup / split ----

// Keeps the first sample per (image_feature_id, section + description,
// caption) triple, comparing lowercased whitespace-collapsed text.
Corpus dedup(const Corpus& corpus);

struct DatasetSplit {
  Corpus train;
  Corpus val;
  Corpus test;
};

// Seeded Fisher-Yates over sample indices; the first n_test shuffled indices
// form test, the next n_val form val. Each part keeps input order.
DatasetSplit split_dataset(const Corpus& corpus, std::uint64_t seed, std::size_t n_val, std::size_t n_test);

// Validation and test sizes of the WIT partition (2.6M / 8K / 20K) scaled to n.
struct SplitSizes {
  std::size_t val = 0;
  std::size_t test = 0;
};
inline constexpr double kWitTrain = 2'600'000.0;
inline constexpr double kWitVal = 8'000.0;
inline constexpr double kWitTest = 20'000.0;
SplitSizes wit_ratio_sizes(std::size_t n);

// ---- image features ----

class FeatureStore {
 public:
  FeatureStore() = default;
  explicit FeatureStore(std::uint32_t dim);

  std::uint32_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Throws ArgumentError on length mismatch or non-finite values.
  void put(const std::string& id, std::vector<float> vec);
  const std::vector<float>* find(const std::string& id) const;
  const std::map<std::string, std::vector<float>>& entries() const { return entries_; }

  bool operator==(const FeatureStore&) const = default;

 private:
  std::uint32_t dim_ = 0;
  std::map<std::string, std::vector<float>> entries_;
};

// Layout: "WFEA", u32 version = 1, u32 dim, u64 count, then per entry
// u16 id length, id bytes, dim little-endian f32.
FeatureStore load_features(const std::filesystem::path& path);
void save_features(const FeatureStore& store, const std::filesystem::path& path);

}  // namespace mnem
