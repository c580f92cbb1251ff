#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mnem/corpus.hpp"
#include "mnem/tokenizer.hpp"

namespace mnem {

enum class EntityLabel { PERSON, ORG, GPE, NORP, LOC, FAC, OTHER };

std::string_view to_string(EntityLabel l);
// Unknown labels (DATE, CARDINAL, ...) map to OTHER.
EntityLabel parse_label(std::string_view s);

enum class DomainMode { wiki, news };
DomainMode parse_mode(std::string_view s);
std::string_view to_string(DomainMode m);

struct EntitySpan {
  std::size_t start = 0;  // byte offset
  std::size_t end = 0;    // exclusive
  EntityLabel label = EntityLabel::OTHER;
  std::string surface;

  bool operator==(const EntitySpan&) const = default;
};

struct FieldSpans {
  std::vector<EntitySpan> caption;
  std::vector<EntitySpan> section;
  std::vector<EntitySpan> description;

  std::vector<EntitySpan>& at(TextField f);
  const std::vector<EntitySpan>& at(TextField f) const;
  bool operator==(const FieldSpans&) const = default;
};

using Annotations = std::map<std::string, FieldSpans>;

struct AnnotationReject {
  std::size_t line_no = 0;
  std::string sample_id;
  std::string reason;
};

struct AnnotationLoadResult {
  Annotations annotations;
  std::vector<AnnotationReject> rejects;
};

// Sidecar JSONL: {sample_id, field, spans: [{start, end, label}]}. When a
// corpus is given, offsets are validated against the field text and surfaces
// are sliced from it; otherwise an optional per-span "surface" is trusted.
// Records with overlapping or out-of-range spans are rejected whole.
AnnotationLoadResult load_annotations(const std::filesystem::path& path, const Corpus* corpus = nullptr);
AnnotationLoadResult parse_annotations(std::string_view content, const Corpus* corpus = nullptr);
std::string annotations_to_jsonl(const Annotations& ann);
void save_annotations(const Annotations& ann, const std::filesystem::path& path);

// Checks ordering, non-overlap, bounds, and surface integrity against `text`.
// Returns an error message or empty.
std::string validate_spans(std::string_view text, const std::vector<EntitySpan>& spans);

class Gazetteer {
 public:
  Gazetteer() = default;

  // Surfaces are matched on whitespace-collapsed text.
  void add(std::string_view surface, EntityLabel label);
  std::optional<EntityLabel> find(std::string_view surface) const;
  std::size_t max_words() const { return max_words_; }
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, EntityLabel>& entries() const { return entries_; }

  // TSV: surface<TAB>label per line.
  static Gazetteer load_tsv(const std::filesystem::path& path);
  std::string to_tsv() const;
  // Every labelled surface in the annotations.
  static Gazetteer from_annotations(const Annotations& ann);

 private:
  std::map<std::string, EntityLabel> entries_;
  std::size_t max_words_ = 0;
};

// Longest gazetteer match over punctuation-trimmed words, then maximal runs of
// capitalized words not at sentence start tagged OTHER. No span crosses
// sentence-terminal punctuation.
std::vector<EntitySpan> tag_heuristic(std::string_view text, const Gazetteer& gazetteer);

// wiki keeps PERSON, ORG, GPE; news adds NORP, LOC, FAC.
bool label_selected(EntityLabel l, DomainMode mode);
std::vector<EntitySpan> filter_labels(const std::vector<EntitySpan>& spans, DomainMode mode);

// Token ranges M_l, strictly ordered and non-overlapping.
struct MaskSpanSet {
  std::vector<TokenRange> spans;
  bool operator==(const MaskSpanSet&) const = default;
};

// Each entity maps to the tokens whose char spans intersect it, widened to
// whole words; ranges that overlap or touch are merged.
MaskSpanSet align_to_tokens(const std::vector<EntitySpan>& spans, const TokenSeq& seq);

}  // namespace mnem
