#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mnem/corpus.hpp"
#include "mnem/ner.hpp"
#include "mnem/split.hpp"

namespace mnem {

using Words = std::vector<std::string>;

// Caption metrics tokenize with text::normalized_words so they agree with the
// overlap scores on word identity.
Words metric_words(const std::string& text);

struct BleuOptions {
  bool smooth = false;  // add-1 on the n >= 2 counts
};

// Corpus-level BLEU-4 with one reference per candidate.
double bleu4(const std::vector<Words>& candidates, const std::vector<Words>& references, const BleuOptions& opts = {});

// ROUGE-L F-measure with beta = 1.2.
inline constexpr double kRougeBeta = 1.2;
double rouge_l(const Words& candidate, const Words& reference);
double rouge_l_corpus(const std::vector<Words>& candidates, const std::vector<Words>& references);

// Document frequencies of 1..4-grams over the reference corpus, one document
// per reference. An n-gram is its words joined by a single space.
struct IdfTable {
  std::map<std::string, double> df;
  double doc_count = 0.0;

  static IdfTable from_references(const std::vector<Words>& references);
  bool empty() const { return doc_count <= 0.0; }
  double log_doc_count() const;
};

inline constexpr double kCiderSigma = 6.0;

// CIDEr-D as in the COCO toolkit: TF-IDF n-gram vectors (n = 1..4), clipped
// candidate weights, Gaussian length penalty, averaged over n, times 10.
double cider_d_pair(const Words& candidate, const Words& reference, const IdfTable& idf);
double cider_d(const std::vector<Words>& candidates, const std::vector<Words>& references, const IdfTable& idf);

using EntitySet = std::set<std::string>;

// Lowercased, punctuation-trimmed, whitespace-collapsed surface.
std::string normalize_entity(const std::string& surface);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

// Micro-averaged set overlap.
PrecisionRecall ne_precision_recall(const std::vector<EntitySet>& generated, const std::vector<EntitySet>& gt);

struct MetricReport {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
  double ne_precision = 0.0;
  double ne_recall = 0.0;
  double avg_gen_length = 0.0;
  std::size_t n_evaluated = 0;
  double gt_overlap = 0.0;
  double gen_overlap = 0.0;
};

struct EvaluationReport {
  MetricReport overall;
  std::optional<MetricReport> easy;
  std::optional<MetricReport> hard;
  std::vector<std::string> missing_ids;
};

struct EvalOptions {
  DomainMode mode = DomainMode::wiki;
  // Used for overlap statistics when no split records are given.
  ContextMode context = ContextMode::wiki;
};

// Entities on both sides come from tag_heuristic with the same gazetteer,
// keeping labels selected by `mode`. Samples without a generated caption are
// listed in missing_ids and excluded.
EvaluationReport evaluate(const std::map<std::string, std::string>& generated, const Corpus& corpus,
                          const Gazetteer& gazetteer, const std::vector<JaccardRecord>* split_records = nullptr,
                          const EvalOptions& opts = {});

std::string evaluation_to_json(const EvaluationReport& report);

std::map<std::string, std::string> load_generated(const std::filesystem::path& path);
std::string generated_to_jsonl(const std::vector<std::pair<std::string, std::string>>& captions);

}  // namespace mnem
