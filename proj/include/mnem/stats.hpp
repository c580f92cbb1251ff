#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>

#include "mnem/corpus.hpp"
#include "mnem/ner.hpp"

namespace mnem {

struct FieldStat {
  double avg_words = 0.0;
  double ne_word_fraction = 0.0;
  std::size_t total_words = 0;
  std::size_t ne_words = 0;
};

struct CorpusStats {
  std::size_t n_samples = 0;
  FieldStat caption;
  FieldStat section;
  FieldStat description;
  std::map<EntityLabel, std::size_t> label_histogram;

  FieldStat& at(TextField f);
  const FieldStat& at(TextField f) const { return const_cast<CorpusStats*>(this)->at(f); }
};

// Words are punctuation-trimmed whitespace words (the overlap module's
// segmentation). A word is an entity word when its trimmed slice intersects
// any annotated span; samples without annotations contribute no entity words.
CorpusStats compute_stats(const Corpus& corpus, const Annotations& annotations);

std::string stats_to_json(const CorpusStats& stats);

}  // namespace mnem
