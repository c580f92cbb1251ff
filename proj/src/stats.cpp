#include "mnem/stats.hpp"

#include <nlohmann/json.hpp>

#include "mnem/text.hpp"

namespace mnem {

FieldStat& CorpusStats::at(TextField f) {
  switch (f) {
    case TextField::caption: return caption;
    case TextField::section: return section;
    case TextField::description: return description;
  }
  return caption;
}

CorpusStats compute_stats(const Corpus& corpus, const Annotations& annotations) {
  CorpusStats st;
  st.n_samples = corpus.size();
  static const std::vector<EntitySpan> kNone;
  for (const auto& s : corpus) {
    auto ann = annotations.find(s.id);
    for (TextField f : {TextField::caption, TextField::section, TextField::description}) {
      FieldStat& fs = st.at(f);
      const std::string& t = field_text(s, f);
      const auto& spans = ann == annotations.end() ? kNone : ann->second.at(f);
      for (const auto& sp : spans) ++st.label_histogram[sp.label];
      std::size_t k = 0;
      for (const auto& w : text::whitespace_words(t)) {
        const auto core = text::trim_punct(t, w);
        if (core.size() == 0) continue;
        ++fs.total_words;
        while (k < spans.size() && spans[k].end <= core.begin) ++k;
        if (k < spans.size() && spans[k].start < core.end) ++fs.ne_words;
      }
    }
  }
  for (TextField f : {TextField::caption, TextField::section, TextField::description}) {
    FieldStat& fs = st.at(f);
    if (st.n_samples > 0) fs.avg_words = static_cast<double>(fs.total_words) / static_cast<double>(st.n_samples);
    if (fs.total_words > 0) fs.ne_word_fraction = static_cast<double>(fs.ne_words) / static_cast<double>(fs.total_words);
  }
  return st;
}

std::string stats_to_json(const CorpusStats& stats) {
  nlohmann::json j;
  j["n_samples"] = stats.n_samples;
  for (TextField f : {TextField::caption, TextField::section, TextField::description}) {
    const auto& fs = stats.at(f);
    j["avg_words"][std::string(to_string(f))] = fs.avg_words;
    j["ne_word_fraction"][std::string(to_string(f))] = fs.ne_word_fraction;
  }
  j["label_histogram"] = nlohmann::json::object();
  for (const auto& [label, n] : stats.label_histogram) j["label_histogram"][std::string(to_string(label))] = n;
  return j.dump(2);
}

}  // namespace mnem
