#include "mnem/ner.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "mnem/error.hpp"
#include "mnem/io.hpp"
#include "mnem/text.hpp"

namespace mnem {

using json = nlohmann::json;

std::string_view to_string(EntityLabel l) {
  switch (l) {
    case EntityLabel::PERSON: return "PERSON";
    case EntityLabel::ORG: return "ORG";
    case EntityLabel::GPE: return "GPE";
    case EntityLabel::NORP: return "NORP";
    case EntityLabel::LOC: return "LOC";
    case EntityLabel::FAC: return "FAC";
    case EntityLabel::OTHER: return "OTHER";
  }
  return "OTHER";
}

EntityLabel parse_label(std::string_view s) {
  if (s == "PERSON") return EntityLabel::PERSON;
  if (s == "ORG") return EntityLabel::ORG;
  if (s == "GPE") return EntityLabel::GPE;
  if (s == "NORP") return EntityLabel::NORP;
  if (s == "LOC") return EntityLabel::LOC;
  if (s == "FAC") return EntityLabel::FAC;
  return EntityLabel::OTHER;
}

DomainMode parse_mode(std::string_view s) {
  if (s == "wiki") return DomainMode::wiki;
  if (s == "news") return DomainMode::news;
  throw ArgumentError("unknown mode: " + std::string(s));
}

std::string_view to_string(DomainMode m) { return m == DomainMode::wiki ? "wiki" : "news"; }

std::vector<EntitySpan>& FieldSpans::at(TextField f) {
  switch (f) {
    case TextField::caption: return caption;
    case TextField::section: return section;
    case TextField::description: return description;
  }
  return caption;
}

const std::vector<EntitySpan>& FieldSpans::at(TextField f) const {
  return const_cast<FieldSpans*>(this)->at(f);
}

// ---- sidecar ----

std::string validate_spans(std::string_view text, const std::vector<EntitySpan>& spans) {
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& s = spans[i];
    if (s.start >= s.end) return "empty span at " + std::to_string(s.start);
    if (s.end > text.size()) {
      return "span [" + std::to_string(s.start) + "," + std::to_string(s.end) + ") beyond text length " +
             std::to_string(text.size());
    }
    if (i > 0 && spans[i - 1].end > s.start) {
      return "overlapping spans at " + std::to_string(spans[i - 1].start) + " and " + std::to_string(s.start);
    }
    if (text.substr(s.start, s.end - s.start) != s.surface) return "surface mismatch at " + std::to_string(s.start);
  }
  return {};
}

AnnotationLoadResult parse_annotations(std::string_view content, const Corpus* corpus) {
  std::map<std::string, const ContextualSample*> by_id;
  if (corpus) {
    for (const auto& s : *corpus) by_id[s.id] = &s;
  }
  AnnotationLoadResult result;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    const std::string_view line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    std::string sample_id;
    auto reject = [&](std::string reason) { result.rejects.push_back({line_no, sample_id, std::move(reason)}); };
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      reject(std::string("malformed json: ") + e.what());
      continue;
    }
    if (!rec.is_object() || !rec.contains("sample_id") || !rec["sample_id"].is_string() || !rec.contains("field") ||
        !rec["field"].is_string() || !rec.contains("spans") || !rec["spans"].is_array()) {
      reject("record needs sample_id, field, spans");
      continue;
    }
    sample_id = rec["sample_id"].get<std::string>();
    TextField field{};
    try {
      field = parse_field(rec["field"].get<std::string>());
    } catch (const ArgumentError& e) {
      reject(e.what());
      continue;
    }
    const ContextualSample* sample = nullptr;
    if (corpus) {
      auto it = by_id.find(sample_id);
      if (it == by_id.end()) {
        reject("unknown sample id");
        continue;
      }
      sample = it->second;
    }

    std::vector<EntitySpan> spans;
    std::string error;
    for (const auto& js : rec["spans"]) {
      if (!js.is_object() || !js.contains("start") || !js.contains("end") || !js["start"].is_number_unsigned() ||
          !js["end"].is_number_unsigned()) {
        error = "span needs non-negative integer start and end";
        break;
      }
      EntitySpan s;
      s.start = js["start"].get<std::size_t>();
      s.end = js["end"].get<std::size_t>();
      s.label = parse_label(js.value("label", std::string("OTHER")));
      if (sample) {
        const std::string& t = field_text(*sample, field);
        if (s.start < s.end && s.end <= t.size()) s.surface = t.substr(s.start, s.end - s.start);
      } else {
        s.surface = js.value("surface", std::string());
      }
      spans.push_back(std::move(s));
    }
    if (!error.empty()) {
      reject(error);
      continue;
    }
    std::stable_sort(spans.begin(), spans.end(),
                     [](const EntitySpan& a, const EntitySpan& b) { return a.start < b.start; });
    if (sample) {
      error = validate_spans(field_text(*sample, field), spans);
    } else {
      for (std::size_t i = 0; i < spans.size() && error.empty(); ++i) {
        if (spans[i].start >= spans[i].end) error = "empty span";
        if (i > 0 && spans[i - 1].end > spans[i].start) error = "overlapping spans";
        if (!spans[i].surface.empty() && spans[i].surface.size() != spans[i].end - spans[i].start) {
          error = "surface length does not match offsets";
        }
      }
    }
    if (!error.empty()) {
      reject(error);
      continue;
    }
    result.annotations[sample_id].at(field) = std::move(spans);
  }
  return result;
}

AnnotationLoadResult load_annotations(const std::filesystem::path& path, const Corpus* corpus) {
  return parse_annotations(read_file(path), corpus);
}

std::string annotations_to_jsonl(const Annotations& ann) {
  std::string out;
  for (const auto& [id, fields] : ann) {
    for (TextField f : {TextField::caption, TextField::section, TextField::description}) {
      const auto& spans = fields.at(f);
      if (spans.empty()) continue;
      json js = json::array();
      for (const auto& s : spans) {
        js.push_back({{"start", s.start}, {"end", s.end}, {"label", to_string(s.label)}, {"surface", s.surface}});
      }
      out += json{{"sample_id", id}, {"field", to_string(f)}, {"spans", std::move(js)}}.dump();
      out.push_back('\n');
    }
  }
  return out;
}

void save_annotations(const Annotations& ann, const std::filesystem::path& path) {
  write_file(path, annotations_to_jsonl(ann));
}

// ---- gazetteer ----

void Gazetteer::add(std::string_view surface, EntityLabel label) {
  std::string key;
  std::size_t words = 0;
  for (const auto& w : text::whitespace_words(surface)) {
    if (!key.empty()) key.push_back(' ');
    key.append(surface.substr(w.begin, w.size()));
    ++words;
  }
  if (key.empty()) throw ArgumentError("gazetteer surface must be non-empty");
  entries_[key] = label;
  max_words_ = std::max(max_words_, words);
}

std::optional<EntityLabel> Gazetteer::find(std::string_view surface) const {
  auto it = entries_.find(std::string(surface));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

Gazetteer Gazetteer::load_tsv(const std::filesystem::path& path) {
  Gazetteer g;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const std::size_t tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected surface<TAB>label");
    }
    try {
      g.add(line.substr(0, tab), parse_label(line.substr(tab + 1)));
    } catch (const ArgumentError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return g;
}

std::string Gazetteer::to_tsv() const {
  std::string out;
  for (const auto& [surface, label] : entries_) {
    out += surface;
    out.push_back('\t');
    out += to_string(label);
    out.push_back('\n');
  }
  return out;
}

Gazetteer Gazetteer::from_annotations(const Annotations& ann) {
  Gazetteer g;
  for (const auto& [id, fields] : ann) {
    for (TextField f : {TextField::caption, TextField::section, TextField::description}) {
      for (const auto& s : fields.at(f)) {
        if (!s.surface.empty() && !text::whitespace_words(s.surface).empty()) g.add(s.surface, s.label);
      }
    }
  }
  return g;
}

// ---- heuristic tagger ----

namespace {

struct TagWord {
  text::Slice core;
  bool clean_left = true;    // no punctuation before the core
  bool clean_right = true;   // no punctuation after the core
  bool ends_sentence = false;
  bool sentence_start = false;
};

bool starts_upper(std::string_view s) {
  if (s.empty()) return false;
  const auto c = static_cast<unsigned char>(s[0]);
  if (c >= 'A' && c <= 'Z') return true;
  std::size_t len = 0;
  const char32_t cp = text::decode_utf8(s, 0, &len);
  return cp >= 0xC0 && cp <= 0xDE && cp != 0xD7;
}

std::string collapse(std::string_view s) {
  std::string out;
  for (const auto& w : text::whitespace_words(s)) {
    if (!out.empty()) out.push_back(' ');
    out.append(s.substr(w.begin, w.size()));
  }
  return out;
}

}  // namespace

std::vector<EntitySpan> tag_heuristic(std::string_view text, const Gazetteer& gazetteer) {
  std::vector<TagWord> words;
  bool next_starts = true;
  for (const auto& w : text::whitespace_words(text)) {
    TagWord tw;
    tw.core = text::trim_punct(text, w);
    tw.sentence_start = next_starts;
    if (tw.core.size() == 0) {
      tw.ends_sentence = std::any_of(text.begin() + static_cast<std::ptrdiff_t>(w.begin),
                                     text.begin() + static_cast<std::ptrdiff_t>(w.end), text::is_sentence_terminal);
      tw.clean_left = tw.clean_right = false;
    } else {
      tw.clean_left = tw.core.begin == w.begin;
      tw.clean_right = tw.core.end == w.end;
      tw.ends_sentence = std::any_of(text.begin() + static_cast<std::ptrdiff_t>(tw.core.end),
                                     text.begin() + static_cast<std::ptrdiff_t>(w.end), text::is_sentence_terminal);
    }
    next_starts = tw.ends_sentence;
    words.push_back(tw);
  }

  std::vector<EntitySpan> out;
  std::vector<bool> used(words.size(), false);
  // Gazetteer pass: longest match first.
  for (std::size_t i = 0; i < words.size();) {
    if (words[i].core.size() == 0 || gazetteer.size() == 0) {
      ++i;
      continue;
    }
    std::size_t matched = 0;
    EntityLabel label = EntityLabel::OTHER;
    std::size_t limit = 1;
    while (limit < gazetteer.max_words() && i + limit < words.size() && !words[i + limit - 1].ends_sentence &&
           words[i + limit].core.size() > 0) {
      ++limit;
    }
    for (std::size_t len = limit; len >= 1; --len) {
      const std::size_t b = words[i].core.begin;
      const std::size_t e = words[i + len - 1].core.end;
      if (auto l = gazetteer.find(collapse(text.substr(b, e - b)))) {
        matched = len;
        label = *l;
        break;
      }
    }
    if (matched == 0) {
      ++i;
      continue;
    }
    const std::size_t b = words[i].core.begin;
    const std::size_t e = words[i + matched - 1].core.end;
    out.push_back({b, e, label, std::string(text.substr(b, e - b))});
    for (std::size_t k = i; k < i + matched; ++k) used[k] = true;
    i += matched;
  }

  // Capitalized runs.
  std::vector<EntitySpan> runs;
  for (std::size_t i = 0; i < words.size();) {
    const auto& w = words[i];
    const bool cap = !used[i] && w.core.size() > 0 && starts_upper(text.substr(w.core.begin, w.core.size()));
    if (!cap || w.sentence_start) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (!words[j].ends_sentence && words[j].clean_right && j + 1 < words.size() && !used[j + 1] &&
           words[j + 1].clean_left && words[j + 1].core.size() > 0 &&
           starts_upper(text.substr(words[j + 1].core.begin, words[j + 1].core.size()))) {
      ++j;
    }
    const std::size_t b = w.core.begin;
    const std::size_t e = words[j].core.end;
    runs.push_back({b, e, EntityLabel::OTHER, std::string(text.substr(b, e - b))});
    i = j + 1;
  }
  out.insert(out.end(), runs.begin(), runs.end());
  std::sort(out.begin(), out.end(), [](const EntitySpan& a, const EntitySpan& b) { return a.start < b.start; });
  return out;
}

bool label_selected(EntityLabel l, DomainMode mode) {
  switch (l) {
    case EntityLabel::PERSON:
    case EntityLabel::ORG:
    case EntityLabel::GPE:
      return true;
    case EntityLabel::NORP:
    case EntityLabel::LOC:
    case EntityLabel::FAC:
      return mode == DomainMode::news;
    case EntityLabel::OTHER:
      return false;
  }
  return false;
}

std::vector<EntitySpan> filter_labels(const std::vector<EntitySpan>& spans, DomainMode mode) {
  std::vector<EntitySpan> out;
  for (const auto& s : spans) {
    if (label_selected(s.label, mode)) out.push_back(s);
  }
  return out;
}

MaskSpanSet align_to_tokens(const std::vector<EntitySpan>& spans, const TokenSeq& seq) {
  const auto groups = word_groups(seq);
  std::vector<std::size_t> group_of(seq.size(), 0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t t = groups[g].begin; t < groups[g].end; ++t) group_of[t] = g;
  }
  MaskSpanSet out;
  std::size_t tok = 0;
  for (const auto& s : spans) {
    if (s.start >= s.end || s.end > seq.text_length) {
      throw ArgumentError("entity span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                          ") outside text of length " + std::to_string(seq.text_length));
    }
    // Spans arrive sorted, so the scan pointer only moves forward except when
    // a previous span shared its last token with this one.
    while (tok > 0 && seq.char_spans[tok - 1].end > s.start) --tok;
    while (tok < seq.size() && (seq.word_ids[tok] < 0 || seq.char_spans[tok].end <= s.start)) ++tok;
    std::size_t first = tok;
    std::size_t last = tok;
    bool hit = false;
    for (std::size_t t = tok; t < seq.size() && seq.char_spans[t].begin < s.end; ++t) {
      if (seq.word_ids[t] < 0) continue;
      if (seq.char_spans[t].end > s.start) {
        if (!hit) first = t;
        last = t;
        hit = true;
      }
    }
    if (!hit) continue;
    TokenRange r{groups[group_of[first]].begin, groups[group_of[last]].end};
    if (!out.spans.empty() && r.begin <= out.spans.back().end) {
      out.spans.back().end = std::max(out.spans.back().end, r.end);
    } else {
      out.spans.push_back(r);
    }
  }
  return out;
}

}  // namespace mnem
