#include "mnem/split.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "mnem/error.hpp"
#include "mnem/io.hpp"
#include "mnem/text.hpp"

namespace mnem {

using json = nlohmann::json;

std::string_view to_string(ContextMode m) {
  switch (m) {
    case ContextMode::description: return "description";
    case ContextMode::section: return "section";
    case ContextMode::wiki: return "wiki";
  }
  return "wiki";
}

ContextMode parse_context_mode(std::string_view s) {
  if (s == "description") return ContextMode::description;
  if (s == "section") return ContextMode::section;
  if (s == "wiki") return ContextMode::wiki;
  throw ArgumentError("unknown context mode: " + std::string(s));
}

std::string context_text(const ContextualSample& s, ContextMode mode) {
  switch (mode) {
    case ContextMode::description: return s.description;
    case ContextMode::section: return s.section;
    case ContextMode::wiki: return s.description + " " + s.section;
  }
  return {};
}

std::string_view to_string(Difficulty d) { return d == Difficulty::Easy ? "Easy" : "Hard"; }

WordSet word_set(std::string_view text) {
  auto words = text::normalized_words(text);
  return WordSet(std::make_move_iterator(words.begin()), std::make_move_iterator(words.end()));
}

double jaccard(const WordSet& a, const WordSet& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<JaccardRecord> assign(const Corpus& corpus, ContextMode mode, double threshold) {
  std::vector<JaccardRecord> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) {
    const double score = jaccard(word_set(s.caption), word_set(context_text(s, mode)));
    out.push_back({s.id, score, score > threshold ? Difficulty::Easy : Difficulty::Hard, mode});
  }
  return out;
}

std::string split_records_to_jsonl(const std::vector<JaccardRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += json{{"sample_id", r.sample_id},
                {"score", r.score},
                {"label", to_string(r.label)},
                {"context_mode", to_string(r.context_mode)}}
               .dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<JaccardRecord> load_split_records(const std::filesystem::path& path) {
  std::vector<JaccardRecord> out;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      JaccardRecord r;
      r.sample_id = j.at("sample_id").get<std::string>();
      r.score = j.at("score").get<double>();
      const auto label = j.at("label").get<std::string>();
      if (label != "Easy" && label != "Hard") throw ArgumentError("label must be Easy or Hard");
      r.label = label == "Easy" ? Difficulty::Easy : Difficulty::Hard;
      r.context_mode = parse_context_mode(j.at("context_mode").get<std::string>());
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

OverlapReport overlap_report(const std::map<std::string, std::string>& generated, const Corpus& corpus,
                             const std::vector<JaccardRecord>& records) {
  std::map<std::string, const ContextualSample*> by_id;
  for (const auto& s : corpus) by_id[s.id] = &s;

  OverlapReport rep;
  // Sums run in record order so means are reproducible bit for bit.
  auto add = [](OverlapStats& st, double gt, double gen) {
    st.gt_overlap += gt;
    st.gen_overlap += gen;
    ++st.n;
  };
  for (const auto& r : records) {
    auto s = by_id.find(r.sample_id);
    auto g = generated.find(r.sample_id);
    if (s == by_id.end() || g == generated.end()) {
      rep.missing_ids.push_back(r.sample_id);
      continue;
    }
    const WordSet ctx = word_set(context_text(*s->second, r.context_mode));
    const double gt = jaccard(word_set(s->second->caption), ctx);
    const double gen = jaccard(word_set(g->second), ctx);
    add(rep.overall, gt, gen);
    add(r.label == Difficulty::Easy ? rep.easy : rep.hard, gt, gen);
  }
  for (OverlapStats* st : {&rep.overall, &rep.easy, &rep.hard}) {
    if (st->n > 0) {
      st->gt_overlap /= static_cast<double>(st->n);
      st->gen_overlap /= static_cast<double>(st->n);
    }
  }
  return rep;
}

std::string overlap_report_to_json(const OverlapReport& report) {
  auto stats = [](const OverlapStats& s) { return json{{"gt_ol", s.gt_overlap}, {"gen_ol", s.gen_overlap}, {"n", s.n}}; };
  json j;
  j["overall"] = stats(report.overall);
  j["easy"] = stats(report.easy);
  j["hard"] = stats(report.hard);
  j["coverage"]["missing_ids"] = report.missing_ids;
  return j.dump(2);
}

}  // namespace mnem
