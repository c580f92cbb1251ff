#include "mnem/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "mnem/error.hpp"
#include "mnem/io.hpp"
#include "mnem/text.hpp"

namespace mnem {

using json = nlohmann::json;

Words metric_words(const std::string& text) { return text::normalized_words(text); }

namespace {

using NgramCounts = std::unordered_map<std::string, int>;

// n-grams of exactly order n.
NgramCounts ngrams(const Words& w, std::size_t n) {
  NgramCounts out;
  if (w.size() < n) return out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) {
    std::string g = w[i];
    for (std::size_t k = 1; k < n; ++k) {
      g.push_back(' ');
      g += w[i + k];
    }
    ++out[g];
  }
  return out;
}

void check_sizes(std::size_t c, std::size_t r) {
  if (r == 0) throw ArgumentError("empty reference set");
  if (c != r) throw ArgumentError("candidate and reference counts differ");
}

}  // namespace

double bleu4(const std::vector<Words>& candidates, const std::vector<Words>& references, const BleuOptions& opts) {
  check_sizes(candidates.size(), references.size());
  double matched[4] = {0, 0, 0, 0};
  double total[4] = {0, 0, 0, 0};
  double cand_len = 0.0;
  double ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_len += static_cast<double>(candidates[i].size());
    ref_len += static_cast<double>(references[i].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto c = ngrams(candidates[i], n);
      const auto r = ngrams(references[i], n);
      for (const auto& [g, cnt] : c) {
        auto it = r.find(g);
        if (it != r.end()) matched[n - 1] += std::min(cnt, it->second);
      }
      if (candidates[i].size() >= n) total[n - 1] += static_cast<double>(candidates[i].size() - n + 1);
    }
  }
  if (cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double m = matched[n];
    double t = total[n];
    if (opts.smooth && n >= 1) {
      m += 1.0;
      t += 1.0;
    }
    if (m == 0.0 || t == 0.0) return 0.0;
    log_sum += std::log(m / t);
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return bp * std::exp(log_sum / 4.0);
}

double rouge_l(const Words& candidate, const Words& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::vector<std::size_t> prev(reference.size() + 1, 0), cur(reference.size() + 1, 0);
  for (std::size_t i = 1; i <= candidate.size(); ++i) {
    for (std::size_t j = 1; j <= reference.size(); ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[reference.size()]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  const double b2 = kRougeBeta * kRougeBeta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

double rouge_l_corpus(const std::vector<Words>& candidates, const std::vector<Words>& references) {
  check_sizes(candidates.size(), references.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += rouge_l(candidates[i], references[i]);
  return sum / static_cast<double>(candidates.size());
}

IdfTable IdfTable::from_references(const std::vector<Words>& references) {
  IdfTable t;
  t.doc_count = static_cast<double>(references.size());
  for (const auto& ref : references) {
    for (std::size_t n = 1; n <= 4; ++n) {
      for (const auto& [g, cnt] : ngrams(ref, n)) t.df[g] += 1.0;
    }
  }
  return t;
}

double IdfTable::log_doc_count() const { return std::log(doc_count); }

namespace {

struct TfIdf {
  std::array<std::unordered_map<std::string, double>, 4> vec;
  std::array<double, 4> norm{};
};

TfIdf tfidf(const Words& w, const IdfTable& idf) {
  TfIdf out;
  const double ref_len = idf.log_doc_count();
  for (std::size_t n = 1; n <= 4; ++n) {
    for (const auto& [g, tf] : ngrams(w, n)) {
      auto it = idf.df.find(g);
      const double df = it == idf.df.end() ? 1.0 : std::max(1.0, it->second);
      const double v = static_cast<double>(tf) * (ref_len - std::log(df));
      out.vec[n - 1][g] = v;
      out.norm[n - 1] += v * v;
    }
    out.norm[n - 1] = std::sqrt(out.norm[n - 1]);
  }
  return out;
}

}  // namespace

double cider_d_pair(const Words& candidate, const Words& reference, const IdfTable& idf) {
  if (idf.empty()) throw ArgumentError("CIDEr-D needs a non-empty IDF table");
  const TfIdf c = tfidf(candidate, idf);
  const TfIdf r = tfidf(reference, idf);
  const double delta = static_cast<double>(candidate.size()) - static_cast<double>(reference.size());
  const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
  double total = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double val = 0.0;
    for (const auto& [g, v] : c.vec[n]) {
      auto it = r.vec[n].find(g);
      if (it != r.vec[n].end()) val += std::min(v, it->second) * it->second;
    }
    if (c.norm[n] != 0.0 && r.norm[n] != 0.0) val /= c.norm[n] * r.norm[n];
    total += val * penalty;
  }
  return total / 4.0 * 10.0;
}

double cider_d(const std::vector<Words>& candidates, const std::vector<Words>& references, const IdfTable& idf) {
  check_sizes(candidates.size(), references.size());
  if (idf.empty()) throw ArgumentError("CIDEr-D needs a non-empty IDF table");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += cider_d_pair(candidates[i], references[i], idf);
  return sum / static_cast<double>(candidates.size());
}

std::string normalize_entity(const std::string& surface) {
  std::string out;
  for (const auto& w : text::normalized_words(surface)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

PrecisionRecall ne_precision_recall(const std::vector<EntitySet>& generated, const std::vector<EntitySet>& gt) {
  if (generated.size() != gt.size()) throw ArgumentError("entity set lists differ in length");
  double hit = 0.0;
  double gen_total = 0.0;
  double gt_total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    std::size_t inter = 0;
    for (const auto& e : generated[i]) inter += gt[i].count(e);
    hit += static_cast<double>(inter);
    gen_total += static_cast<double>(generated[i].size());
    gt_total += static_cast<double>(gt[i].size());
  }
  return {gen_total > 0 ? hit / gen_total : 0.0, gt_total > 0 ? hit / gt_total : 0.0};
}

namespace {

EntitySet entity_set(const std::string& text, const Gazetteer& gaz, DomainMode mode) {
  EntitySet out;
  for (const auto& s : filter_labels(tag_heuristic(text, gaz), mode)) {
    std::string n = normalize_entity(s.surface);
    if (!n.empty()) out.insert(std::move(n));
  }
  return out;
}

struct EvalItem {
  const ContextualSample* sample;
  const std::string* generated;
  ContextMode context;
};

MetricReport score_items(const std::vector<EvalItem>& items, const Gazetteer& gaz, DomainMode mode) {
  MetricReport rep;
  rep.n_evaluated = items.size();
  if (items.empty()) return rep;
  std::vector<Words> cand, ref;
  std::vector<EntitySet> gen_ents, gt_ents;
  double len = 0.0;
  for (const auto& it : items) {
    cand.push_back(metric_words(*it.generated));
    ref.push_back(metric_words(it.sample->caption));
    len += static_cast<double>(cand.back().size());
    gen_ents.push_back(entity_set(*it.generated, gaz, mode));
    gt_ents.push_back(entity_set(it.sample->caption, gaz, mode));
    const WordSet ctx = word_set(context_text(*it.sample, it.context));
    rep.gt_overlap += jaccard(word_set(it.sample->caption), ctx);
    rep.gen_overlap += jaccard(word_set(*it.generated), ctx);
  }
  const double n = static_cast<double>(items.size());
  rep.bleu4 = bleu4(cand, ref);
  rep.rouge_l = rouge_l_corpus(cand, ref);
  rep.cider_d = cider_d(cand, ref, IdfTable::from_references(ref));
  const auto pr = ne_precision_recall(gen_ents, gt_ents);
  rep.ne_precision = pr.precision;
  rep.ne_recall = pr.recall;
  rep.avg_gen_length = len / n;
  rep.gt_overlap /= n;
  rep.gen_overlap /= n;
  return rep;
}

json report_json(const MetricReport& r) {
  return json{{"bleu4", r.bleu4},           {"rouge_l", r.rouge_l},     {"cider_d", r.cider_d},
              {"ne_precision", r.ne_precision}, {"ne_recall", r.ne_recall}, {"avg_gen_length", r.avg_gen_length},
              {"n_evaluated", r.n_evaluated}, {"gt_ol", r.gt_overlap},    {"gen_ol", r.gen_overlap}};
}

}  // namespace

EvaluationReport evaluate(const std::map<std::string, std::string>& generated, const Corpus& corpus,
                          const Gazetteer& gazetteer, const std::vector<JaccardRecord>* split_records,
                          const EvalOptions& opts) {
  EvaluationReport rep;
  std::map<std::string, const JaccardRecord*> rec_by_id;
  if (split_records) {
    for (const auto& r : *split_records) rec_by_id[r.sample_id] = &r;
  }
  std::vector<EvalItem> all, easy, hard;
  for (const auto& s : corpus) {
    auto g = generated.find(s.id);
    if (g == generated.end()) {
      rep.missing_ids.push_back(s.id);
      continue;
    }
    const JaccardRecord* rec = nullptr;
    if (split_records) {
      auto it = rec_by_id.find(s.id);
      if (it != rec_by_id.end()) rec = it->second;
    }
    EvalItem item{&s, &g->second, rec ? rec->context_mode : opts.context};
    all.push_back(item);
    if (rec) (rec->label == Difficulty::Easy ? easy : hard).push_back(item);
  }
  rep.overall = score_items(all, gazetteer, opts.mode);
  if (split_records) {
    rep.easy = score_items(easy, gazetteer, opts.mode);
    rep.hard = score_items(hard, gazetteer, opts.mode);
  }
  return rep;
}

std::string evaluation_to_json(const EvaluationReport& report) {
  json j;
  j["overall"] = report_json(report.overall);
  if (report.easy) j["easy"] = report_json(*report.easy);
  if (report.hard) j["hard"] = report_json(*report.hard);
  j["coverage"]["missing_ids"] = report.missing_ids;
  return j.dump(2);
}

std::map<std::string, std::string> load_generated(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out[j.at("sample_id").get<std::string>()] = j.at("caption").get<std::string>();
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string generated_to_jsonl(const std::vector<std::pair<std::string, std::string>>& captions) {
  std::string out;
  for (const auto& [id, cap] : captions) {
    out += json{{"sample_id", id}, {"caption", cap}}.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace mnem
