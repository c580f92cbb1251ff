#include "mnem/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mnem/error.hpp"
#include "mnem/io.hpp"
#include "mnem/rng.hpp"
#include "mnem/text.hpp"

namespace mnem {

using json = nlohmann::json;

std::string_view to_string(Source s) {
  switch (s) {
    case Source::wiki: return "wiki";
    case Source::news: return "news";
    case Source::synthetic: return "synthetic";
  }
  return "wiki";
}

Source parse_source(std::string_view s) {
  if (s == "wiki") return Source::wiki;
  if (s == "news") return Source::news;
  if (s == "synthetic") return Source::synthetic;
  throw ArgumentError("unknown source: " + std::string(s));
}

std::string_view to_string(TextField f) {
  switch (f) {
    case TextField::caption: return "caption";
    case TextField::section: return "section";
    case TextField::description: return "description";
  }
  return "caption";
}

TextField parse_field(std::string_view s) {
  if (s == "caption") return TextField::caption;
  if (s == "section") return TextField::section;
  if (s == "description") return TextField::description;
  throw ArgumentError("unknown field: " + std::string(s));
}

const std::string& field_text(const ContextualSample& s, TextField f) {
  switch (f) {
    case TextField::caption: return s.caption;
    case TextField::section: return s.section;
    case TextField::description: return s.description;
  }
  return s.caption;
}

FieldMap FieldMap::identity() {
  FieldMap m;
  for (const char* k : {"id", "page_title", "caption", "section", "description", "image_feature_id", "source"}) {
    m.source_to_field[k] = k;
  }
  return m;
}

FieldMap FieldMap::wit() {
  FieldMap m;
  m.source_to_field = {
      {"caption_reference_description", "caption"},
      {"context_section_description", "section"},
      {"caption_attribution_description", "description"},
      {"page_title", "page_title"},
      {"image_url", "image_feature_id"},
  };
  return m;
}

FieldMap FieldMap::parse(std::string_view spec) {
  static const std::unordered_set<std::string> kFields = {
      "id", "page_title", "caption", "section", "description", "image_feature_id", "source"};
  FieldMap m;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    std::size_t comma = spec.find(',', pos);
    if (comma == std::string_view::npos) comma = spec.size();
    const std::string_view item = spec.substr(pos, comma - pos);
    pos = comma + 1;
    if (item.empty()) continue;
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) throw ArgumentError("field map entry needs src=field: " + std::string(item));
    std::string src(item.substr(0, eq));
    std::string dst(item.substr(eq + 1));
    if (!kFields.contains(dst)) throw ArgumentError("unknown sample field in field map: " + dst);
    m.source_to_field[src] = dst;
  }
  return m;
}

namespace {

std::optional<std::string> string_value(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  return std::nullopt;
}

// Returns the rejection reason, or empty on success.
std::string parse_line(const std::string& line, std::size_t line_no, const FieldMap& map, ContextualSample& out) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    return std::string("malformed json: ") + e.what();
  }
  if (!obj.is_object()) return "line is not a JSON object";

  std::map<std::string, std::string> fields;
  for (const auto& [src, dst] : map.source_to_field) {
    auto it = obj.find(src);
    if (it == obj.end() || it->is_null()) continue;
    auto v = string_value(*it);
    if (!v) return "field " + src + " is not a string";
    fields[dst] = std::move(*v);
  }
  auto caption = fields.find("caption");
  if (caption == fields.end() || caption->second.empty()) return "missing caption";
  const bool has_section = fields.contains("section") && !fields["section"].empty();
  const bool has_desc = fields.contains("description") && !fields["description"].empty();
  if (!has_section && !has_desc) return "missing section and description";
  for (const auto& [k, v] : fields) {
    if (!text::is_valid_utf8(v)) return "field " + k + " is not valid UTF-8";
  }

  out = ContextualSample{};
  out.id = fields.contains("id") ? fields["id"] : std::to_string(line_no);
  out.page_title = fields["page_title"];
  out.caption = fields["caption"];
  out.section = fields["section"];
  out.description = fields["description"];
  if (auto it = fields.find("image_feature_id"); it != fields.end() && !it->second.empty()) {
    out.image_feature_id = it->second;
  }
  out.source = map.default_source;
  if (auto it = fields.find("source"); it != fields.end()) {
    try {
      out.source = parse_source(it->second);
    } catch (const ArgumentError& e) {
      return e.what();
    }
  }
  if (out.source == Source::news && !out.description.empty()) return "news sample carries a description";
  return {};
}

}  // namespace

IngestResult ingest_jsonl_string(std::string_view content, const FieldMap& map) {
  IngestResult result;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string line(content.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    ContextualSample sample;
    std::string reason = parse_line(line, line_no, map, sample);
    if (reason.empty() && !seen.insert(sample.id).second) reason = "duplicate id " + sample.id;
    if (!reason.empty()) {
      result.rejects.push_back({line_no, std::move(reason)});
      continue;
    }
    result.corpus.push_back(std::move(sample));
  }
  return result;
}

IngestResult ingest_jsonl(const std::filesystem::path& path, const FieldMap& map) {
  return ingest_jsonl_string(read_file(path), map);
}

std::string corpus_to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& s : corpus) {
    json j = json::object();
    j["id"] = s.id;
    j["page_title"] = s.page_title;
    j["caption"] = s.caption;
    j["section"] = s.section;
    j["description"] = s.description;
    j["image_feature_id"] = s.image_feature_id ? json(*s.image_feature_id) : json(nullptr);
    j["source"] = to_string(s.source);
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

void write_corpus_jsonl(const std::filesystem::path& path, const Corpus& corpus) {
  write_file(path, corpus_to_jsonl(corpus));
}

void write_rejects_jsonl(const std::filesystem::path& path, const std::vector<Reject>& rejects) {
  std::string out;
  for (const auto& r : rejects) {
    out += json{{"line_no", r.line_no}, {"reason", r.reason}}.dump();
    out.push_back('\n');
  }
  write_file(path, out);
}

// ---- filtering ----

bool is_allowed_char(char32_t cp) {
  if ((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') || (cp >= '0' && cp <= '9')) return true;
  if (cp == ' ' || cp == '\t' || cp == '\n') return true;
  if (cp < 0x80) return kAllowedPunct.find(static_cast<char>(cp)) != std::string_view::npos;
  if (cp >= 0xC0 && cp <= 0x24F) return cp != 0xD7 && cp != 0xF7;
  switch (cp) {
    case 0x2018: case 0x2019: case 0x201C: case 0x201D: case 0x2013: case 0x2014:
      return true;
    default:
      return false;
  }
}

std::string allowlist_description() {
  std::string out;
  out += "letters:     A-Z a-z, U+00C0..U+024F (except U+00D7, U+00F7)\n";
  out += "digits:      0-9\n";
  out += "whitespace:  space, tab, newline\n";
  out += "punctuation: " + std::string(kAllowedPunct) + "\n";
  out += "typographic: U+2018 U+2019 U+201C U+201D (quotes), U+2013 U+2014 (dashes)\n";
  return out;
}

std::string strip_disallowed(std::string_view s, std::size_t* removed) {
  std::string out;
  out.reserve(s.size());
  std::size_t pos = 0;
  std::size_t dropped = 0;
  while (pos < s.size()) {
    std::size_t len = 0;
    const char32_t cp = text::decode_utf8(s, pos, &len);
    if (is_allowed_char(cp)) {
      out.append(s.substr(pos, len));
    } else {
      ++dropped;
    }
    pos += len;
  }
  if (removed) *removed += dropped;
  return out;
}

FilterResult filter_corpus(const Corpus& corpus, const FilterOptions& opts) {
  FilterResult result;
  result.report.input = corpus.size();
  for (const auto& in : corpus) {
    ContextualSample s = in;
    std::size_t stripped = 0;
    s.page_title = strip_disallowed(s.page_title, &stripped);
    s.caption = strip_disallowed(s.caption, &stripped);
    s.section = strip_disallowed(s.section, &stripped);
    s.description = strip_disallowed(s.description, &stripped);
    if (text::whitespace_words(s.caption).size() < std::max<std::size_t>(opts.min_caption_words, 1)) {
      ++result.report.removed_short_caption;
      continue;
    }
    if (text::whitespace_words(s.section).size() < opts.min_section_words) {
      ++result.report.removed_short_section;
      continue;
    }
    result.report.chars_stripped += stripped;
    result.corpus.push_back(std::move(s));
  }
  result.report.kept = result.corpus.size();
  return result;
}

// ---- dedup / split ----

Corpus dedup(const Corpus& corpus) {
  Corpus out;
  std::unordered_set<std::string> seen;
  for (const auto& s : corpus) {
    std::string key = s.image_feature_id.value_or("");
    key.push_back('\x1f');
    key += text::collapse_lower(s.section);
    key.push_back('\x1e');
    key += text::collapse_lower(s.description);
    key.push_back('\x1f');
    key += text::collapse_lower(s.caption);
    if (seen.insert(std::move(key)).second) out.push_back(s);
  }
  return out;
}

DatasetSplit split_dataset(const Corpus& corpus, std::uint64_t seed, std::size_t n_val, std::size_t n_test) {
  if (n_val + n_test > corpus.size()) {
    throw ArgumentError("split sizes " + std::to_string(n_val) + "+" + std::to_string(n_test) +
                        " exceed corpus size " + std::to_string(corpus.size()));
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(seed);
  for (std::size_t i = 0; i + 1 < order.size(); ++i) {
    const std::size_t j = i + rng.below(order.size() - i);
    std::swap(order[i], order[j]);
  }
  std::vector<int> part(corpus.size(), 0);
  for (std::size_t i = 0; i < n_test; ++i) part[order[i]] = 2;
  for (std::size_t i = n_test; i < n_test + n_val; ++i) part[order[i]] = 1;

  DatasetSplit out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    (part[i] == 0 ? out.train : part[i] == 1 ? out.val : out.test).push_back(corpus[i]);
  }
  return out;
}

SplitSizes wit_ratio_sizes(std::size_t n) {
  const double total = kWitTrain + kWitVal + kWitTest;
  return {static_cast<std::size_t>(std::llround(static_cast<double>(n) * kWitVal / total)),
          static_cast<std::size_t>(std::llround(static_cast<double>(n) * kWitTest / total))};
}

// ---- image features ----

FeatureStore::FeatureStore(std::uint32_t dim) : dim_(dim) {
  if (dim == 0) throw ArgumentError("feature dimension must be positive");
}

void FeatureStore::put(const std::string& id, std::vector<float> vec) {
  if (vec.size() != dim_) {
    throw ArgumentError("feature " + id + " has length " + std::to_string(vec.size()) + ", expected " +
                        std::to_string(dim_));
  }
  if (id.size() > 0xFFFF) throw ArgumentError("feature id longer than 65535 bytes");
  for (float v : vec) {
    if (!std::isfinite(v)) throw ArgumentError("feature " + id + " has a non-finite value");
  }
  entries_[id] = std::move(vec);
}

const std::vector<float>* FeatureStore::find(const std::string& id) const {
  auto it = entries_.find(id);
  return it == entries_.end() ? nullptr : &it->second;
}

FeatureStore load_features(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  ByteReader in(bytes);
  if (bytes.size() < 4 || bytes.compare(0, 4, "WFEA") != 0) throw FormatError(path.string() + ": bad magic");
  in.skip(4);
  const auto version = in.u32();
  if (version != 1) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  const auto dim = in.u32();
  const auto count = in.u64();
  if (dim == 0) throw FormatError(path.string() + ": zero dimension");
  FeatureStore store(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = in.u16();
    std::string id = in.bytes(len);
    std::vector<float> vec(dim);
    for (auto& v : vec) v = in.f32();
    try {
      store.put(id, std::move(vec));
    } catch (const ArgumentError& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  if (!in.at_end()) throw FormatError(path.string() + ": trailing bytes after " + std::to_string(count) + " entries");
  return store;
}

void save_features(const FeatureStore& store, const std::filesystem::path& path) {
  ByteWriter out;
  out.raw("WFEA");
  out.u32(1);
  out.u32(store.dim());
  out.u64(store.size());
  for (const auto& [id, vec] : store.entries()) {
    out.u16(static_cast<std::uint16_t>(id.size()));
    out.raw(id);
    for (float v : vec) out.f32(v);
  }
  write_file(path, out.str());
}

}  // namespace mnem
