#include "mnem/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mnem/error.hpp"
#include "mnem/io.hpp"

namespace mnem {

using json = nlohmann::json;

namespace {

constexpr int kVocabFormatVersion = 1;

struct ByteMap {
  std::array<char32_t, 256> to_cp{};
  std::unordered_map<char32_t, unsigned char> from_cp;

  ByteMap() {
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) {
      to_cp[b] = direct[b] ? static_cast<char32_t>(b) : next++;
      from_cp[to_cp[b]] = static_cast<unsigned char>(b);
    }
  }
};

const ByteMap& byte_map() {
  static const ByteMap m;
  return m;
}

struct Piece {
  std::size_t begin;
  std::size_t end;
  std::int32_t word;
};

std::vector<Piece> split_pieces(std::string_view s) {
  std::vector<Piece> pieces;
  const auto words = text::whitespace_words(s);
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    pieces.push_back({prev_end, words[i].end, static_cast<std::int32_t>(i)});
    prev_end = words[i].end;
  }
  if (prev_end < s.size()) {
    pieces.push_back({prev_end, s.size(), words.empty() ? 0 : static_cast<std::int32_t>(words.size() - 1)});
  }
  return pieces;
}

}  // namespace

std::string bytes_to_printable(std::string_view bytes) {
  std::string out;
  for (unsigned char b : bytes) text::append_utf8(out, byte_map().to_cp[b]);
  return out;
}

std::string printable_to_bytes(std::string_view s) {
  std::string out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t len = 0;
    const char32_t cp = text::decode_utf8(s, pos, &len);
    auto it = byte_map().from_cp.find(cp);
    if (it == byte_map().from_cp.end()) throw FormatError("invalid code point in vocab token");
    out.push_back(static_cast<char>(it->second));
    pos += len;
  }
  return out;
}

// ---- BpeVocab ----

BpeVocab::BpeVocab() : BpeVocab(std::vector<Merge>{}) {}

BpeVocab::BpeVocab(std::vector<Merge> merges) : merges_(std::move(merges)) {
  bytes_.resize(size());
  for (int b = 0; b < 256; ++b) {
    bytes_[b] = std::string(1, static_cast<char>(b));
    by_bytes_[bytes_[b]] = b;
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto [l, rt] = merges_[r];
    const auto id = static_cast<TokenId>(kFirstLearned + r);
    if (!valid(l) || !valid(rt) || l >= id || rt >= id || is_special(l) || is_special(rt)) {
      throw ArgumentError("merge " + std::to_string(r) + " references an invalid token");
    }
    std::string joined = bytes_[l] + bytes_[rt];
    if (by_bytes_.contains(joined)) throw ArgumentError("merge " + std::to_string(r) + " duplicates a token");
    bytes_[id] = joined;
    by_bytes_[std::move(joined)] = id;
    if (!rank_.emplace(pair_key(l, rt), static_cast<int>(r)).second) {
      throw ArgumentError("duplicate merge at rank " + std::to_string(r));
    }
  }
}

const std::string& BpeVocab::token_bytes(TokenId id) const {
  if (!valid(id)) throw ArgumentError("token id " + std::to_string(id) + " out of range");
  return bytes_[static_cast<std::size_t>(id)];
}

std::string BpeVocab::special_name(TokenId id) {
  switch (id) {
    case kPad: return "PAD";
    case kBos: return "BOS";
    case kEos: return "EOS";
    case kUnk: return "UNK";
    case kMask: return "MASK";
    default: break;
  }
  if (is_sentinel(id)) return "SENT_" + std::to_string(id - kSent0);
  throw ArgumentError("token id " + std::to_string(id) + " is not special");
}

std::string BpeVocab::special_marker(TokenId id) { return "[" + special_name(id) + "]"; }

TokenId BpeVocab::id_of_bytes(std::string_view bytes) const {
  auto it = by_bytes_.find(std::string(bytes));
  return it == by_bytes_.end() ? -1 : it->second;
}

TokenId BpeVocab::special_id(std::string_view name) const {
  for (TokenId id = kPad; id < kFirstLearned; ++id) {
    if (special_name(id) == name) return id;
  }
  return -1;
}

int BpeVocab::merge_rank(TokenId left, TokenId right) const {
  auto it = rank_.find(pair_key(left, right));
  return it == rank_.end() ? -1 : it->second;
}

TokenId BpeVocab::non_special_at(std::size_t i) const {
  return i < 256 ? static_cast<TokenId>(i) : static_cast<TokenId>(i + kNumSpecials);
}

std::string BpeVocab::to_json() const {
  json merges = json::array();
  for (const auto& [l, r] : merges_) {
    merges.push_back(json::array({bytes_to_printable(bytes_[l]), bytes_to_printable(bytes_[r])}));
  }
  json specials = json::object();
  for (TokenId id = kPad; id < kFirstLearned; ++id) specials[special_name(id)] = id;
  json j;
  j["version"] = kVocabFormatVersion;
  j["merges"] = std::move(merges);
  j["specials"] = std::move(specials);
  return j.dump();
}

BpeVocab BpeVocab::from_json(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("vocab is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("version", 0) != kVocabFormatVersion) throw FormatError("unsupported vocab version");
  if (!j.contains("specials") || !j["specials"].is_object()) throw FormatError("vocab lacks specials");
  for (auto it = j["specials"].begin(); it != j["specials"].end(); ++it) {
    const TokenId expected = BpeVocab().special_id(it.key());
    if (expected < 0 || !it->is_number_integer() || it->get<TokenId>() != expected) {
      throw FormatError("special token " + it.key() + " does not match the reserved layout");
    }
  }
  // Merge ids are resolved incrementally: every token a merge names must
  // already exist.
  std::unordered_map<std::string, TokenId> known;
  for (int b = 0; b < 256; ++b) known[std::string(1, static_cast<char>(b))] = b;
  std::vector<Merge> merges;
  const json& jm = j.at("merges");
  if (!jm.is_array()) throw FormatError("merges must be an array");
  for (std::size_t r = 0; r < jm.size(); ++r) {
    const json& m = jm[r];
    if (!m.is_array() || m.size() != 2 || !m[0].is_string() || !m[1].is_string()) {
      throw FormatError("merge " + std::to_string(r) + " must be [left, right]");
    }
    const std::string l = printable_to_bytes(m[0].get<std::string>());
    const std::string rt = printable_to_bytes(m[1].get<std::string>());
    auto li = known.find(l);
    auto ri = known.find(rt);
    if (li == known.end() || ri == known.end()) throw FormatError("merge " + std::to_string(r) + " uses an unknown token");
    merges.emplace_back(li->second, ri->second);
    known[l + rt] = static_cast<TokenId>(kFirstLearned + r);
  }
  try {
    return BpeVocab(std::move(merges));
  } catch (const ArgumentError& e) {
    throw FormatError(e.what());
  }
}

void BpeVocab::save(const std::filesystem::path& path) const { write_file(path, to_json()); }

BpeVocab BpeVocab::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

// ---- training ----

BpeVocab train_bpe(std::span<const std::string> texts, std::size_t target_vocab_size) {
  if (texts.empty()) throw ArgumentError("cannot train BPE on an empty corpus");
  if (target_vocab_size < static_cast<std::size_t>(BpeVocab::kFirstLearned)) {
    throw ArgumentError("target vocab size must be at least " + std::to_string(BpeVocab::kFirstLearned));
  }

  // Unique pieces with frequencies, in sorted order for determinism.
  std::map<std::string, std::int64_t> piece_freq;
  for (const auto& t : texts) {
    for (const auto& p : split_pieces(t)) ++piece_freq[t.substr(p.begin, p.end - p.begin)];
  }
  std::vector<std::vector<TokenId>> words;
  std::vector<std::int64_t> freq;
  for (const auto& [piece, f] : piece_freq) {
    std::vector<TokenId> syms;
    for (unsigned char b : piece) syms.push_back(b);
    words.push_back(std::move(syms));
    freq.push_back(f);
  }

  auto key = [](TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
  };
  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> where;
  for (std::uint32_t w = 0; w < words.size(); ++w) {
    const auto& s = words[w];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      const auto k = key(s[i], s[i + 1]);
      counts[k] += freq[w];
      where[k].push_back(w);
    }
  }

  std::vector<std::string> bytes;
  for (int b = 0; b < 256; ++b) bytes.emplace_back(1, static_cast<char>(b));
  bytes.resize(BpeVocab::kFirstLearned);
  std::unordered_set<std::string> existing(bytes.begin(), bytes.begin() + 256);
  std::unordered_set<std::uint64_t> blocked;
  std::vector<BpeVocab::Merge> merges;

  while (static_cast<std::size_t>(BpeVocab::kFirstLearned) + merges.size() < target_vocab_size) {
    std::uint64_t best = 0;
    std::int64_t best_count = 0;
    for (const auto& [k, c] : counts) {
      if (c < 2 || blocked.contains(k)) continue;
      if (c > best_count) {
        best = k;
        best_count = c;
        continue;
      }
      if (c == best_count) {
        const auto la = static_cast<TokenId>(k >> 32), ra = static_cast<TokenId>(k & 0xFFFFFFFF);
        const auto lb = static_cast<TokenId>(best >> 32), rb = static_cast<TokenId>(best & 0xFFFFFFFF);
        if (std::tie(bytes[la], bytes[ra]) < std::tie(bytes[lb], bytes[rb])) best = k;
      }
    }
    if (best_count < 2) break;
    const auto left = static_cast<TokenId>(best >> 32);
    const auto right = static_cast<TokenId>(best & 0xFFFFFFFF);
    std::string joined = bytes[left] + bytes[right];
    if (existing.contains(joined)) {
      blocked.insert(best);
      continue;
    }
    const auto new_id = static_cast<TokenId>(BpeVocab::kFirstLearned + merges.size());
    merges.emplace_back(left, right);
    bytes.push_back(joined);
    existing.insert(std::move(joined));

    std::vector<std::uint32_t> touched = std::move(where[best]);
    where.erase(best);
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (const std::uint32_t w : touched) {
      auto& s = words[w];
      bool has = false;
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        if (s[i] == left && s[i + 1] == right) {
          has = true;
          break;
        }
      }
      if (!has) continue;
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        auto it = counts.find(key(s[i], s[i + 1]));
        if ((it->second -= freq[w]) == 0) counts.erase(it);
      }
      std::vector<TokenId> merged;
      merged.reserve(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == left && s[i + 1] == right) {
          merged.push_back(new_id);
          ++i;
        } else {
          merged.push_back(s[i]);
        }
      }
      s = std::move(merged);
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        const auto k = key(s[i], s[i + 1]);
        counts[k] += freq[w];
        auto& list = where[k];
        if (list.empty() || list.back() != w) list.push_back(w);
      }
    }
  }
  return BpeVocab(std::move(merges));
}

// ---- encode / decode ----

TokenSeq encode(const BpeVocab& vocab, std::string_view text) {
  TokenSeq seq;
  seq.text_length = text.size();
  std::vector<TokenId> syms;
  std::vector<std::size_t> starts;
  for (const Piece& p : split_pieces(text)) {
    syms.clear();
    starts.clear();
    for (std::size_t i = p.begin; i < p.end; ++i) {
      syms.push_back(static_cast<unsigned char>(text[i]));
      starts.push_back(i);
    }
    while (syms.size() > 1) {
      int best_rank = -1;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        const int r = vocab.merge_rank(syms[i], syms[i + 1]);
        if (r >= 0 && (best_rank < 0 || r < best_rank)) best_rank = r;
      }
      if (best_rank < 0) break;
      const auto [l, rt] = vocab.merges()[static_cast<std::size_t>(best_rank)];
      const auto new_id = static_cast<TokenId>(BpeVocab::kFirstLearned + best_rank);
      std::size_t out = 0;
      for (std::size_t i = 0; i < syms.size(); ++i, ++out) {
        syms[out] = syms[i];
        starts[out] = starts[i];
        if (i + 1 < syms.size() && syms[i] == l && syms[i + 1] == rt) {
          syms[out] = new_id;
          ++i;
        }
      }
      syms.resize(out);
      starts.resize(out);
    }
    for (std::size_t i = 0; i < syms.size(); ++i) {
      seq.ids.push_back(syms[i]);
      seq.char_spans.push_back({starts[i], i + 1 < syms.size() ? starts[i + 1] : p.end});
      seq.word_ids.push_back(p.word);
    }
  }
  return seq;
}

std::string decode(const BpeVocab& vocab, std::span<const TokenId> ids, bool skip_specials) {
  std::string out;
  bool after_special = false;
  auto ends_with_space = [&] { return !out.empty() && (out.back() == ' ' || out.back() == '\n' || out.back() == '\t'); };
  for (const TokenId id : ids) {
    if (!vocab.valid(id)) throw ArgumentError("token id " + std::to_string(id) + " out of range");
    if (BpeVocab::is_special(id)) {
      if (skip_specials) continue;
      if (!out.empty() && !ends_with_space()) out.push_back(' ');
      out += BpeVocab::special_marker(id);
      after_special = true;
      continue;
    }
    const std::string& b = vocab.token_bytes(id);
    if (after_special && !b.empty()) {
      const char c = b.front();
      if (c != ' ' && c != '\n' && c != '\t') out.push_back(' ');
    }
    after_special = false;
    out += b;
  }
  return out;
}

std::vector<TokenRange> word_groups(const TokenSeq& seq) {
  std::vector<TokenRange> groups;
  std::int32_t current = -1;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const std::int32_t w = seq.word_ids[i];
    if (w < 0) continue;
    if (groups.empty() || w != current || groups.back().end != i) {
      groups.push_back({i, i + 1});
      current = w;
    } else {
      groups.back().end = i + 1;
    }
  }
  return groups;
}

}  // namespace mnem
