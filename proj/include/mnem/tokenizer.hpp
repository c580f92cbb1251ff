#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mnem/text.hpp"

namespace mnem {

using TokenId = std::int32_t;

// Half-open range of token indices.
struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const TokenRange&) const = default;
};

struct TokenSeq {
  std::vector<TokenId> ids;
  std::vector<text::Slice> char_spans;  // empty span for special tokens
  std::vector<std::int32_t> word_ids;   // -1 for special tokens
  std::size_t text_length = 0;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
};

// Byte-level BPE vocabulary.
//
// Id layout: 0..255 raw bytes, 256..260 PAD BOS EOS UNK MASK, 261..360
// SENT_0..SENT_99, then one id per learned merge in rank order.
class BpeVocab {
 public:
  static constexpr TokenId kPad = 256;
  static constexpr TokenId kBos = 257;
  static constexpr TokenId kEos = 258;
  static constexpr TokenId kUnk = 259;
  static constexpr TokenId kMask = 260;
  static constexpr TokenId kSent0 = 261;
  static constexpr int kNumSentinels = 100;
  static constexpr int kNumSpecials = 5 + kNumSentinels;
  static constexpr TokenId kFirstLearned = 256 + kNumSpecials;

  using Merge = std::pair<TokenId, TokenId>;

  BpeVocab();
  // Throws ArgumentError if a merge references an unknown id or duplicates an
  // existing token string.
  explicit BpeVocab(std::vector<Merge> merges);

  std::size_t size() const { return static_cast<std::size_t>(kFirstLearned) + merges_.size(); }
  const std::vector<Merge>& merges() const { return merges_; }

  static bool is_special(TokenId id) { return id >= kPad && id < kFirstLearned; }
  static TokenId sentinel(int l) { return kSent0 + l; }
  static bool is_sentinel(TokenId id) { return id >= kSent0 && id < kSent0 + kNumSentinels; }
  bool valid(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < size(); }

  // Raw bytes of a non-special token.
  const std::string& token_bytes(TokenId id) const;
  // "PAD", "MASK", "SENT_3", ...
  static std::string special_name(TokenId id);
  // "[MASK]" etc.
  static std::string special_marker(TokenId id);

  // -1 when absent.
  TokenId id_of_bytes(std::string_view bytes) const;
  TokenId special_id(std::string_view name) const;
  // Rank of merge (left, right), or -1.
  int merge_rank(TokenId left, TokenId right) const;

  // Ids a random MLM replacement may draw from: every non-special id.
  std::size_t non_special_count() const { return size() - kNumSpecials; }
  TokenId non_special_at(std::size_t i) const;

  std::string to_json() const;
  static BpeVocab from_json(std::string_view json_text);
  void save(const std::filesystem::path& path) const;
  static BpeVocab load(const std::filesystem::path& path);

  bool operator==(const BpeVocab& o) const { return merges_ == o.merges_; }

 private:
  static std::uint64_t pair_key(TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
  }

  std::vector<Merge> merges_;
  std::vector<std::string> bytes_;  // indexed by id; empty for specials
  std::unordered_map<std::string, TokenId> by_bytes_;
  std::unordered_map<std::uint64_t, int> rank_;
};

// Greedy pair merging within whitespace pieces. The most frequent adjacent
// pair wins; ties go to the lexicographically smaller (left, right) byte pair.
// Stops at target_vocab_size or when no pair occurs at least twice. A pair
// whose concatenation already exists as a token is skipped.
BpeVocab train_bpe(std::span<const std::string> texts, std::size_t target_vocab_size);

// Pieces are a run of leading whitespace plus the following non-whitespace
// word; trailing whitespace joins the last word. Merges never cross pieces.
TokenSeq encode(const BpeVocab& vocab, std::string_view text);

// Throws ArgumentError on ids outside the vocabulary. Special tokens render
// as "[NAME]" markers separated from neighbouring text by one space.
std::string decode(const BpeVocab& vocab, std::span<const TokenId> ids, bool skip_specials = false);

// One range per word, in order, covering all non-special tokens.
std::vector<TokenRange> word_groups(const TokenSeq& seq);

// GPT-2 style reversible byte <-> printable code point mapping used to store
// arbitrary byte strings in JSON.
std::string bytes_to_printable(std::string_view bytes);
std::string printable_to_bytes(std::string_view s);

}  // namespace mnem
