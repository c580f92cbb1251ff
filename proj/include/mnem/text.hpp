#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// Shared text primitives. All offsets are UTF-8 byte offsets.
namespace mnem::text {

struct Slice {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
  bool operator==(const Slice&) const = default;
};

// Decodes one code point at `pos`. Invalid sequences decode as U+FFFD with
// length 1 so callers always make progress.
char32_t decode_utf8(std::string_view s, std::size_t pos, std::size_t* len);
void append_utf8(std::string& out, char32_t cp);
bool is_valid_utf8(std::string_view s);

bool is_space(char32_t cp);
bool is_ascii_punct(char c);
bool is_sentence_terminal(char c);

// Maximal runs of non-whitespace code points.
std::vector<Slice> whitespace_words(std::string_view s);

// A whitespace word with leading/trailing ASCII punctuation trimmed off.
// Empty when the word is all punctuation.
Slice trim_punct(std::string_view s, Slice word);

std::string lower_ascii(std::string_view s);

// Lowercase + punctuation-stripped words in order, empties dropped. This is the
// word identity used by overlap scores, caption metrics, and corpus stats.
std::vector<std::string> normalized_words(std::string_view s);

// Lowercased, whitespace-collapsed, trimmed.
std::string collapse_lower(std::string_view s);

}  // namespace mnem::text
