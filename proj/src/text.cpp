#include "mnem/text.hpp"

namespace mnem::text {

char32_t decode_utf8(std::string_view s, std::size_t pos, std::size_t* len) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  auto fail = [&] {
    *len = 1;
    return char32_t{0xFFFD};
  };
  if (b0 < 0x80) {
    *len = 1;
    return b0;
  }
  std::size_t n = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    n = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    n = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    n = 4;
    cp = b0 & 0x07;
  } else {
    return fail();
  }
  if (pos + n > s.size()) return fail();
  for (std::size_t i = 1; i < n; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xC0) != 0x80) return fail();
    cp = (cp << 6) | (b & 0x3F);
  }
  // Overlong forms, surrogates, out of range.
  if ((n == 2 && cp < 0x80) || (n == 3 && cp < 0x800) || (n == 4 && cp < 0x10000) ||
      (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) {
    return fail();
  }
  *len = n;
  return cp;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool is_valid_utf8(std::string_view s) {
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t len = 0;
    const char32_t cp = decode_utf8(s, pos, &len);
    if (cp == 0xFFFD && !(len == 3 && s.substr(pos, 3) == "\xEF\xBF\xBD")) return false;
    pos += len;
  }
  return true;
}

bool is_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return (u >= 0x21 && u <= 0x2F) || (u >= 0x3A && u <= 0x40) || (u >= 0x5B && u <= 0x60) ||
         (u >= 0x7B && u <= 0x7E);
}

bool is_sentence_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

std::vector<Slice> whitespace_words(std::string_view s) {
  std::vector<Slice> out;
  std::size_t pos = 0;
  bool in_word = false;
  std::size_t start = 0;
  while (pos < s.size()) {
    std::size_t len = 0;
    const char32_t cp = decode_utf8(s, pos, &len);
    const bool space = is_space(cp);
    if (!space && !in_word) {
      start = pos;
      in_word = true;
    } else if (space && in_word) {
      out.push_back({start, pos});
      in_word = false;
    }
    pos += len;
  }
  if (in_word) out.push_back({start, s.size()});
  return out;
}

Slice trim_punct(std::string_view s, Slice word) {
  while (word.begin < word.end && is_ascii_punct(s[word.begin])) ++word.begin;
  while (word.end > word.begin && is_ascii_punct(s[word.end - 1])) --word.end;
  return word;
}

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::vector<std::string> normalized_words(std::string_view s) {
  std::vector<std::string> out;
  for (const Slice& w : whitespace_words(s)) {
    const Slice core = trim_punct(s, w);
    if (core.size() == 0) continue;
    out.push_back(lower_ascii(s.substr(core.begin, core.size())));
  }
  return out;
}

std::string collapse_lower(std::string_view s) {
  std::string out;
  for (const Slice& w : whitespace_words(s)) {
    if (!out.empty()) out.push_back(' ');
    out += lower_ascii(s.substr(w.begin, w.size()));
  }
  return out;
}

}  // namespace mnem::text
