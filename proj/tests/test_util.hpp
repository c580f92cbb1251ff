#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

namespace mnem::testing {

// Fresh per-test scratch directory under the build tree's temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mnem_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Independent SplitMix64 stream (state += golden; output = mix(state)) used to
// replay the masking draws without going through CounterRng.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  double unit() { return static_cast<double>(next() >> 11) / 9007199254740992.0; }

 private:
  std::uint64_t state_;
};

// Random valid UTF-8: mixes ASCII, whitespace runs, 2/3/4-byte code points.
inline std::string random_utf8(std::mt19937_64& gen, std::size_t max_cps) {
  std::uniform_int_distribution<std::size_t> len_dist(0, max_cps);
  std::uniform_int_distribution<int> kind(0, 9);
  std::string out;
  const std::size_t n = len_dist(gen);
  for (std::size_t i = 0; i < n; ++i) {
    char32_t cp = 0;
    switch (kind(gen)) {
      case 0: cp = U" \t\n"[gen() % 3]; break;
      case 1: cp = 0xA0 + static_cast<char32_t>(gen() % 0x700); break;
      case 2: cp = 0x2000 + static_cast<char32_t>(gen() % 0x30); break;  // includes Unicode spaces
      case 3: cp = 0x4E00 + static_cast<char32_t>(gen() % 0x5000); break;
      case 4: cp = 0x1F300 + static_cast<char32_t>(gen() % 0x300); break;
      default: cp = 0x20 + static_cast<char32_t>(gen() % 0x5F); break;
    }
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
  return out;
}

}  // namespace mnem::testing
