#pragma once

// Slow, direct implementations used as test oracles. N-grams are kept as
// word vectors and counted with nested loops; TF-IDF vectors are dense over
// the union vocabulary.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace mnem::oracle {

using Sent = std::vector<std::string>;
using Gram = std::vector<std::string>;

inline std::vector<Gram> grams(const Sent& s, std::size_t n) {
  std::vector<Gram> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) out.emplace_back(s.begin() + i, s.begin() + i + n);
  return out;
}

inline std::size_t count_of(const std::vector<Gram>& gs, const Gram& g) {
  return static_cast<std::size_t>(std::count(gs.begin(), gs.end(), g));
}

inline double bleu(const std::vector<Sent>& cands, const std::vector<Sent>& refs, bool smooth) {
  double p_log = 0;
  double c_len = 0, r_len = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    c_len += cands[i].size();
    r_len += refs[i].size();
  }
  for (std::size_t n = 1; n <= 4; ++n) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const auto cg = grams(cands[i], n);
      const auto rg = grams(refs[i], n);
      den += cg.size();
      std::vector<Gram> seen;
      for (const auto& g : cg) {
        if (std::find(seen.begin(), seen.end(), g) != seen.end()) continue;
        seen.push_back(g);
        num += std::min(count_of(cg, g), count_of(rg, g));
      }
    }
    if (smooth && n > 1) {
      num += 1;
      den += 1;
    }
    if (num == 0) return 0.0;
    p_log += std::log(num / den) / 4;
  }
  const double bp = c_len >= r_len ? 1.0 : std::exp(1 - r_len / c_len);
  return bp * std::exp(p_log);
}

inline double lcs(const Sent& a, const Sent& b) {
  // plain recursion table
  std::vector<std::vector<int>> t(a.size() + 1, std::vector<int>(b.size() + 1, 0));
  for (std::size_t i = a.size(); i-- > 0;)
    for (std::size_t j = b.size(); j-- > 0;)
      t[i][j] = a[i] == b[j] ? 1 + t[i + 1][j + 1] : std::max(t[i + 1][j], t[i][j + 1]);
  return t[0][0];
}

inline double rouge(const Sent& c, const Sent& r) {
  const double l = lcs(c, r);
  if (l == 0) return 0.0;
  const double p = l / c.size(), rec = l / r.size(), b = 1.2;
  return (1 + b * b) * p * rec / (rec + b * b * p);
}

// CIDEr-D with one reference per candidate, document frequency over refs.
inline double cider(const std::vector<Sent>& cands, const std::vector<Sent>& refs) {
  const double N = refs.size();
  std::map<Gram, double> df;
  for (const auto& r : refs) {
    for (std::size_t n = 1; n <= 4; ++n) {
      std::vector<Gram> uniq;
      for (const auto& g : grams(r, n))
        if (std::find(uniq.begin(), uniq.end(), g) == uniq.end()) uniq.push_back(g);
      for (const auto& g : uniq) df[g] += 1;
    }
  }
  double total = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double score = 0;
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cg = grams(cands[i], n);
      const auto rg = grams(refs[i], n);
      std::vector<Gram> vocab = cg;
      vocab.insert(vocab.end(), rg.begin(), rg.end());
      std::sort(vocab.begin(), vocab.end());
      vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
      std::vector<double> vc, vr;
      for (const auto& g : vocab) {
        const double d = df.count(g) ? df[g] : 0.0;
        const double idf = std::log(N) - std::log(std::max(1.0, d));
        vc.push_back(count_of(cg, g) * idf);
        vr.push_back(count_of(rg, g) * idf);
      }
      double dot = 0, nc = 0, nr = 0;
      for (std::size_t k = 0; k < vocab.size(); ++k) {
        dot += std::min(vc[k], vr[k]) * vr[k];
        nc += vc[k] * vc[k];
        nr += vr[k] * vr[k];
      }
      double val = (nc > 0 && nr > 0) ? dot / (std::sqrt(nc) * std::sqrt(nr)) : dot;
      const double delta = double(cands[i].size()) - double(refs[i].size());
      score += val * std::exp(-delta * delta / 72.0);
    }
    total += score / 4 * 10;
  }
  return total / cands.size();
}

}  // namespace mnem::oracle
