#include "mnem/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "mnem/error.hpp"
#include "mnem/rng.hpp"
#include "mnem/text.hpp"

namespace mnem {

using json = nlohmann::json;

namespace {

constexpr std::array<EntityLabel, 3> kLabels = {EntityLabel::PERSON, EntityLabel::ORG, EntityLabel::GPE};

const std::vector<std::string> kSyllables = {"ka", "ren", "vol", "mi",  "dor", "tes", "lan", "bri", "go",  "sa",
                                             "vel", "tor", "ni", "pa",  "ru",  "fen", "zol", "ma",  "li",  "ost",
                                             "bel", "kor", "an", "sil", "ve",  "dra", "mun", "te",  "hal", "zu"};
const std::vector<std::string> kOrgSuffixes = {"Institute", "Company", "Society", "Orchestra",
                                               "Council",   "Foundation", "Academy", "Guild"};

std::string make_word(CounterRng& rng, int syllables) {
  std::string w;
  for (int i = 0; i < syllables; ++i) w += kSyllables[rng.below(kSyllables.size())];
  w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

std::string make_surface(CounterRng& rng, EntityLabel l) {
  switch (l) {
    case EntityLabel::PERSON:
      return make_word(rng, 2) + " " + make_word(rng, 2 + static_cast<int>(rng.below(2)));
    case EntityLabel::ORG:
      return make_word(rng, 2 + static_cast<int>(rng.below(2))) + " " + kOrgSuffixes[rng.below(kOrgSuffixes.size())];
    default:
      return make_word(rng, 3);
  }
}

// Slot keys in template order; "tail" for {tail}.
std::vector<std::string> slot_keys(const std::string& t) {
  std::vector<std::string> keys;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != '{') continue;
    const auto close = t.find('}', i);
    if (close == std::string::npos) throw ArgumentError("unterminated slot in template: " + t);
    keys.push_back(t.substr(i + 1, close - i - 1));
    i = close;
  }
  return keys;
}

void check_slots(const std::string& t, std::size_t n, const char* what) {
  std::vector<int> seen(n, 0);
  for (const auto& k : slot_keys(t)) {
    if (k == "tail") continue;
    if (k.size() != 1 || !std::isdigit(static_cast<unsigned char>(k[0])) || static_cast<std::size_t>(k[0] - '0') >= n) {
      throw ArgumentError(std::string(what) + " template has a bad slot {" + k + "}: " + t);
    }
    ++seen[static_cast<std::size_t>(k[0] - '0')];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (seen[i] != 1) throw ArgumentError(std::string(what) + " template must use each of its " + std::to_string(n) +
                                          " slots exactly once: " + t);
  }
}

struct Rendered {
  std::string text;
  std::vector<EntitySpan> spans;
};

Rendered render(const std::string& t, const EntityInventory& inv, const std::vector<std::size_t>& fills,
                const std::string& tail) {
  Rendered r;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != '{') {
      r.text += t[i];
      continue;
    }
    const auto close = t.find('}', i);
    const std::string key = t.substr(i + 1, close - i - 1);
    if (key == "tail") {
      r.text += tail;
    } else {
      const auto& e = inv.entities[fills[static_cast<std::size_t>(key[0] - '0')]];
      r.spans.push_back({r.text.size(), r.text.size() + e.surface.size(), e.label, e.surface});
      r.text += e.surface;
    }
    i = close;
  }
  return r;
}

std::vector<std::size_t> shuffled(std::vector<std::size_t> v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return v;
}

// Words a template contributes, split into entity and other words.
struct WordCount {
  double words = 0.0;
  double ne = 0.0;
};

WordCount template_words(const std::string& t, double entity_words, double tail_words) {
  WordCount c;
  for (const auto& w : text::whitespace_words(t)) {
    const std::string piece = t.substr(w.begin, w.end - w.begin);
    if (piece.find("{tail}") != std::string::npos) {
      c.words += tail_words;
    } else if (piece.find('{') != std::string::npos) {
      c.words += entity_words;
      c.ne += entity_words;
    } else {
      c.words += static_cast<double>(text::normalized_words(piece).size());
    }
  }
  return c;
}

template <class F>
WordCount mean_over(std::size_t n, F f) {
  WordCount c;
  for (std::size_t i = 0; i < n; ++i) {
    const auto w = f(i);
    c.words += w.words / static_cast<double>(n);
    c.ne += w.ne / static_cast<double>(n);
  }
  return c;
}

WordCount mix(const std::vector<std::pair<double, WordCount>>& parts) {
  WordCount c;
  for (const auto& [p, w] : parts) {
    c.words += p * w.words;
    c.ne += p * w.ne;
  }
  return c;
}

FieldExpectation expectation(const WordCount& c) {
  return {c.words, c.words > 0 ? c.ne / c.words : 0.0};
}

}  // namespace

std::size_t EntityInventory::count(EntityLabel l) const {
  std::size_t n = 0;
  for (const auto& e : entities) n += e.label == l ? 1 : 0;
  return n;
}

SynthConfig SynthConfig::defaults() {
  SynthConfig c;
  c.caption_templates = {
      "{0} meets {1} during the summit", "{0} with {1} at a ceremony",    "{1} welcomes {0} on stage",
      "portrait of {0} beside {1}",      "{0} greets {1} outside the hall", "{0} joins {1} for the opening",
      "{1} hosts {0} at the museum",     "{0} next to {1} during a visit",
  };
  c.copy_pairs = {
      {"{0} and {1} pictured {tail}", "{0} and {1} {tail}"},
      {"{0} together with {1} {tail}, archival print", "{0} together with {1} {tail}"},
  };
  c.description_templates = {
      "archive photograph listing {0}, {1}, {2} and {3}",
      "collection record naming {0}, {1}, {2} and {3} among the subjects",
  };
  c.section_templates = {
      "The article covers the history of the region. {0} later worked with {1} on several projects.",
      "Local reports followed the event closely. It notes that {0} had earlier hosted {1} there.",
      "Records from the period remain incomplete. Both {0} and {1} appear in the surviving accounts.",
  };
  c.tails = {"at the annual gala",   "during the spring parade", "in front of the old tower",
             "after the final match", "before the press meeting", "at the harbour festival"};
  return c;
}

void SynthConfig::validate() const {
  if (n_entities == 0) throw ArgumentError("n_entities must be positive");
  if (entities_per_caption > entities_per_context) {
    throw ArgumentError("entities_per_caption must not exceed entities_per_context");
  }
  if (entities_per_context > 3 * n_entities) throw ArgumentError("entity inventory too small for the context size");
  if (entities_per_context > 10) throw ArgumentError("at most 10 entities per context");
  if (!(easy_fraction >= 0.0 && easy_fraction <= 1.0)) throw ArgumentError("easy_fraction must lie in [0, 1]");
  if (!(cue_fraction >= 0.0 && cue_fraction <= 1.0)) throw ArgumentError("cue_fraction must lie in [0, 1]");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ArgumentError("noise must be >= 0");
  if (d_img == 0) throw ArgumentError("d_img must be positive");
  if (caption_templates.empty() || copy_pairs.empty() || description_templates.empty() || section_templates.empty()) {
    throw ArgumentError("every template pool needs at least one template");
  }
  const std::size_t k = entities_per_caption, c = entities_per_context;
  for (const auto& t : caption_templates) check_slots(t, k, "caption");
  for (const auto& [d, cap] : copy_pairs) {
    check_slots(d, k, "copy description");
    check_slots(cap, k, "copy caption");
  }
  for (const auto& t : description_templates) check_slots(t, c, "description");
  for (const auto& t : section_templates) check_slots(t, c - k, "section");
  auto uses_tail = [](const std::string& t) { return t.find("{tail}") != std::string::npos; };
  bool any_tail = false;
  for (const auto& [d, cap] : copy_pairs) any_tail = any_tail || uses_tail(d) || uses_tail(cap);
  for (const auto& t : caption_templates) any_tail = any_tail || uses_tail(t);
  if (any_tail && tails.empty()) throw ArgumentError("templates use {tail} but no tails are configured");
}

json SynthConfig::to_json() const {
  json pairs = json::array();
  for (const auto& [d, c] : copy_pairs) pairs.push_back({d, c});
  return json{{"n_samples", n_samples},
              {"n_entities", n_entities},
              {"entities_per_context", entities_per_context},
              {"entities_per_caption", entities_per_caption},
              {"easy_fraction", easy_fraction},
              {"cue_fraction", cue_fraction},
              {"noise", noise},
              {"d_img", d_img},
              {"seed", seed},
              {"caption_templates", caption_templates},
              {"copy_pairs", pairs},
              {"description_templates", description_templates},
              {"section_templates", section_templates},
              {"tails", tails}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c = defaults();
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    get("n_samples", c.n_samples);
    get("n_entities", c.n_entities);
    get("entities_per_context", c.entities_per_context);
    get("entities_per_caption", c.entities_per_caption);
    get("easy_fraction", c.easy_fraction);
    get("cue_fraction", c.cue_fraction);
    get("noise", c.noise);
    get("d_img", c.d_img);
    get("seed", c.seed);
    get("caption_templates", c.caption_templates);
    get("description_templates", c.description_templates);
    get("section_templates", c.section_templates);
    get("tails", c.tails);
    if (j.contains("copy_pairs")) {
      c.copy_pairs.clear();
      for (const auto& p : j.at("copy_pairs")) c.copy_pairs.emplace_back(p.at(0).get<std::string>(), p.at(1).get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("bad synth config: ") + e.what());
  }
  return c;
}

EntityInventory make_inventory(const SynthConfig& cfg) {
  EntityInventory inv;
  CounterRng rng(derive_seed(cfg.seed, "inventory"));
  std::set<std::string> used;
  for (EntityLabel l : kLabels) {
    std::size_t attempts = 0;
    for (std::size_t made = 0; made < cfg.n_entities;) {
      if (++attempts > 100 * cfg.n_entities + 1000) {
        throw ArgumentError("cannot draw " + std::to_string(cfg.n_entities) + " distinct names per label");
      }
      std::string s = make_surface(rng, l);
      if (!used.insert(s).second) continue;
      SynthEntity e{std::move(s), l, std::vector<float>(cfg.d_img)};
      double norm = 0.0;
      std::vector<double> v(cfg.d_img);
      for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (std::size_t i = 0; i < v.size(); ++i) e.signature[i] = static_cast<float>(v[i] / norm);
      inv.entities.push_back(std::move(e));
      ++made;
    }
  }
  return inv;
}

SynthOutput synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthOutput out;
  out.inventory = make_inventory(cfg);
  out.features = FeatureStore(cfg.d_img);
  const auto& inv = out.inventory;
  const std::size_t n_inv = inv.entities.size();
  const std::size_t k = cfg.entities_per_caption, c = cfg.entities_per_context;
  out.corpus.reserve(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    CounterRng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    const bool easy = rng.unit() < cfg.easy_fraction;
    const bool cue = !easy && rng.unit() < cfg.cue_fraction;

    std::vector<std::size_t> ctx;
    while (ctx.size() < c) {
      const std::size_t e = rng.below(n_inv);
      if (std::find(ctx.begin(), ctx.end(), e) == ctx.end()) ctx.push_back(e);
    }
    const std::vector<std::size_t> depicted(ctx.begin(), ctx.begin() + static_cast<std::ptrdiff_t>(k));
    const std::vector<std::size_t> rest(ctx.begin() + static_cast<std::ptrdiff_t>(k), ctx.end());
    const std::string tail = cfg.tails.empty() ? std::string() : cfg.tails[rng.below(cfg.tails.size())];

    Rendered cap, desc, sec;
    if (easy || cue) {
      const auto& pair = cfg.copy_pairs[rng.below(cfg.copy_pairs.size())];
      desc = render(pair.first, inv, depicted, tail);
      sec = render(cfg.section_templates[rng.below(cfg.section_templates.size())], inv, rest, tail);
      cap = easy ? render(pair.second, inv, depicted, tail)
                 : render(cfg.caption_templates[rng.below(cfg.caption_templates.size())], inv, depicted, tail);
    } else {
      desc = render(cfg.description_templates[rng.below(cfg.description_templates.size())], inv, shuffled(ctx, rng),
                    tail);
      auto mentioned = shuffled(ctx, rng);
      mentioned.resize(c - k);
      sec = render(cfg.section_templates[rng.below(cfg.section_templates.size())], inv, mentioned, tail);
      cap = render(cfg.caption_templates[rng.below(cfg.caption_templates.size())], inv, depicted, tail);
    }

    std::vector<float> img(cfg.d_img);
    for (std::uint32_t d = 0; d < cfg.d_img; ++d) {
      double m = 0.0;
      for (std::size_t e : depicted) m += inv.entities[e].signature[d];
      if (k > 0) m /= static_cast<double>(k);
      img[d] = static_cast<float>(m + cfg.noise * rng.normal());
    }

    char id[32];
    std::snprintf(id, sizeof id, "synth-%06zu", i);
    ContextualSample s;
    s.id = id;
    s.page_title = inv.entities[ctx.front()].surface;
    s.caption = std::move(cap.text);
    s.section = std::move(sec.text);
    s.description = std::move(desc.text);
    s.image_feature_id = s.id;
    s.source = Source::synthetic;
    out.annotations[s.id] = FieldSpans{std::move(cap.spans), std::move(sec.spans), std::move(desc.spans)};
    out.features.put(s.id, std::move(img));
    out.depicted.push_back(depicted);
    out.context.push_back(ctx);
    out.corpus.push_back(std::move(s));
  }
  return out;
}

SynthDescription synth_describe(const SynthConfig& cfg) {
  cfg.validate();
  const EntityInventory inv = make_inventory(cfg);
  SynthDescription d;
  d.n_samples = cfg.n_samples;
  for (std::size_t i = 0; i < kLabels.size(); ++i) d.entities[i] = inv.count(kLabels[i]);
  for (const auto& e : inv.entities) d.mean_entity_words += static_cast<double>(text::normalized_words(e.surface).size());
  d.mean_entity_words /= static_cast<double>(inv.entities.size());
  double tail_words = 0.0;
  for (const auto& t : cfg.tails) tail_words += static_cast<double>(text::normalized_words(t).size());
  if (!cfg.tails.empty()) tail_words /= static_cast<double>(cfg.tails.size());

  const double w = d.mean_entity_words;
  auto pool = [&](const std::vector<std::string>& ts) {
    return mean_over(ts.size(), [&](std::size_t i) { return template_words(ts[i], w, tail_words); });
  };
  const WordCount copy_desc = mean_over(cfg.copy_pairs.size(), [&](std::size_t i) {
    return template_words(cfg.copy_pairs[i].first, w, tail_words);
  });
  const WordCount copy_cap = mean_over(cfg.copy_pairs.size(), [&](std::size_t i) {
    return template_words(cfg.copy_pairs[i].second, w, tail_words);
  });
  const double p_easy = cfg.easy_fraction;
  const double p_cue = (1.0 - p_easy) * cfg.cue_fraction;
  const double p_hard = 1.0 - p_easy - p_cue;
  d.caption = expectation(mix({{p_easy, copy_cap}, {1.0 - p_easy, pool(cfg.caption_templates)}}));
  d.description = expectation(mix({{p_easy + p_cue, copy_desc}, {p_hard, pool(cfg.description_templates)}}));
  d.section = expectation(pool(cfg.section_templates));
  d.expected_easy_share = p_easy;
  return d;
}

std::string SynthDescription::to_text() const {
  std::ostringstream os;
  os << "samples                " << n_samples << "\n"
     << "entities               PERSON " << entities[0] << ", ORG " << entities[1] << ", GPE " << entities[2] << "\n"
     << "mean words per entity  " << mean_entity_words << "\n";
  auto field = [&](const char* name, const FieldExpectation& f) {
    os << name << " avg words " << f.avg_words << ", NE word fraction " << f.ne_word_fraction << "\n";
  };
  field("caption               ", caption);
  field("section               ", section);
  field("description           ", description);
  os << "expected Easy share    " << expected_easy_share << "\n";
  return os.str();
}

json SynthDescription::to_json() const {
  auto field = [](const FieldExpectation& f) {
    return json{{"avg_words", f.avg_words}, {"ne_word_fraction", f.ne_word_fraction}};
  };
  return json{{"n_samples", n_samples},
              {"entities", {{"PERSON", entities[0]}, {"ORG", entities[1]}, {"GPE", entities[2]}}},
              {"mean_entity_words", mean_entity_words},
              {"caption", field(caption)},
              {"section", field(section)},
              {"description", field(description)},
              {"expected_easy_share", expected_easy_share}};
}

}  // namespace mnem
