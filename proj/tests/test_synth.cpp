#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "mnem/error.hpp"
#include "mnem/split.hpp"
#include "mnem/stats.hpp"
#include "mnem/synth.hpp"

namespace mnem {
namespace {

SynthConfig small(std::size_t n) {
  SynthConfig c = SynthConfig::defaults();
  c.n_samples = n;
  return c;
}

TEST(Synth, SameSeedSameBytes) {
  const auto a = synth_generate(small(200));
  const auto b = synth_generate(small(200));
  EXPECT_EQ(corpus_to_jsonl(a.corpus), corpus_to_jsonl(b.corpus));
  EXPECT_EQ(annotations_to_jsonl(a.annotations), annotations_to_jsonl(b.annotations));
  EXPECT_EQ(a.features, b.features);
  auto other = small(200);
  other.seed = 2;
  EXPECT_NE(corpus_to_jsonl(synth_generate(other).corpus), corpus_to_jsonl(a.corpus));
}

TEST(Synth, PrefixStableAcrossSampleCounts) {
  const auto a = synth_generate(small(50));
  const auto b = synth_generate(small(80));
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(a.corpus[i], b.corpus[i]);
}

TEST(Synth, NoiselessFullDepictionIsContextMean) {
  auto c = small(30);
  c.noise = 0.0;
  c.entities_per_caption = c.entities_per_context = 2;
  c.description_templates = {"listing {0} and {1}"};
  c.section_templates = {"Nothing else is recorded here."};
  const auto out = synth_generate(c);
  for (std::size_t i = 0; i < out.corpus.size(); ++i) {
    const auto* f = out.features.find(out.corpus[i].id);
    ASSERT_NE(f, nullptr);
    for (std::uint32_t d = 0; d < c.d_img; ++d) {
      double m = 0;
      for (auto e : out.context[i]) m += out.inventory.entities[e].signature[d];
      EXPECT_EQ((*f)[d], static_cast<float>(m / 2.0));
    }
  }
}

TEST(Synth, EasyShareThroughSplit) {
  const auto out = synth_generate(small(1000));
  const auto recs = assign(out.corpus, ContextMode::description);
  const auto easy = std::count_if(recs.begin(), recs.end(), [](const JaccardRecord& r) { return r.label == Difficulty::Easy; });
  EXPECT_NEAR(static_cast<double>(easy), 400.0, 25.0);
}

TEST(Synth, AnnotationsResliceToInventory) {
  const auto out = synth_generate(small(300));
  std::set<std::string> surfaces;
  for (const auto& e : out.inventory.entities) surfaces.insert(e.surface);
  for (const auto& s : out.corpus) {
    const auto& fs = out.annotations.at(s.id);
    for (auto f : {TextField::caption, TextField::section, TextField::description}) {
      EXPECT_EQ(validate_spans(field_text(s, f), fs.at(f)), "");
      for (const auto& sp : fs.at(f)) {
        EXPECT_EQ(field_text(s, f).substr(sp.start, sp.end - sp.start), sp.surface);
        EXPECT_TRUE(surfaces.count(sp.surface));
      }
    }
    EXPECT_EQ(fs.caption.size(), 2u);
    EXPECT_EQ(fs.description.size() + fs.section.size(), fs.description.size() == 4 ? 6u : 4u);
  }
}

TEST(Synth, InventoryInvariants) {
  const auto inv = make_inventory(SynthConfig::defaults());
  EXPECT_EQ(inv.entities.size(), 120u);
  std::set<std::string> seen;
  for (const auto& e : inv.entities) {
    EXPECT_TRUE(seen.insert(e.surface).second) << e.surface;
    double n = 0;
    for (float x : e.signature) n += double(x) * x;
    EXPECT_NEAR(n, 1.0, 1e-6);
  }
  EXPECT_EQ(inv.count(EntityLabel::ORG), 40u);
}

TEST(Synth, DepictedEntitiesRecoverableWithoutNoise) {
  auto c = small(2000);
  c.noise = 0.0;
  const auto out = synth_generate(c);
  const auto& ents = out.inventory.entities;
  for (std::size_t i = 0; i < out.corpus.size(); ++i) {
    const auto& f = *out.features.find(out.corpus[i].id);
    std::vector<std::pair<double, std::size_t>> scores;
    for (auto e : out.context[i]) {
      double s = 0;
      for (std::size_t d = 0; d < f.size(); ++d) s += double(f[d]) * ents[e].signature[d];
      scores.emplace_back(-s, e);
    }
    std::sort(scores.begin(), scores.end());
    std::set<std::size_t> top = {scores[0].second, scores[1].second};
    std::set<std::size_t> truth(out.depicted[i].begin(), out.depicted[i].end());
    ASSERT_EQ(top, truth) << out.corpus[i].id;
  }
}

TEST(Synth, ExhaustionAndBadTemplates) {
  auto c = small(10);
  c.n_entities = 1;
  EXPECT_THROW(synth_generate(c), ArgumentError);
  c = small(10);
  c.caption_templates = {"{0} alone"};
  EXPECT_THROW(synth_generate(c), ArgumentError);
  c = small(10);
  c.entities_per_caption = 5;
  EXPECT_THROW(synth_generate(c), ArgumentError);
  c = small(10);
  c.easy_fraction = 1.5;
  EXPECT_THROW(synth_describe(c), ArgumentError);
}

TEST(Synth, ConfigJsonRoundtrip) {
  auto c = small(77);
  c.noise = 0.3;
  c.tails = {"somewhere"};
  EXPECT_EQ(SynthConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_EQ(SynthConfig::from_json(nlohmann::json::object()).to_json(), SynthConfig::defaults().to_json());
}

TEST(SynthDescribe, TwoSlotsAmongSixWords) {
  auto c = small(10);
  c.easy_fraction = 0.0;
  c.caption_templates = {"{0} met {1} in the hall"};
  const auto d = synth_describe(c);
  // six words when each entity is a single word; longer names only raise it
  EXPECT_GE(d.caption.ne_word_fraction, 1.0 / 3.0);
  EXPECT_GE(synth_describe(SynthConfig::defaults()).caption.ne_word_fraction, 1.0 / 3.0);
}

TEST(SynthDescribe, NoCaptionEntities) {
  auto c = small(10);
  c.entities_per_caption = 0;
  c.caption_templates = {"a quiet street {tail}"};
  c.copy_pairs = {{"view of the square {tail}", "the square {tail}"}};
  c.section_templates = {"The town grew around {0}, {1}, {2} and {3}."};
  EXPECT_EQ(synth_describe(c).caption.ne_word_fraction, 0.0);
  const auto out = synth_generate(c);
  EXPECT_EQ(compute_stats(out.corpus, out.annotations).caption.ne_words, 0u);
}

TEST(SynthDescribe, MatchesMonteCarloStats) {
  const auto cfg = small(10000);
  const auto d = synth_describe(cfg);
  const auto out = synth_generate(cfg);
  const auto st = compute_stats(out.corpus, out.annotations);
  auto close = [](double got, double want) { return std::abs(got - want) <= 0.02 * std::abs(want); };
  EXPECT_TRUE(close(st.caption.avg_words, d.caption.avg_words)) << st.caption.avg_words << " " << d.caption.avg_words;
  EXPECT_TRUE(close(st.section.avg_words, d.section.avg_words)) << st.section.avg_words << " " << d.section.avg_words;
  EXPECT_TRUE(close(st.description.avg_words, d.description.avg_words))
      << st.description.avg_words << " " << d.description.avg_words;
  EXPECT_TRUE(close(st.caption.ne_word_fraction, d.caption.ne_word_fraction))
      << st.caption.ne_word_fraction << " " << d.caption.ne_word_fraction;
  EXPECT_TRUE(close(st.section.ne_word_fraction, d.section.ne_word_fraction));
  EXPECT_TRUE(close(st.description.ne_word_fraction, d.description.ne_word_fraction));
  const auto recs = assign(out.corpus, ContextMode::description);
  const double easy = std::count_if(recs.begin(), recs.end(), [](const JaccardRecord& r) { return r.label == Difficulty::Easy; });
  EXPECT_TRUE(close(easy / 10000.0, d.expected_easy_share));
  EXPECT_EQ(d.entities[0] + d.entities[1] + d.entities[2], 120u);
  EXPECT_FALSE(d.to_text().empty());
}

}  // namespace
}  // namespace mnem
