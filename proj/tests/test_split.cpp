#include <gtest/gtest.h>

#include <random>

#include "mnem/io.hpp"
#include "mnem/split.hpp"
#include "test_util.hpp"

namespace mnem {
namespace {

ContextualSample make(std::string id, std::string caption, std::string description, std::string section = "") {
  ContextualSample s;
  s.id = std::move(id);
  s.caption = std::move(caption);
  s.description = std::move(description);
  s.section = std::move(section);
  return s;
}

TEST(WordSet, Normalization) {
  EXPECT_EQ(word_set("Zurich, Zurich!"), (WordSet{"zurich"}));
  EXPECT_TRUE(word_set("").empty());
  EXPECT_EQ(word_set("Lake Zurich view"), (WordSet{"lake", "zurich", "view"}));
  EXPECT_EQ(word_set("  -- (Bern) city "), (WordSet{"bern", "city"}));
}

TEST(Jaccard, Basics) {
  EXPECT_DOUBLE_EQ(jaccard({"a", "b"}, {"a", "b"}), 1.0);
  EXPECT_DOUBLE_EQ(jaccard({"a"}, {"b"}), 0.0);
  EXPECT_DOUBLE_EQ(jaccard({"a", "b", "c"}, {"a", "b", "d", "e"}), 0.4);
  EXPECT_DOUBLE_EQ(jaccard({}, {}), 0.0);
}

TEST(Assign, Boundaries) {
  const Corpus c = {make("six", "a b c", "a b c d e"), make("half", "a b", "a b c d"), make("empty", "", "a b")};
  const auto r = assign(c, ContextMode::description);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_DOUBLE_EQ(r[0].score, 0.6);
  EXPECT_EQ(r[0].label, Difficulty::Easy);
  EXPECT_DOUBLE_EQ(r[1].score, 0.5);
  EXPECT_EQ(r[1].label, Difficulty::Hard);
  EXPECT_DOUBLE_EQ(r[2].score, 0.0);
  EXPECT_EQ(r[2].label, Difficulty::Hard);
}

TEST(Assign, ContextModes) {
  const Corpus c = {make("s", "red boat harbour", "red boat", "harbour")};
  EXPECT_DOUBLE_EQ(assign(c, ContextMode::description)[0].score, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(assign(c, ContextMode::section)[0].score, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(assign(c, ContextMode::wiki)[0].score, 1.0);
}

TEST(Assign, OrderIndependentAndRoundtrips) {
  std::mt19937_64 gen(3);
  Corpus c;
  for (int i = 0; i < 200; ++i) {
    std::string cap, desc;
    for (int w = 0; w < 6; ++w) cap += std::string(" w") + std::to_string(gen() % 10);
    for (int w = 0; w < 8; ++w) desc += std::string(" w") + std::to_string(gen() % 10);
    c.push_back(make("id" + std::to_string(i), cap, desc));
  }
  const auto r = assign(c, ContextMode::description);
  Corpus shuffled = c;
  std::shuffle(shuffled.begin(), shuffled.end(), gen);
  auto r2 = assign(shuffled, ContextMode::description);
  std::map<std::string, JaccardRecord> by_id;
  for (const auto& x : r2) by_id[x.sample_id] = x;
  for (const auto& x : r) {
    EXPECT_EQ(by_id.at(x.sample_id), x);
    EXPECT_EQ(x.label == Difficulty::Easy, x.score > 0.5);
  }
  const auto dir = testing::scratch_dir("split_records");
  write_file(dir / "split.jsonl", split_records_to_jsonl(r));
  EXPECT_EQ(load_split_records(dir / "split.jsonl"), r);
}

TEST(Jaccard, SymmetricBoundedMonotone) {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 2000; ++trial) {
    WordSet a, b;
    for (int i = 0; i < static_cast<int>(gen() % 8); ++i) a.insert(std::to_string(gen() % 10));
    for (int i = 0; i < static_cast<int>(gen() % 8); ++i) b.insert(std::to_string(gen() % 10));
    const double j = jaccard(a, b);
    ASSERT_DOUBLE_EQ(j, jaccard(b, a));
    ASSERT_GE(j, 0.0);
    ASSERT_LE(j, 1.0);
    ASSERT_EQ(j == 1.0, !a.empty() && a == b);
    if (!b.empty()) {
      WordSet grown = a;
      grown.insert(*std::next(b.begin(), static_cast<long>(gen() % b.size())));
      ASSERT_GE(jaccard(grown, b), j);
    }
  }
}

TEST(Overlap, FourSampleFixture) {
  const Corpus c = {make("s1", "a b c", "a b c"), make("s2", "a b c", "a b d e"), make("s3", "p q", "p q r"),
                    make("s4", "m", "n")};
  const auto rec = assign(c, ContextMode::description);
  const std::map<std::string, std::string> gen = {{"s1", "a b"}, {"s2", "x y"}, {"s3", "p q r"}, {"s4", "n"}};
  const auto r = overlap_report(gen, c, rec);
  EXPECT_EQ(r.overall.n, 4u);
  EXPECT_NEAR(r.overall.gt_overlap, (1.0 + 0.4 + 2.0 / 3.0 + 0.0) / 4.0, 1e-12);
  EXPECT_NEAR(r.overall.gen_overlap, (2.0 / 3.0 + 0.0 + 1.0 + 1.0) / 4.0, 1e-12);
  EXPECT_EQ(r.easy.n, 2u);
  EXPECT_NEAR(r.easy.gt_overlap, 5.0 / 6.0, 1e-12);
  EXPECT_NEAR(r.easy.gen_overlap, 5.0 / 6.0, 1e-12);
  EXPECT_EQ(r.hard.n, 2u);
  EXPECT_NEAR(r.hard.gt_overlap, 0.2, 1e-12);
  EXPECT_NEAR(r.hard.gen_overlap, 0.5, 1e-12);
  EXPECT_TRUE(r.missing_ids.empty());
}

TEST(Overlap, GroundTruthAndVerbatimContext) {
  const Corpus c = {make("s1", "a b c", "a b c d"), make("s2", "x", "y z")};
  const auto rec = assign(c, ContextMode::description);
  const auto same = overlap_report({{"s1", "a b c"}, {"s2", "x"}}, c, rec);
  EXPECT_DOUBLE_EQ(same.overall.gen_overlap, same.overall.gt_overlap);
  const auto copy = overlap_report({{"s1", "a b c d"}, {"s2", "y z"}}, c, rec);
  EXPECT_DOUBLE_EQ(copy.overall.gen_overlap, 1.0);
}

TEST(Overlap, MissingCaptionIsCoverageGap) {
  const Corpus c = {make("s1", "a b", "a b"), make("s2", "x", "y")};
  const auto r = overlap_report({{"s1", "a b"}}, c, assign(c, ContextMode::description));
  EXPECT_EQ(r.missing_ids, std::vector<std::string>{"s2"});
  EXPECT_EQ(r.overall.n, 1u);
  EXPECT_DOUBLE_EQ(r.overall.gt_overlap, 1.0);
}

}  // namespace
}  // namespace mnem
