#include <gtest/gtest.h>

#include <random>

#include "mnem/error.hpp"
#include "mnem/tokenizer.hpp"
#include "test_util.hpp"

namespace mnem {
namespace {

TokenId id(const BpeVocab& v, std::string_view bytes) { return v.id_of_bytes(bytes); }

// Hand-built merge table: "Credit" -> [Cr, edit], " Suisse" -> [" S", ui, sse].
BpeVocab credit_suisse_vocab() {
  std::vector<BpeVocab::Merge> m;
  auto next = [&] { return static_cast<TokenId>(BpeVocab::kFirstLearned + m.size()); };
  const TokenId cr = next();
  m.emplace_back('C', 'r');
  const TokenId ed = next();
  m.emplace_back('e', 'd');
  const TokenId it = next();
  m.emplace_back('i', 't');
  m.emplace_back(ed, it);  // edit
  m.emplace_back(' ', 'S');
  m.emplace_back('u', 'i');
  const TokenId ss = next();
  m.emplace_back('s', 's');
  m.emplace_back(ss, 'e');  // sse
  (void)cr;
  return BpeVocab(std::move(m));
}

TEST(TrainBpe, FirstMergeIsMostFrequentPair) {
  const std::vector<std::string> corpus = {"aaab aaab ab"};
  const auto v = train_bpe(corpus, BpeVocab::kFirstLearned + 1);
  ASSERT_EQ(v.merges().size(), 1u);
  EXPECT_EQ(v.merges()[0], BpeVocab::Merge('a', 'a'));
}

TEST(TrainBpe, TieBreaksLexicographically) {
  // "xy" and "ab" both occur twice; ("a","b") is smaller.
  const std::vector<std::string> corpus = {"xy", "ab", "xy", "ab"};
  const auto v = train_bpe(corpus, BpeVocab::kFirstLearned + 1);
  ASSERT_EQ(v.merges().size(), 1u);
  EXPECT_EQ(v.merges()[0], BpeVocab::Merge('a', 'b'));
}

TEST(TrainBpe, MinimalTargetLearnsNothing) {
  const std::vector<std::string> corpus = {"aaab aaab ab"};
  EXPECT_TRUE(train_bpe(corpus, BpeVocab::kFirstLearned).merges().empty());
  EXPECT_THROW(train_bpe(corpus, BpeVocab::kFirstLearned - 1), ArgumentError);
}

TEST(TrainBpe, EmptyCorpusThrows) {
  EXPECT_THROW(train_bpe(std::vector<std::string>{}, 1000), ArgumentError);
}

TEST(TrainBpe, StopsWhenNoPairRepeats) {
  const std::vector<std::string> corpus = {"abcd"};
  EXPECT_TRUE(train_bpe(corpus, 5000).merges().empty());
}

TEST(TrainBpe, DeterministicSerialization) {
  const std::vector<std::string> corpus = {"the cat sat on the mat", "the dog sat on the log", "Zurich Zurich Zug"};
  const auto a = train_bpe(corpus, 400);
  const auto b = train_bpe(corpus, 400);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_FALSE(a.merges().empty());
}

TEST(Vocab, JsonRoundtripAndLayout) {
  const std::vector<std::string> corpus = {"caf\xC3\xA9 caf\xC3\xA9 na\xC3\xAFve na\xC3\xAFve \xE2\x82\xAC\xE2\x82\xAC"};
  const auto v = train_bpe(corpus, 420);
  const auto back = BpeVocab::from_json(v.to_json());
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.special_id("MASK"), BpeVocab::kMask);
  EXPECT_EQ(back.special_id("SENT_99"), BpeVocab::kSent0 + 99);
  EXPECT_THROW(BpeVocab::from_json(R"({"version":1,"merges":[],"specials":{"MASK":5}})"), FormatError);
}

TEST(Vocab, TokenStringsAreUnique) {
  std::vector<std::string> corpus;
  std::mt19937_64 gen(5);
  for (int i = 0; i < 300; ++i) corpus.push_back(testing::random_utf8(gen, 20));
  const auto v = train_bpe(corpus, 900);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < v.non_special_count(); ++i) {
    EXPECT_TRUE(seen.insert(v.token_bytes(v.non_special_at(i))).second);
  }
}

TEST(Encode, EmptyText) {
  const BpeVocab v;
  const auto seq = encode(v, "");
  EXPECT_TRUE(seq.empty());
  EXPECT_TRUE(word_groups(seq).empty());
}

TEST(Encode, WordIdsBreakAtSpace) {
  const BpeVocab v;  // bytes only
  const auto seq = encode(v, "New York");
  EXPECT_EQ(seq.word_ids, (std::vector<std::int32_t>{0, 0, 0, 1, 1, 1, 1, 1}));
}

TEST(Encode, CharSpansAreOrderedAndContiguous) {
  const auto v = credit_suisse_vocab();
  const std::string t = "  Credit Suisse  ";
  const auto seq = encode(v, t);
  std::size_t pos = 0;
  for (const auto& s : seq.char_spans) {
    EXPECT_EQ(s.begin, pos);
    pos = s.end;
  }
  EXPECT_EQ(pos, t.size());
  EXPECT_EQ(seq.word_ids.front(), 0);
  EXPECT_EQ(seq.word_ids.back(), 1);  // trailing whitespace joins the last word
}

TEST(WordGroups, SingleWordThreeSubtokens) {
  const BpeVocab v;
  const auto seq = encode(v, "abc");
  EXPECT_EQ(word_groups(seq), (std::vector<TokenRange>{{0, 3}}));
}

TEST(WordGroups, OneAndTwoSubtokens) {
  const BpeVocab v;
  const auto seq = encode(v, "a b");  // "a", " ", "b"
  EXPECT_EQ(word_groups(seq), (std::vector<TokenRange>{{0, 1}, {1, 3}}));
}

TEST(WordGroups, HandTokenizedFixture) {
  const auto v = credit_suisse_vocab();
  const auto seq = encode(v, "Credit Suisse");
  const std::vector<TokenId> expected = {id(v, "Cr"), id(v, "edit"), id(v, " S"), id(v, "ui"), id(v, "sse")};
  EXPECT_EQ(seq.ids, expected);
  EXPECT_EQ(word_groups(seq), (std::vector<TokenRange>{{0, 2}, {2, 5}}));
}

TEST(Decode, MaskMarker) {
  const BpeVocab v;
  const std::vector<TokenId> ids = {BpeVocab::kMask};
  EXPECT_EQ(decode(v, ids), "[MASK]");
  EXPECT_EQ(decode(v, std::vector<TokenId>{}, true), "");
  EXPECT_EQ(decode(v, ids, true), "");
}

TEST(Decode, UnknownIdThrows) {
  const BpeVocab v;
  const std::vector<TokenId> ids = {static_cast<TokenId>(v.size())};
  EXPECT_THROW(decode(v, ids), ArgumentError);
}

TEST(Roundtrip, ThousandRandomStrings) {
  std::mt19937_64 gen(2024);
  std::vector<std::string> train;
  for (int i = 0; i < 200; ++i) train.push_back(testing::random_utf8(gen, 40));
  const auto v = train_bpe(train, 1200);
  for (int i = 0; i < 1000; ++i) {
    const std::string s = testing::random_utf8(gen, 60);
    const auto seq = encode(v, s);
    ASSERT_EQ(decode(v, seq.ids), s);
    for (std::size_t k = 1; k < seq.size(); ++k) {
      ASSERT_LE(seq.char_spans[k - 1].begin, seq.char_spans[k].begin);
      ASSERT_LE(seq.word_ids[k - 1], seq.word_ids[k]);
    }
    // Whole-word cover: groups tile the token sequence.
    std::size_t pos = 0;
    for (const auto& g : word_groups(seq)) {
      ASSERT_EQ(g.begin, pos);
      pos = g.end;
    }
    ASSERT_EQ(pos, seq.size());
  }
}

TEST(Printable, ByteMappingIsReversible) {
  std::string all;
  for (int b = 0; b < 256; ++b) all.push_back(static_cast<char>(b));
  EXPECT_EQ(printable_to_bytes(bytes_to_printable(all)), all);
}

}  // namespace
}  // namespace mnem
