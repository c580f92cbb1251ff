#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mnem/corpus.hpp"
#include "mnem/ner.hpp"
#include "mnem/tokenizer.hpp"

namespace mnem {

enum class MaskStrategy { MLM, FULL, MNEM_DECODER, MNEM_SENTINEL };

std::string_view to_string(MaskStrategy s);
// Accepts mlm, full, mnem-decoder, mnem-sentinel.
MaskStrategy parse_strategy(std::string_view s);

// Fate probabilities for MLM-selected words; keep takes the remainder.
struct MlmFates {
  double mask = 0.8;
  double random = 0.1;
};

struct MaskParams {
  double mlm_ratio = 0.15;
  double mnem_p = 0.8;
  MlmFates fates;

  void validate() const;
};

enum class WordFate { mask, random, keep };

struct WordSelection {
  TokenRange range;
  WordFate fate = WordFate::mask;
  bool operator==(const WordSelection&) const = default;
};

struct MaskedInstance {
  std::vector<TokenId> input_ids;
  std::vector<TokenId> target_ids;
  std::vector<TokenRange> masked_spans;      // token ranges of the original sequence that were corrupted
  std::vector<WordSelection> selected_words;  // MLM / FULL only
  MaskStrategy strategy = MaskStrategy::MNEM_DECODER;
  std::uint64_t seed = 0;

  bool operator==(const MaskedInstance&) const = default;
};

// Draw order (CounterRng, seeded with `seed`): one unit() per entity span in
// order; the span is selected when the draw is < p.
//
// Every token of a selected span becomes MASK; the target is the whole
// original sequence.
MaskedInstance mask_mnem_decoder(const TokenSeq& seq, const MaskSpanSet& entities, double p, std::uint64_t seed);

// The l-th selected span collapses to SENT_l in the input. The target is
// SENT_0 span_0 SENT_1 span_1 ... SENT_L. At most 99 spans may be selected so
// the terminal sentinel still exists; more throws CapacityError.
MaskedInstance mask_mnem_sentinel(const TokenSeq& seq, const MaskSpanSet& entities, double p, std::uint64_t seed);

// Selection: ceil(ratio * n_words) words by partial Fisher-Yates, swap index
// i + below(n - i) for i = 0, 1, ...; then sorted by position. Fates: one
// unit() per selected word in position order. Random-fate words draw one
// below(non_special_count()) per subtoken, right after their fate draw.
MaskedInstance mask_mlm(const BpeVocab& vocab, const TokenSeq& seq, double ratio, std::uint64_t seed,
                        const MlmFates& fates = {});

// Same selection stream as mask_mlm; every selected word becomes MASK.
MaskedInstance mask_full(const TokenSeq& seq, double ratio, std::uint64_t seed);

// Uncorrupted pair, used for finetuning and the no-pretraining baseline.
MaskedInstance clean_instance(const TokenSeq& seq);

struct TokenizedSample {
  TokenSeq caption;
  TokenSeq section;
  TokenSeq description;
};

TokenizedSample tokenize_sample(const BpeVocab& vocab, const ContextualSample& sample);

struct ContextInputs {
  std::vector<TokenId> section;
  std::vector<TokenId> description;
  std::optional<std::string> image_feature_id;
  bool operator==(const ContextInputs&) const = default;
};

struct TrainingPair {
  std::string sample_id;
  ContextInputs context;
  MaskedInstance masked;
  bool operator==(const TrainingPair&) const = default;
};

// Corrupts the caption only; context passes through. The per-sample seed is
// derive_seed(global_seed, sample.id), so results do not depend on worker
// layout. Caption entities are label-filtered by `mode` first.
TrainingPair build_training_pair(const ContextualSample& sample, MaskStrategy strategy, const MaskParams& params,
                                 const TokenizedSample& tokens, const std::vector<EntitySpan>& caption_entities,
                                 DomainMode mode, std::uint64_t global_seed, const BpeVocab& vocab);

// Builds pairs for a whole corpus with `threads` workers over contiguous
// shards; output is in corpus order regardless of thread count.
std::vector<TrainingPair> build_masked_dataset(const Corpus& corpus, const Annotations& annotations,
                                               const BpeVocab& vocab, MaskStrategy strategy, const MaskParams& params,
                                               DomainMode mode, std::uint64_t global_seed, unsigned threads = 1);

// {sample_id, strategy, input_ids, target_ids, masked_spans, seed} per line.
std::string masked_dataset_to_jsonl(const std::vector<TrainingPair>& pairs);

// Reads that format back. Context fields stay empty; selected_words is not
// stored and comes back empty.
std::vector<TrainingPair> load_masked_dataset(const std::filesystem::path& path);

}  // namespace mnem
