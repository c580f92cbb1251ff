#include "mnem/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "mnem/error.hpp"
#include "mnem/io.hpp"
#include "mnem/rng.hpp"

namespace mnem {

std::string_view to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::MLM: return "mlm";
    case MaskStrategy::FULL: return "full";
    case MaskStrategy::MNEM_DECODER: return "mnem-decoder";
    case MaskStrategy::MNEM_SENTINEL: return "mnem-sentinel";
  }
  return "mlm";
}

MaskStrategy parse_strategy(std::string_view s) {
  if (s == "mlm") return MaskStrategy::MLM;
  if (s == "full") return MaskStrategy::FULL;
  if (s == "mnem-decoder") return MaskStrategy::MNEM_DECODER;
  if (s == "mnem-sentinel") return MaskStrategy::MNEM_SENTINEL;
  throw ArgumentError("unknown masking strategy: " + std::string(s));
}

void MaskParams::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(mlm_ratio)) throw ArgumentError("mlm ratio must lie in [0, 1]");
  if (!unit(mnem_p)) throw ArgumentError("mnem p must lie in [0, 1]");
  if (!unit(fates.mask) || !unit(fates.random) || fates.mask + fates.random > 1.0 + 1e-12) {
    throw ArgumentError("MLM fate probabilities must be in [0, 1] and sum to at most 1");
  }
}

namespace {

std::vector<TokenRange> select_spans(const MaskSpanSet& entities, double p, CounterRng& rng) {
  std::vector<TokenRange> selected;
  for (const auto& span : entities.spans) {
    if (rng.unit() < p) selected.push_back(span);
  }
  return selected;
}

std::vector<TokenRange> select_words(const TokenSeq& seq, double ratio, CounterRng& rng) {
  const auto groups = word_groups(seq);
  const std::size_t n = groups.size();
  auto count = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  count = std::min(count, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  std::vector<TokenRange> out;
  out.reserve(count);
  for (const std::size_t w : idx) out.push_back(groups[w]);
  return out;
}

}  // namespace

MaskedInstance mask_mnem_decoder(const TokenSeq& seq, const MaskSpanSet& entities, double p, std::uint64_t seed) {
  CounterRng rng(seed);
  MaskedInstance m;
  m.strategy = MaskStrategy::MNEM_DECODER;
  m.seed = seed;
  m.target_ids = seq.ids;
  m.input_ids = seq.ids;
  m.masked_spans = select_spans(entities, p, rng);
  for (const auto& r : m.masked_spans) {
    if (r.end > seq.size()) throw ArgumentError("mask span beyond sequence");
    std::fill(m.input_ids.begin() + static_cast<std::ptrdiff_t>(r.begin),
              m.input_ids.begin() + static_cast<std::ptrdiff_t>(r.end), BpeVocab::kMask);
  }
  return m;
}

MaskedInstance mask_mnem_sentinel(const TokenSeq& seq, const MaskSpanSet& entities, double p, std::uint64_t seed) {
  CounterRng rng(seed);
  MaskedInstance m;
  m.strategy = MaskStrategy::MNEM_SENTINEL;
  m.seed = seed;
  m.masked_spans = select_spans(entities, p, rng);
  if (m.masked_spans.size() >= static_cast<std::size_t>(BpeVocab::kNumSentinels)) {
    throw CapacityError(std::to_string(m.masked_spans.size()) + " selected spans exceed the sentinel budget of " +
                        std::to_string(BpeVocab::kNumSentinels - 1));
  }
  std::size_t pos = 0;
  int l = 0;
  for (const auto& r : m.masked_spans) {
    if (r.end > seq.size()) throw ArgumentError("mask span beyond sequence");
    m.input_ids.insert(m.input_ids.end(), seq.ids.begin() + static_cast<std::ptrdiff_t>(pos),
                       seq.ids.begin() + static_cast<std::ptrdiff_t>(r.begin));
    m.input_ids.push_back(BpeVocab::sentinel(l));
    m.target_ids.push_back(BpeVocab::sentinel(l));
    m.target_ids.insert(m.target_ids.end(), seq.ids.begin() + static_cast<std::ptrdiff_t>(r.begin),
                        seq.ids.begin() + static_cast<std::ptrdiff_t>(r.end));
    pos = r.end;
    ++l;
  }
  m.input_ids.insert(m.input_ids.end(), seq.ids.begin() + static_cast<std::ptrdiff_t>(pos), seq.ids.end());
  m.target_ids.push_back(BpeVocab::sentinel(l));
  return m;
}

MaskedInstance mask_mlm(const BpeVocab& vocab, const TokenSeq& seq, double ratio, std::uint64_t seed,
                        const MlmFates& fates) {
  CounterRng rng(seed);
  MaskedInstance m;
  m.strategy = MaskStrategy::MLM;
  m.seed = seed;
  m.target_ids = seq.ids;
  m.input_ids = seq.ids;
  const std::size_t pool = vocab.non_special_count();
  for (const auto& r : select_words(seq, ratio, rng)) {
    const double u = rng.unit();
    WordFate fate = u < fates.mask ? WordFate::mask : u < fates.mask + fates.random ? WordFate::random : WordFate::keep;
    for (std::size_t t = r.begin; t < r.end; ++t) {
      if (fate == WordFate::mask) m.input_ids[t] = BpeVocab::kMask;
      if (fate == WordFate::random) m.input_ids[t] = vocab.non_special_at(rng.below(pool));
    }
    m.selected_words.push_back({r, fate});
    if (fate != WordFate::keep) m.masked_spans.push_back(r);
  }
  return m;
}

MaskedInstance mask_full(const TokenSeq& seq, double ratio, std::uint64_t seed) {
  CounterRng rng(seed);
  MaskedInstance m;
  m.strategy = MaskStrategy::FULL;
  m.seed = seed;
  m.target_ids = seq.ids;
  m.input_ids = seq.ids;
  for (const auto& r : select_words(seq, ratio, rng)) {
    std::fill(m.input_ids.begin() + static_cast<std::ptrdiff_t>(r.begin),
              m.input_ids.begin() + static_cast<std::ptrdiff_t>(r.end), BpeVocab::kMask);
    m.selected_words.push_back({r, WordFate::mask});
    m.masked_spans.push_back(r);
  }
  return m;
}

MaskedInstance clean_instance(const TokenSeq& seq) {
  MaskedInstance m;
  m.strategy = MaskStrategy::MNEM_DECODER;
  m.input_ids = seq.ids;
  m.target_ids = seq.ids;
  return m;
}

TokenizedSample tokenize_sample(const BpeVocab& vocab, const ContextualSample& sample) {
  return {encode(vocab, sample.caption), encode(vocab, sample.section), encode(vocab, sample.description)};
}

TrainingPair build_training_pair(const ContextualSample& sample, MaskStrategy strategy, const MaskParams& params,
                                 const TokenizedSample& tokens, const std::vector<EntitySpan>& caption_entities,
                                 DomainMode mode, std::uint64_t global_seed, const BpeVocab& vocab) {
  TrainingPair pair;
  pair.sample_id = sample.id;
  pair.context.section = tokens.section.ids;
  pair.context.description = tokens.description.ids;
  pair.context.image_feature_id = sample.image_feature_id;
  const std::uint64_t seed = derive_seed(global_seed, sample.id);
  switch (strategy) {
    case MaskStrategy::MLM:
      pair.masked = mask_mlm(vocab, tokens.caption, params.mlm_ratio, seed, params.fates);
      break;
    case MaskStrategy::FULL:
      pair.masked = mask_full(tokens.caption, params.mlm_ratio, seed);
      break;
    case MaskStrategy::MNEM_DECODER:
    case MaskStrategy::MNEM_SENTINEL: {
      const auto spans = align_to_tokens(filter_labels(caption_entities, mode), tokens.caption);
      pair.masked = strategy == MaskStrategy::MNEM_DECODER ? mask_mnem_decoder(tokens.caption, spans, params.mnem_p, seed)
                                                           : mask_mnem_sentinel(tokens.caption, spans, params.mnem_p, seed);
      break;
    }
  }
  return pair;
}

std::vector<TrainingPair> build_masked_dataset(const Corpus& corpus, const Annotations& annotations,
                                               const BpeVocab& vocab, MaskStrategy strategy, const MaskParams& params,
                                               DomainMode mode, std::uint64_t global_seed, unsigned threads) {
  params.validate();
  std::vector<TrainingPair> out(corpus.size());
  static const std::vector<EntitySpan> kNone;
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& s = corpus[i];
      auto it = annotations.find(s.id);
      const auto& ents = it == annotations.end() ? kNone : it->second.caption;
      out[i] = build_training_pair(s, strategy, params, tokenize_sample(vocab, s), ents, mode, global_seed, vocab);
    }
  };
  threads = std::max(1U, threads);
  if (threads == 1 || corpus.size() < 2) {
    work(0, corpus.size());
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (corpus.size() + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t b = std::min(corpus.size(), t * chunk);
    const std::size_t e = std::min(corpus.size(), b + chunk);
    pool.emplace_back([&, b, e, t] {
      try {
        work(b, e);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::string masked_dataset_to_jsonl(const std::vector<TrainingPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& r : p.masked.masked_spans) spans.push_back({r.begin, r.end});
    nlohmann::json j;
    j["sample_id"] = p.sample_id;
    j["strategy"] = to_string(p.masked.strategy);
    j["input_ids"] = p.masked.input_ids;
    j["target_ids"] = p.masked.target_ids;
    j["masked_spans"] = std::move(spans);
    j["seed"] = p.masked.seed;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<TrainingPair> load_masked_dataset(const std::filesystem::path& path) {
  std::vector<TrainingPair> out;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TrainingPair p;
      p.sample_id = j.at("sample_id").get<std::string>();
      p.masked.strategy = parse_strategy(j.at("strategy").get<std::string>());
      p.masked.input_ids = j.at("input_ids").get<std::vector<TokenId>>();
      p.masked.target_ids = j.at("target_ids").get<std::vector<TokenId>>();
      for (const auto& r : j.at("masked_spans")) p.masked.masked_spans.push_back({r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()});
      p.masked.seed = j.at("seed").get<std::uint64_t>();
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ArgumentError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mnem
