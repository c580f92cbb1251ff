#include "mnem/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "mnem/error.hpp"
#include "mnem/generate.hpp"
#include "mnem/rng.hpp"

namespace mnem {

using json = nlohmann::json;

namespace {

constexpr std::array<std::pair<PretrainStrategy, std::string_view>, 4> kStrategyNames = {{
    {PretrainStrategy::none, "none"},
    {PretrainStrategy::mlm, "mlm"},
    {PretrainStrategy::full, "full"},
    {PretrainStrategy::mnem, "mnem"},
}};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json metric_json(const MetricReport& m) {
  return json{{"bleu4", m.bleu4},
              {"rouge_l", m.rouge_l},
              {"cider_d", m.cider_d},
              {"ne_precision", m.ne_precision},
              {"ne_recall", m.ne_recall},
              {"avg_gen_length", m.avg_gen_length},
              {"n", m.n_evaluated},
              {"gt_overlap", m.gt_overlap},
              {"gen_overlap", m.gen_overlap}};
}

MetricReport median_report(const std::vector<const MetricReport*>& rs) {
  MetricReport out;
  if (rs.empty()) return out;
  auto med = [&](double MetricReport::*f) {
    std::vector<double> v;
    for (const auto* r : rs) v.push_back(r->*f);
    return median(std::move(v));
  };
  out.bleu4 = med(&MetricReport::bleu4);
  out.rouge_l = med(&MetricReport::rouge_l);
  out.cider_d = med(&MetricReport::cider_d);
  out.ne_precision = med(&MetricReport::ne_precision);
  out.ne_recall = med(&MetricReport::ne_recall);
  out.avg_gen_length = med(&MetricReport::avg_gen_length);
  out.gt_overlap = med(&MetricReport::gt_overlap);
  out.gen_overlap = med(&MetricReport::gen_overlap);
  out.n_evaluated = rs.front()->n_evaluated;
  return out;
}

// Everything the runs share, built once.
struct Prepared {
  Corpus train, test;
  Annotations annotations;
  FeatureStore features;
  BpeVocab vocab;
  std::vector<TokenizedSample> train_tokens, test_tokens;
  Gazetteer gazetteer;
  std::vector<JaccardRecord> records;
  ModelConfig model;
};

ContextInputs context_of(const ContextualSample& s, const TokenizedSample& t) {
  return ContextInputs{t.section.ids, t.description.ids, s.image_feature_id};
}

RunResult run_one(const ExperimentConfig& cfg, const Prepared& d, PretrainStrategy strategy, std::uint64_t seed,
                  bool use_image) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult r;
  r.strategy = strategy;
  r.seed = seed;
  r.use_image = use_image;
  try {
    Params<float> params(d.model);
    params.init(seed);
    TrainConfig tc;
    tc.lr = cfg.lr;
    tc.batch_size = cfg.batch_size;

    if (strategy != PretrainStrategy::none && cfg.pretrain_epochs > 0) {
      MaskStrategy ms = MaskStrategy::MLM;
      if (strategy == PretrainStrategy::full) ms = MaskStrategy::FULL;
      if (strategy == PretrainStrategy::mnem) {
        ms = d.model.arch == Arch::decoder_prefix ? MaskStrategy::MNEM_DECODER : MaskStrategy::MNEM_SENTINEL;
      }
      tc.epochs = cfg.pretrain_epochs;
      tc.seed = derive_seed(seed, "pretrain");
      const std::uint64_t mask_seed = derive_seed(seed, "mask");
      const auto source = [&](std::size_t i, int epoch) {
        const auto& s = d.train[i];
        const auto it = d.annotations.find(s.id);
        static const std::vector<EntitySpan> kNone;
        const auto pair = build_training_pair(s, ms, cfg.mask, d.train_tokens[i],
                                              it == d.annotations.end() ? kNone : it->second.caption, cfg.domain,
                                              cfg.resample_masks ? derive_seed(mask_seed, static_cast<std::uint64_t>(epoch)) : mask_seed, d.vocab);
        return make_example(d.model, pair, &d.features, Phase::pretrain, use_image);
      };
      r.pretrain_epoch_loss = train(params, tc, d.train.size(), source).epoch_loss;
    }

    std::vector<Example> fine;
    fine.reserve(d.train.size());
    for (std::size_t i = 0; i < d.train.size(); ++i) {
      TrainingPair pair{d.train[i].id, context_of(d.train[i], d.train_tokens[i]), clean_instance(d.train_tokens[i].caption)};
      fine.push_back(make_example(d.model, pair, &d.features, Phase::finetune, use_image));
    }
    tc.epochs = cfg.finetune_epochs;
    tc.seed = derive_seed(seed, "finetune");
    r.finetune_epoch_loss = train(params, tc, fine.size(), [&](std::size_t i, int) { return fine[i]; }).epoch_loss;

    GenerateOptions go;
    go.beam_width = cfg.beam_width;
    go.max_len = cfg.max_gen_len;
    auto& generated = r.generated;
    for (std::size_t i = 0; i < d.test.size(); ++i) {
      const auto input = make_input(d.model, context_of(d.test[i], d.test_tokens[i]), &d.features, use_image);
      generated[d.test[i].id] = decode(d.vocab, generate(params, input, go), true);
    }
    EvalOptions eo;
    eo.mode = cfg.domain;
    eo.context = cfg.split_context;
    r.eval = evaluate(generated, d.test, d.gazetteer, &d.records, eo);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds = seconds_since(t0);
  return r;
}

}  // namespace

std::string_view to_string(PretrainStrategy s) {
  for (const auto& [k, v] : kStrategyNames) {
    if (k == s) return v;
  }
  return "?";
}

PretrainStrategy parse_pretrain_strategy(std::string_view s) {
  for (const auto& [k, v] : kStrategyNames) {
    if (v == s) return k;
  }
  throw ArgumentError("unknown pretraining strategy '" + std::string(s) + "' (none, mlm, full, mnem)");
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

void ExperimentConfig::validate() const {
  synth.validate();
  if (n_test == 0 || n_test >= synth.n_samples) throw ArgumentError("n_test must lie in [1, n_samples)");
  if (strategies.empty()) throw ArgumentError("no strategies to run");
  if (seeds.empty()) throw ArgumentError("no seeds to run");
  if (pretrain_epochs < 0 || finetune_epochs < 0) throw ArgumentError("epochs must be >= 0");
  if (beam_width < 1) throw ArgumentError("beam width must be >= 1");
  if (max_gen_len < 1) throw ArgumentError("max_gen_len must be >= 1");
  mask.validate();
  ModelConfig m = model;
  m.vocab_size = static_cast<int>(BpeVocab::kFirstLearned);
  m.d_img = static_cast<int>(synth.d_img);
  m.validate();
}

json ExperimentConfig::to_json() const {
  json strat = json::array();
  for (auto s : strategies) strat.push_back(std::string(to_string(s)));
  return json{{"synth", synth.to_json()},
              {"n_test", n_test},
              {"vocab_size", vocab_size},
              {"model", model.to_json()},
              {"strategies", strat},
              {"seeds", seeds},
              {"image_ablation", image_ablation},
              {"pretrain_epochs", pretrain_epochs},
              {"finetune_epochs", finetune_epochs},
              {"lr", lr},
              {"batch_size", batch_size},
              {"mlm_ratio", mask.mlm_ratio},
              {"mnem_p", mask.mnem_p},
              {"resample_masks", resample_masks},
              {"domain", std::string(mnem::to_string(domain))},
              {"split_context", std::string(mnem::to_string(split_context))},
              {"beam_width", beam_width},
              {"max_gen_len", max_gen_len},
              {"threads", threads}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("synth")) c.synth = SynthConfig::from_json(j.at("synth"));
    if (j.contains("model")) {
      json m = c.model.to_json();
      m.update(j.at("model"));
      c.model = ModelConfig::from_json(m);
    }
    if (j.contains("strategies")) {
      c.strategies.clear();
      for (const auto& s : j.at("strategies")) c.strategies.push_back(parse_pretrain_strategy(s.get<std::string>()));
    }
    get("n_test", c.n_test);
    get("vocab_size", c.vocab_size);
    get("seeds", c.seeds);
    get("image_ablation", c.image_ablation);
    get("pretrain_epochs", c.pretrain_epochs);
    get("finetune_epochs", c.finetune_epochs);
    get("lr", c.lr);
    get("batch_size", c.batch_size);
    get("mlm_ratio", c.mask.mlm_ratio);
    get("mnem_p", c.mask.mnem_p);
    get("resample_masks", c.resample_masks);
    get("beam_width", c.beam_width);
    get("max_gen_len", c.max_gen_len);
    get("threads", c.threads);
    if (j.contains("domain")) c.domain = parse_mode(j.at("domain").get<std::string>());
    if (j.contains("split_context")) c.split_context = parse_context_mode(j.at("split_context").get<std::string>());
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("bad experiment config: ") + e.what());
  }
  return c;
}

const GroupSummary* ExperimentReport::group(PretrainStrategy s, bool use_image) const {
  for (const auto& g : groups) {
    if (g.strategy == s && g.use_image == use_image) return &g;
  }
  return nullptr;
}

bool ExperimentReport::complete() const {
  return std::all_of(runs.begin(), runs.end(), [](const RunResult& r) { return r.error.empty(); });
}

json ExperimentReport::to_json() const {
  json runs_j = json::array();
  for (const auto& r : runs) {
    json o{{"strategy", std::string(to_string(r.strategy))},
           {"seed", r.seed},
           {"image", r.use_image},
           {"pretrain_epoch_loss", r.pretrain_epoch_loss},
           {"finetune_epoch_loss", r.finetune_epoch_loss}};
    if (!r.error.empty()) {
      o["failed"] = true;
      o["error"] = r.error;
    }
    if (r.eval) {
      o["overall"] = metric_json(r.eval->overall);
      if (r.eval->easy) o["easy"] = metric_json(*r.eval->easy);
      if (r.eval->hard) o["hard"] = metric_json(*r.eval->hard);
    }
    runs_j.push_back(std::move(o));
  }
  json groups_j = json::array();
  for (const auto& g : groups) {
    groups_j.push_back({{"strategy", std::string(to_string(g.strategy))},
                        {"image", g.use_image},
                        {"completed_runs", g.completed},
                        {"median", {{"overall", metric_json(g.overall)}, {"easy", metric_json(g.easy)}, {"hard", metric_json(g.hard)}}}});
  }
  return json{{"n_train", n_train},   {"n_test", n_test},     {"vocab_size", vocab_size},
              {"complete", complete()}, {"groups", groups_j}, {"runs", runs_j}};
}

std::string ExperimentReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(10) << "strategy" << std::setw(7) << "image" << std::right << std::setw(5) << "runs"
     << std::setw(9) << "BLEU-4" << std::setw(9) << "ROUGE-L" << std::setw(9) << "CIDEr-D" << std::setw(9) << "NE-P"
     << std::setw(9) << "NE-R" << std::setw(11) << "Easy CIDEr" << std::setw(11) << "Hard CIDEr" << std::setw(10)
     << "Hard GT" << std::setw(10) << "Hard Gen" << "\n";
  for (const auto& g : groups) {
    os << std::left << std::setw(10) << to_string(g.strategy) << std::setw(7) << (g.use_image ? "yes" : "no")
       << std::right << std::setw(5) << g.completed << std::setw(9) << g.overall.bleu4 << std::setw(9)
       << g.overall.rouge_l << std::setw(9) << g.overall.cider_d << std::setw(9) << g.overall.ne_precision
       << std::setw(9) << g.overall.ne_recall << std::setw(11) << g.easy.cider_d << std::setw(11) << g.hard.cider_d
       << std::setw(10) << g.hard.gt_overlap << std::setw(10) << g.hard.gen_overlap << "\n";
  }
  for (const auto& r : runs) {
    if (!r.error.empty()) {
      os << "FAILED " << to_string(r.strategy) << " seed " << r.seed << (r.use_image ? "" : " (no image)") << ": "
         << r.error << "\n";
    }
  }
  os << "medians over seeds; train " << n_train << ", test " << n_test << ", vocab " << vocab_size << "\n";
  return os.str();
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Prepared d;
  {
    SynthOutput syn = synth_generate(cfg.synth);
    auto parts = split_dataset(syn.corpus, derive_seed(cfg.synth.seed, "split"), 0, cfg.n_test);
    d.train = std::move(parts.train);
    d.test = std::move(parts.test);
    d.annotations = std::move(syn.annotations);
    d.features = std::move(syn.features);
  }
  std::vector<std::string> texts;
  for (const auto& s : d.train) {
    texts.push_back(s.caption);
    texts.push_back(s.section);
    texts.push_back(s.description);
  }
  d.vocab = train_bpe(texts, cfg.vocab_size);
  for (const auto& s : d.train) d.train_tokens.push_back(tokenize_sample(d.vocab, s));
  for (const auto& s : d.test) d.test_tokens.push_back(tokenize_sample(d.vocab, s));
  d.gazetteer = Gazetteer::from_annotations(d.annotations);
  d.records = assign(d.test, cfg.split_context);
  d.model = cfg.model;
  d.model.vocab_size = static_cast<int>(d.vocab.size());
  d.model.d_img = static_cast<int>(cfg.synth.d_img);

  struct Job {
    PretrainStrategy strategy;
    std::uint64_t seed;
    bool image;
  };
  std::vector<Job> jobs;
  for (auto s : cfg.strategies) {
    for (auto seed : cfg.seeds) jobs.push_back({s, seed, true});
  }
  const bool has_mnem = std::count(cfg.strategies.begin(), cfg.strategies.end(), PretrainStrategy::mnem) > 0;
  if (cfg.image_ablation && has_mnem) {
    for (auto seed : cfg.seeds) jobs.push_back({PretrainStrategy::mnem, seed, false});
  }

  ExperimentReport rep;
  rep.runs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      rep.runs[j] = run_one(cfg, d, jobs[j].strategy, jobs[j].seed, jobs[j].image);
      if (progress) {
        std::lock_guard<std::mutex> lock(mu);
        progress(rep.runs[j]);
      }
    }
  };
  const unsigned n_threads = std::max(1U, std::min<unsigned>(cfg.threads, static_cast<unsigned>(jobs.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<std::pair<PretrainStrategy, bool>> keys;
  for (const auto& j : jobs) {
    if (std::find(keys.begin(), keys.end(), std::make_pair(j.strategy, j.image)) == keys.end()) {
      keys.emplace_back(j.strategy, j.image);
    }
  }
  for (const auto& [s, img] : keys) {
    GroupSummary g;
    g.strategy = s;
    g.use_image = img;
    std::vector<const MetricReport*> all, easy, hard;
    for (const auto& r : rep.runs) {
      if (r.strategy != s || r.use_image != img || !r.eval) continue;
      ++g.completed;
      all.push_back(&r.eval->overall);
      if (r.eval->easy) easy.push_back(&*r.eval->easy);
      if (r.eval->hard) hard.push_back(&*r.eval->hard);
    }
    g.overall = median_report(all);
    g.easy = median_report(easy);
    g.hard = median_report(hard);
    rep.groups.push_back(g);
  }
  rep.n_train = d.train.size();
  rep.n_test = d.test.size();
  rep.vocab_size = d.vocab.size();
  rep.seconds = seconds_since(t0);
  return rep;
}

}  // namespace mnem
