// mnem command-line tool: one subcommand per pipeline stage plus the A/B
// experiment. Exit codes: 0 ok, 1 bad arguments or input contents, 2 I/O.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "manifest.hpp"
#include "mnem/corpus.hpp"
#include "mnem/error.hpp"
#include "mnem/experiment.hpp"
#include "mnem/generate.hpp"
#include "mnem/gradcheck.hpp"
#include "mnem/io.hpp"
#include "mnem/mask.hpp"
#include "mnem/metrics.hpp"
#include "mnem/model.hpp"
#include "mnem/ner.hpp"
#include "mnem/rng.hpp"
#include "mnem/split.hpp"
#include "mnem/stats.hpp"
#include "mnem/synth.hpp"
#include "mnem/tokenizer.hpp"
#include "mnem/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mnem::cli {
namespace {

// ---- flat TOML config ------------------------------------------------------

// Appends `--key=value` for every config key the command line does not set.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::istringstream in(read_file(path));
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ArgumentError(path + ": " + e.what());
  }
  auto given = [&](const std::string& flag) {
    return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
  };
  std::vector<std::string> extra;
  for (const auto& it : items) {
    if (it.name == "++" || it.name == "--") continue;  // section markers
    if (!it.parents.empty()) throw ArgumentError(path + ": sections are not supported (" + it.fullname() + ")");
    std::string key = it.name;
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    for (const auto& v : it.inputs) extra.push_back(flag + "=" + v);
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

// ---- shared option groups --------------------------------------------------

struct Common {
  std::string config;
  std::string manifest;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

void add_common(CLI::App* sub, Common& c, bool with_seed = true) {
  sub->add_option("--config", c.config, "flat key = value file (TOML); flags win over it");
  sub->add_option("--manifest", c.manifest, "where to write the run manifest (default: next to the output)");
  sub->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  if (with_seed) sub->add_option("--seed", c.seed, "random seed");
}

struct ModelOpts {
  ModelConfig cfg;
  std::string arch = "decoder_prefix";
  std::string block = "dynamic_conv";

  ModelConfig resolve(int vocab_size, int d_img) const {
    ModelConfig m = cfg;
    m.arch = parse_arch(arch);
    m.block = parse_block(block);
    m.vocab_size = vocab_size;
    m.d_img = d_img;
    m.validate();
    return m;
  }
};

void add_model(CLI::App* sub, ModelOpts& m) {
  sub->add_option("--arch", m.arch, "decoder_prefix | encoder_decoder");
  sub->add_option("--block", m.block, "dynamic_conv | self_attn");
  sub->add_option("--d-model", m.cfg.d_model);
  sub->add_option("--layers", m.cfg.n_layers);
  sub->add_option("--heads", m.cfg.n_heads);
  sub->add_option("--kernel", m.cfg.conv_kernel, "dynamic convolution width");
  sub->add_option("--max-len", m.cfg.max_len, "decoder positions, BOS included");
  sub->add_option("--max-context", m.cfg.max_context, "tokens kept per context field");
  sub->add_option("--ffn-mult", m.cfg.ffn_mult);
  sub->add_option("--dropout", m.cfg.dropout);
}

void add_train(CLI::App* sub, TrainConfig& t) {
  sub->add_option("--lr", t.lr, "peak learning rate");
  sub->add_option("--batch-size", t.batch_size);
  sub->add_option("--epochs", t.epochs);
  sub->add_option("--warmup", t.warmup_fraction, "warmup share of all steps");
  sub->add_option("--weight-decay", t.weight_decay);
  sub->add_option("--clip", t.clip_norm, "global gradient norm cap (0 = off)");
  sub->add_option("--checkpoint-dir", t.checkpoint_dir, "per-epoch checkpoints");
}

json resolved_options(const CLI::App* sub) {
  json j = json::object();
  for (const CLI::Option* o : sub->get_options()) {
    const std::string name = o->get_lnames().empty() ? o->get_name() : o->get_lnames().front();
    if (name == "help" || name == "config" || name == "manifest") continue;
    if (o->count() > 0) {
      const auto& r = o->results();
      j[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      j[name] = o->get_default_str();
    }
  }
  return j;
}

// ---- small helpers ---------------------------------------------------------

Corpus read_corpus(const fs::path& p, RunManifest& m) {
  m.input(p);
  auto res = ingest_jsonl(p);
  if (!res.rejects.empty()) {
    throw FormatError(p.string() + ":" + std::to_string(res.rejects.front().line_no) + ": " + res.rejects.front().reason);
  }
  return std::move(res.corpus);
}

Annotations read_annotations(const fs::path& p, const Corpus* corpus, RunManifest& m) {
  m.input(p);
  auto res = load_annotations(p, corpus);
  if (!res.rejects.empty()) {
    const auto& r = res.rejects.front();
    throw FormatError(p.string() + ":" + std::to_string(r.line_no) + ": " + r.reason);
  }
  return std::move(res.annotations);
}

void write_out(const fs::path& p, std::string_view content, RunManifest& m) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(p, content);
  m.output(p);
}

void emit(const std::string& out, const std::string& content, RunManifest& m) {
  if (out.empty()) {
    std::cout << content;
    if (!content.empty() && content.back() != '\n') std::cout << '\n';
  } else {
    write_out(out, content, m);
  }
}

std::vector<TokenizedSample> tokenize_all(const BpeVocab& v, const Corpus& c) {
  std::vector<TokenizedSample> out;
  out.reserve(c.size());
  for (const auto& s : c) out.push_back(tokenize_sample(v, s));
  return out;
}

ContextInputs context_of(const ContextualSample& s, const TokenizedSample& t) {
  return ContextInputs{t.section.ids, t.description.ids, s.image_feature_id};
}

struct Features {
  std::optional<FeatureStore> store;
  const FeatureStore* get() const { return store ? &*store : nullptr; }
  int dim(int fallback) const { return store ? static_cast<int>(store->dim()) : fallback; }
};

Features read_features(const std::string& path, RunManifest& m) {
  Features f;
  if (!path.empty()) {
    m.input(path);
    f.store = load_features(path);
  }
  return f;
}

void print_train(const char* what, const TrainResult& r) {
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    std::cerr << what << " epoch " << e + 1 << " loss " << r.epoch_loss[e] << "\n";
  }
}

// ---- subcommands -----------------------------------------------------------

struct Command {
  CLI::App* app;
  Common common;
  std::function<void(RunManifest&)> run;
  std::function<std::string()> default_manifest;  // empty -> stderr
};

using Commands = std::vector<std::unique_ptr<Command>>;

Command& add_command(CLI::App& app, Commands& cmds, const std::string& name, const std::string& help,
                     bool with_seed = true, std::uint64_t default_seed = 0) {
  cmds.push_back(std::make_unique<Command>());
  Command& c = *cmds.back();
  c.common.seed = default_seed;
  c.app = app.add_subcommand(name, help);
  add_common(c.app, c.common, with_seed);
  return c;
}

void add_ingest(CLI::App& app, Commands& cmds) {
  struct O {
    std::string input, out, map, source = "wiki", rejects, features_in, features_out;
    bool wit = false, no_filter = false, no_dedup = false, wit_sizes = false;
    FilterOptions filter;
    std::size_t val = 0, test = 0;
  };
  auto o = std::make_shared<O>();
  Command& c = add_command(app, cmds, "ingest", "Read raw JSONL, strip disallowed characters, drop short and duplicate samples");
  auto* s = c.app;
  s->add_option("--input", o->input, "raw JSONL");
  s->add_option("--out", o->out, "cleaned corpus JSONL");
  s->add_flag("--wit", o->wit, "use the WIT field names");
  s->add_option("--map", o->map, "field mapping src=field,src=field");
  s->add_option("--source", o->source, "wiki | news | synthetic for records without one");
  s->add_option("--rejects", o->rejects, "write rejected lines here");
  s->add_flag("--no-filter", o->no_filter);
  s->add_flag("--no-dedup", o->no_dedup);
  s->add_option("--min-caption-words", o->filter.min_caption_words);
  s->add_option("--min-section-words", o->filter.min_section_words);
  s->add_option("--val", o->val, "validation samples to hold out");
  s->add_option("--test", o->test, "test samples to hold out");
  s->add_flag("--wit-sizes", o->wit_sizes, "hold out val/test in the WIT proportions");
  s->add_option("--features-in", o->features_in, "JSONL of {id, vector} image features");
  s->add_option("--features-out", o->features_out, "FeatureStore binary to write");
  c.default_manifest = [o] { return o->out.empty() ? o->features_out : o->out; };
  c.run = [o, &c](RunManifest& m) {
    m.seed(c.common.seed);
    if (!o->features_in.empty()) {
      if (o->features_out.empty()) throw ArgumentError("--features-in needs --features-out");
      m.input(o->features_in);
      FeatureStore store;
      std::size_t line_no = 0;
      for (const auto& line : read_lines(o->features_in)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
          const auto j = json::parse(line);
          auto v = j.at("vector").get<std::vector<float>>();
          if (store.dim() == 0) store = FeatureStore(static_cast<std::uint32_t>(v.size()));
          store.put(j.at("id").get<std::string>(), std::move(v));
        } catch (const json::exception& e) {
          throw FormatError(o->features_in + ":" + std::to_string(line_no) + ": " + e.what());
        }
      }
      save_features(store, o->features_out);
      m.output(o->features_out);
      std::cerr << "features: " << store.size() << " vectors of dim " << store.dim() << "\n";
    }
    if (o->input.empty()) {
      if (o->features_in.empty()) throw ArgumentError("--input is required");
      return;
    }
    if (o->out.empty()) throw ArgumentError("--out is required");
    FieldMap fm = o->wit ? FieldMap::wit() : o->map.empty() ? FieldMap::identity() : FieldMap::parse(o->map);
    fm.default_source = parse_source(o->source);
    m.input(o->input);
    auto res = ingest_jsonl(o->input, fm);
    std::cerr << "read " << res.corpus.size() << " samples, " << res.rejects.size() << " rejected lines\n";
    if (!o->rejects.empty()) {
      write_rejects_jsonl(o->rejects, res.rejects);
      m.output(o->rejects);
    }
    Corpus corpus = std::move(res.corpus);
    if (!o->no_filter) {
      auto f = filter_corpus(corpus, o->filter);
      std::cerr << "filter: " << f.report.removed_short_caption << " short captions, " << f.report.removed_short_section
                << " short sections, " << f.report.chars_stripped << " characters stripped\n";
      corpus = std::move(f.corpus);
    }
    if (!o->no_dedup) {
      const std::size_t before = corpus.size();
      corpus = dedup(corpus);
      std::cerr << "dedup: removed " << before - corpus.size() << "\n";
    }
    write_out(o->out, corpus_to_jsonl(corpus), m);
    std::size_t n_val = o->val, n_test = o->test;
    if (o->wit_sizes) {
      const auto sz = wit_ratio_sizes(corpus.size());
      n_val = sz.val;
      n_test = sz.test;
    }
    if (n_val + n_test > 0) {
      const auto parts = split_dataset(corpus, c.common.seed, n_val, n_test);
      const fs::path base = fs::path(o->out).replace_extension();
      write_out(base.string() + ".train.jsonl", corpus_to_jsonl(parts.train), m);
      write_out(base.string() + ".val.jsonl", corpus_to_jsonl(parts.val), m);
      write_out(base.string() + ".test.jsonl", corpus_to_jsonl(parts.test), m);
      std::cerr << "partition: " << parts.train.size() << " / " << parts.val.size() << " / " << parts.test.size() << "\n";
    }
    std::cerr << "kept " << corpus.size() << " samples\n";
  };
}

void add_stats(CLI::App& app, Commands& cmds) {
  struct O {
    std::string corpus, annotations, out;
  };
  auto o = std::make_shared<O>();
  Command& c = add_command(app, cmds, "stats", "Corpus statistics: words per field and entity word fractions", false);
  c.app->add_option("--corpus", o->corpus)->required();
  c.app->add_option("--annotations", o->annotations, "entity sidecar (optional)");
  c.app->add_option("--out", o->out, "JSON report (default stdout)");
  c.default_manifest = [o] { return o->out; };
  c.run = [o](RunManifest& m) {
    const Corpus corpus = read_corpus(o->corpus, m);
    const Annotations ann = o->annotations.empty() ? Annotations{} : read_annotations(o->annotations, &corpus, m);
    emit(o->out, stats_to_json(compute_stats(corpus, ann)), m);
  };
}

void add_annotate(CLI::App& app, Commands& cmds) {
  struct O {
    std::string corpus, gazetteer, out, mode;
  };
  auto o = std::make_shared<O>();
  Command& c = add_command(app, cmds, "annotate", "Tag entities with a gazetteer plus capitalization heuristics", false);
  c.app->add_option("--corpus", o->corpus)->required();
  c.app->add_option("--gazetteer", o->gazetteer, "TSV of surface<TAB>label");
  c.app->add_option("--mode", o->mode, "keep only wiki or news labels (default: keep all)");
  c.app->add_option("--out", o->out, "annotation sidecar JSONL")->required();
  c.default_manifest = [o] { return o->out; };
  c.run = [o](RunManifest& m) {
    const Corpus corpus = read_corpus(o->corpus, m);
    Gazetteer gaz;
    if (!o->gazetteer.empty()) {
      m.input(o->gazetteer);
      gaz = Gazetteer::load_tsv(o->gazetteer);
    }
    std::optional<DomainMode> mode;
    if (!o->mode.empty()) mode = parse_mode(o->mode);
    Annotations ann;
    std::size_t n = 0;
    for (const auto& s : corpus) {
      FieldSpans fs;
      for (auto f : {TextField::caption, TextField::section, TextField::description}) {
        auto spans = tag_heuristic(field_text(s, f), gaz);
        fs.at(f) = mode ? filter_labels(spans, *mode) : std::move(spans);
        n += fs.at(f).size();
      }
      ann[s.id] = std::move(fs);
    }
    write_out(o->out, annotations_to_jsonl(ann), m);
    std::cerr << "tagged " << n << " spans in " << corpus.size() << " samples\n";
  };
}

void add_tokenize(CLI::App& app, Commands& cmds) {
  auto* tok = app.add_subcommand("tokenize", "Byte-level BPE: train a vocabulary or encode text");
  tok->require_subcommand(1);
  {
    struct O {
      std::string input, out;
      std::size_t vocab_size = 600;
      std::vector<std::string> fields = {"caption", "section", "description"};
    };
    auto o = std::make_shared<O>();
    cmds.push_back(std::make_unique<Command>());
    Command& c = *cmds.back();
    c.app = tok->add_subcommand("train", "Learn merges from corpus text");
    add_common(c.app, c.common, false);
    c.app->add_option("--input", o->input, "corpus JSONL")->required();
    c.app->add_option("--vocab-size", o->vocab_size, "bytes + specials + merges")->required();
    c.app->add_option("--fields", o->fields, "text fields to learn from");
    c.app->add_option("--out", o->out, "vocab JSON")->required();
    c.default_manifest = [o] { return o->out; };
    c.run = [o](RunManifest& m) {
      const Corpus corpus = read_corpus(o->input, m);
      std::vector<std::string> texts;
      for (const auto& s : corpus) {
        for (const auto& f : o->fields) texts.push_back(field_text(s, parse_field(f)));
      }
      const BpeVocab v = train_bpe(texts, o->vocab_size);
      v.save(o->out);
      m.output(o->out);
      std::cerr << "vocab size " << v.size() << "\n";
    };
  }
  {
    struct O {
      std::string vocab, text, input, out;
    };
    auto o = std::make_shared<O>();
    cmds.push_back(std::make_unique<Command>());
    Command& c = *cmds.back();
    c.app = tok->add_subcommand("encode", "Encode --text, or every field of a corpus");
    add_common(c.app, c.common, false);
    c.app->add_option("--vocab", o->vocab)->required();
    c.app->add_option("--text", o->text, "one string to encode");
    c.app->add_option("--input", o->input, "corpus JSONL to encode");
    c.app->add_option("--out", o->out, "output JSONL (default stdout)");
    c.default_manifest = [o] { return o->out; };
    c.run = [o](RunManifest& m) {
      m.input(o->vocab);
      const BpeVocab v = BpeVocab::load(o->vocab);
      if (o->input.empty()) {
        const auto seq = encode(v, o->text);
        json toks = json::array();
        for (auto id : seq.ids) toks.push_back(bytes_to_printable(decode(v, std::vector<TokenId>{id})));
        emit(o->out, json{{"ids", seq.ids}, {"tokens", toks}}.dump(), m);
        return;
      }
      const Corpus corpus = read_corpus(o->input, m);
      std::string out;
      for (const auto& s : corpus) {
        const auto t = tokenize_sample(v, s);
        out += json{{"sample_id", s.id}, {"caption", t.caption.ids}, {"section", t.section.ids},
                    {"description", t.description.ids}}
                   .dump();
        out += '\n';
      }
      emit(o->out, out, m);
    };
  }
}

struct MaskOpts {
  std::string strategy = "mnem-decoder";
  MaskParams params;
  std::string mode = "wiki";
};

void add_mask_opts(CLI::App* s, MaskOpts& o) {
  s->add_option("--strategy", o.strategy, "mnem-decoder | mnem-sentinel | mlm | full");
  s->add_option("--p", o.params.mnem_p, "probability of masking an entity span");
  s->add_option("--ratio", o.params.mlm_ratio, "share of words selected by mlm/full");
  s->add_option("--mode", o.mode, "wiki | news entity labels");
}

void add_mask(CLI::App& app, Commands& cmds) {
  struct O {
    std::string corpus, annotations, vocab, out;
    MaskOpts mask;
  };
  auto o = std::make_shared<O>();
  Command& c = add_command(app, cmds, "mask", "Corrupt captions for pretraining");
  c.app->add_option("--corpus", o->corpus)->required();
  c.app->add_option("--annotations", o->annotations)->required();
  c.app->add_option("--vocab", o->vocab)->required();
  add_mask_opts(c.app, o->mask);
  c.app->add_option("--out", o->out, "masked dataset JSONL")->required();
  c.default_manifest = [o] { return o->out; };
  c.run = [o, &c](RunManifest& m) {
    m.seed(c.common.seed);
    const Corpus corpus = read_corpus(o->corpus, m);
    const Annotations ann = read_annotations(o->annotations, &corpus, m);
    m.input(o->vocab);
    const BpeVocab v = BpeVocab::load(o->vocab);
    o->mask.params.validate();
    const auto pairs = build_masked_dataset(corpus, ann, v, parse_strategy(o->mask.strategy), o->mask.params,
                                            parse_mode(o->mask.mode), c.common.seed, c.common.threads);
    write_out(o->out, masked_dataset_to_jsonl(pairs), m);
    std::cerr << "masked " << pairs.size() << " captions\n";
  };
}

void add_split(CLI::App& app, Commands& cmds) {
  struct O {
    std::string corpus, context = "wiki", out;
    double threshold = kEasyThreshold;
  };
  auto o = std::make_shared<O>();
  Command& c = add_command(app, cmds, "split", "Label samples Easy/Hard by caption-context Jaccard overlap", false);
  c.app->add_option("--corpus", o->corpus)->required();
  c.app->add_option("--context", o->context, "wiki | section | description");
  c.app->add_option("--threshold", o->threshold, "Easy when the score is strictly above this");
  c.app->add_option("--out", o->out, "split records JSONL")->required();
  c.default_manifest = [o] { return o->out; };
  c.run = [o](RunManifest& m) {
    const Corpus corpus = read_corpus(o->corpus, m);
    const auto recs = assign(corpus, parse_context_mode(o->context), o->threshold);
    write_out(o->out, split_records_to_jsonl(recs), m);
    const auto easy = std::count_if(recs.begin(), recs.end(), [](const JaccardRecord& r) { return r.label == Difficulty::Easy; });
    std::cerr << "Easy " << easy << ", Hard " << recs.size() - static_cast<std::size_t>(easy) << "\n";
  };
}

// Shared by pretrain and finetune.
struct TrainIo {
  std::string corpus, vocab, features, init, out;
  bool no_image = false;
  ModelOpts model;
  TrainConfig train;
};

void add_train_io(CLI::App* s, TrainIo& o) {
  s->add_option("--corpus", o.corpus, "training corpus JSONL")->required();
  s->add_option("--vocab", o.vocab)->required();
  s->add_option("--features", o.features, "FeatureStore with the image vectors");
  s->add_flag("--no-image", o.no_image, "leave the image slot out");
  s->add_option("--init", o.init, "start from this checkpoint instead of a fresh model");
  s->add_option("--out", o.out, "final checkpoint")->required();
  add_model(s, o.model);
  add_train(s, o.train);
}

Params<float> initial_params(const TrainIo& o, const BpeVocab& v, const Features& f, std::uint64_t seed, RunManifest& m) {
  if (!o.init.empty()) {
    m.input(o.init);
    Params<float> p = load_checkpoint(o.init);
    if (p.config().vocab_size != static_cast<int>(v.size())) throw ArgumentError("checkpoint vocab size differs from --vocab");
    return p;
  }
  Params<float> p(o.model.resolve(static_cast<int>(v.size()), f.dim(o.model.cfg.d_img)));
  p.init(seed);
  return p;
}

void add_pretrain(CLI::App& app, Commands& cmds) {
  struct O {
    TrainIo io;
    std::string annotations, masked, masks = "per-epoch";
    MaskOpts mask;
  };
  auto o = std::make_shared<O>();
  Command& c = add_command(app, cmds, "pretrain", "Pretrain on corrupted captions");
  add_train_io(c.app, o->io);
  c.app->add_option("--annotations", o->annotations, "entity sidecar (needed unless --masked)");
  c.app->add_option("--masked", o->masked, "fixed corruptions from `mask` instead of masking here");
  c.app->add_option("--masks", o->masks, "per-epoch (fresh masks each epoch) | fixed");
  add_mask_opts(c.app, o->mask);
  c.default_manifest = [o] { return o->io.out; };
  c.run = [o, &c](RunManifest& m) {
    m.seed(c.common.seed);
    const Corpus corpus = read_corpus(o->io.corpus, m);
    m.input(o->io.vocab);
    const BpeVocab v = BpeVocab::load(o->io.vocab);
    const Features f = read_features(o->io.features, m);
    Params<float> params = initial_params(o->io, v, f, c.common.seed, m);
    const auto tokens = tokenize_all(v, corpus);
    const bool use_image = !o->io.no_image && f.get();
    const auto& mc = params.config();
    TrainConfig tc = o->io.train;
    tc.seed = derive_seed(c.common.seed, "pretrain");
    tc.checkpoint_prefix = "pretrain";
    TrainResult res;
    if (!o->masked.empty()) {
      m.input(o->masked);
      auto pairs = load_masked_dataset(o->masked);
      std::map<std::string, std::size_t> index;
      for (std::size_t i = 0; i < corpus.size(); ++i) index[corpus[i].id] = i;
      for (auto& p : pairs) {
        const auto it = index.find(p.sample_id);
        if (it == index.end()) throw ArgumentError("masked sample " + p.sample_id + " is not in the corpus");
        p.context = context_of(corpus[it->second], tokens[it->second]);
      }
      res = train(params, tc, pairs.size(), [&](std::size_t i, int) {
        return make_example(mc, pairs[i], f.get(), Phase::pretrain, use_image);
      });
    } else {
      if (o->annotations.empty()) throw ArgumentError("pretrain needs --annotations or --masked");
      if (o->masks != "per-epoch" && o->masks != "fixed") throw ArgumentError("--masks must be per-epoch or fixed");
      const Annotations ann = read_annotations(o->annotations, &corpus, m);
      const auto strategy = parse_strategy(o->mask.strategy);
      const auto mode = parse_mode(o->mask.mode);
      o->mask.params.validate();
      const bool fresh = o->masks == "per-epoch";
      static const std::vector<EntitySpan> kNone;
      res = train(params, tc, corpus.size(), [&](std::size_t i, int epoch) {
        const auto it = ann.find(corpus[i].id);
        const auto seed = fresh ? derive_seed(c.common.seed, static_cast<std::uint64_t>(epoch)) : c.common.seed;
        const auto pair = build_training_pair(corpus[i], strategy, o->mask.params, tokens[i],
                                              it == ann.end() ? kNone : it->second.caption, mode, seed, v);
        return make_example(mc, pair, f.get(), Phase::pretrain, use_image);
      });
    }
    print_train("pretrain", res);
    if (fs::path(o->io.out).has_parent_path()) fs::create_directories(fs::path(o->io.out).parent_path());
    save_checkpoint(params, o->io.out);
    m.output(o->io.out);
  };
}

void add_finetune(CLI::App& app, Commands& cmds) {
  auto o = std::make_shared<TrainIo>();
  Command& c = add_command(app, cmds, "finetune", "Train on clean captions, optionally from a pretrained checkpoint");
  add_train_io(c.app, *o);
  c.default_manifest = [o] { return o->out; };
  c.run = [o, &c](RunManifest& m) {
    m.seed(c.common.seed);
    const Corpus corpus = read_corpus(o->corpus, m);
    m.input(o->vocab);
    const BpeVocab v = BpeVocab::load(o->vocab);
    const Features f = read_features(o->features, m);
    Params<float> params = initial_params(*o, v, f, c.common.seed, m);
    const auto tokens = tokenize_all(v, corpus);
    const bool use_image = !o->no_image && f.get();
    std::vector<Example> ex;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      TrainingPair p{corpus[i].id, context_of(corpus[i], tokens[i]), clean_instance(tokens[i].caption)};
      ex.push_back(make_example(params.config(), p, f.get(), Phase::finetune, use_image));
    }
    TrainConfig tc = o->train;
    tc.seed = derive_seed(c.common.seed, "finetune");
    tc.checkpoint_prefix = "finetune";
    print_train("finetune", train(params, tc, ex.size(), [&](std::size_t i, int) { return ex[i]; }));
    if (fs::path(o->out).has_parent_path()) fs::create_directories(fs::path(o->out).parent_path());
    save_checkpoint(params, o->out);
    m.output(o->out);
  };
}

void add_generate(CLI::App& app, Commands& cmds) {
  struct O {
    std::string checkpoint, corpus, vocab, features, out;
    bool no_image = false;
    GenerateOptions gen;
  };
  auto o = std::make_shared<O>();
  Command& c = add_command(app, cmds, "generate", "Caption every sample of a corpus", false);
  c.app->add_option("--checkpoint", o->checkpoint)->required();
  c.app->add_option("--corpus", o->corpus)->required();
  c.app->add_option("--vocab", o->vocab)->required();
  c.app->add_option("--features", o->features);
  c.app->add_flag("--no-image", o->no_image);
  c.app->add_option("--beam", o->gen.beam_width, "beam width (1 = greedy)");
  c.app->add_option("--max-tokens", o->gen.max_len, "generated token budget");
  c.app->add_option("--length-alpha", o->gen.length_alpha, "beam length normalization exponent");
  c.app->add_option("--out", o->out, "generated captions JSONL")->required();
  c.default_manifest = [o] { return o->out; };
  c.run = [o, &c](RunManifest& m) {
    m.input(o->checkpoint);
    const Params<float> params = load_checkpoint(o->checkpoint);
    const Corpus corpus = read_corpus(o->corpus, m);
    m.input(o->vocab);
    const BpeVocab v = BpeVocab::load(o->vocab);
    const Features f = read_features(o->features, m);
    const bool use_image = !o->no_image && f.get();
    std::vector<std::pair<std::string, std::string>> out(corpus.size());
    const unsigned nt = std::max(1U, std::min<unsigned>(c.common.threads, static_cast<unsigned>(corpus.size())));
    std::vector<std::exception_ptr> errs(nt);
    auto work = [&](unsigned t) {
      try {
        for (std::size_t i = t; i < corpus.size(); i += nt) {
          const auto in = make_input(params.config(), context_of(corpus[i], tokenize_sample(v, corpus[i])), f.get(), use_image);
          out[i] = {corpus[i].id, decode(v, generate(params, in, o->gen), true)};
        }
      } catch (...) {
        errs[t] = std::current_exception();
      }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < nt; ++t) pool.emplace_back(work, t);
    work(0);
    for (auto& th : pool) th.join();
    for (auto& e : errs) {
      if (e) std::rethrow_exception(e);
    }
    write_out(o->out, generated_to_jsonl(out), m);
  };
}

std::string metric_line(const char* name, const MetricReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << name << "  n " << r.n_evaluated << "  BLEU-4 " << r.bleu4 << "  ROUGE-L " << r.rouge_l << "  CIDEr-D "
     << r.cider_d << "  NE-P " << r.ne_precision << "  NE-R " << r.ne_recall << "  GT ol " << r.gt_overlap
     << "  Gen ol " << r.gen_overlap << "\n";
  return os.str();
}

void add_eval(CLI::App& app, Commands& cmds) {
  struct O {
    std::string generated, corpus, annotations, gazetteer, split, mode = "wiki", context = "wiki", out;
  };
  auto o = std::make_shared<O>();
  Command& c = add_command(app, cmds, "eval", "Score generated captions; Easy/Hard breakdown with --split", false);
  c.app->add_option("--generated", o->generated)->required();
  c.app->add_option("--corpus", o->corpus)->required();
  c.app->add_option("--annotations", o->annotations, "entity sidecar; its surfaces seed the gazetteer")->required();
  c.app->add_option("--gazetteer", o->gazetteer, "extra TSV gazetteer");
  c.app->add_option("--split", o->split, "split records JSONL");
  c.app->add_option("--mode", o->mode, "wiki | news entity labels");
  c.app->add_option("--context", o->context, "overlap context when no split records are given");
  c.app->add_option("--out", o->out, "JSON report (default stdout)");
  c.default_manifest = [o] { return o->out; };
  c.run = [o](RunManifest& m) {
    m.input(o->generated);
    const auto gen = load_generated(o->generated);
    const Corpus corpus = read_corpus(o->corpus, m);
    const Annotations ann = read_annotations(o->annotations, &corpus, m);
    Gazetteer gaz = Gazetteer::from_annotations(ann);
    if (!o->gazetteer.empty()) {
      m.input(o->gazetteer);
      for (const auto& [s, l] : Gazetteer::load_tsv(o->gazetteer).entries()) gaz.add(s, l);
    }
    std::vector<JaccardRecord> recs;
    if (!o->split.empty()) {
      m.input(o->split);
      recs = load_split_records(o->split);
    }
    EvalOptions eo;
    eo.mode = parse_mode(o->mode);
    eo.context = parse_context_mode(o->context);
    const auto rep = evaluate(gen, corpus, gaz, o->split.empty() ? nullptr : &recs, eo);
    std::cerr << metric_line("overall", rep.overall);
    if (rep.easy) std::cerr << metric_line("easy   ", *rep.easy);
    if (rep.hard) std::cerr << metric_line("hard   ", *rep.hard);
    if (!rep.missing_ids.empty()) std::cerr << rep.missing_ids.size() << " samples have no generated caption\n";
    emit(o->out, evaluation_to_json(rep), m);
  };
}

void add_synth_opts(CLI::App* s, SynthConfig& cfg, std::vector<std::string>& copy_pairs) {
  s->add_option("--n-samples", cfg.n_samples);
  s->add_option("--n-entities", cfg.n_entities, "entities per label");
  s->add_option("--entities-per-context", cfg.entities_per_context);
  s->add_option("--entities-per-caption", cfg.entities_per_caption);
  s->add_option("--easy-fraction", cfg.easy_fraction);
  s->add_option("--cue-fraction", cfg.cue_fraction, "share of non-easy samples with a copyable description");
  s->add_option("--noise", cfg.noise, "image noise std per dimension");
  s->add_option("--d-img", cfg.d_img);
  s->add_option("--caption-template", cfg.caption_templates);
  s->add_option("--copy-pair", copy_pairs, "description template || caption template");
  s->add_option("--description-template", cfg.description_templates);
  s->add_option("--section-template", cfg.section_templates);
  s->add_option("--tail", cfg.tails);
}

void apply_copy_pairs(SynthConfig& cfg, const std::vector<std::string>& pairs) {
  if (pairs.empty()) return;
  cfg.copy_pairs.clear();
  for (const auto& p : pairs) {
    const auto bar = p.find("||");
    if (bar == std::string::npos) throw ArgumentError("--copy-pair needs 'description || caption': " + p);
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(' '));
      s.erase(s.find_last_not_of(' ') + 1);
      return s;
    };
    cfg.copy_pairs.emplace_back(trim(p.substr(0, bar)), trim(p.substr(bar + 2)));
  }
}

void add_synth(CLI::App& app, Commands& cmds) {
  struct O {
    SynthConfig cfg = SynthConfig::defaults();
    std::vector<std::string> copy_pairs;
    std::string out;
    bool describe = false;
  };
  auto o = std::make_shared<O>();
  Command& c = add_command(app, cmds, "synth", "Generate a synthetic corpus with entity annotations and image features",
                           true, SynthConfig{}.seed);
  add_synth_opts(c.app, o->cfg, o->copy_pairs);
  c.app->add_option("--out", o->out, "output directory");
  c.app->add_flag("--describe", o->describe, "print the analytic expectations only");
  c.default_manifest = [o] { return o->out.empty() ? std::string() : (fs::path(o->out) / "manifest.json").string(); };
  c.run = [o, &c](RunManifest& m) {
    o->cfg.seed = c.common.seed;
    apply_copy_pairs(o->cfg, o->copy_pairs);
    m.seed(o->cfg.seed);
    m.config(o->cfg.to_json());
    const auto d = synth_describe(o->cfg);
    if (o->describe) {
      std::cout << d.to_text();
      return;
    }
    if (o->out.empty()) throw ArgumentError("--out is required unless --describe");
    const fs::path dir = o->out;
    fs::create_directories(dir);
    const auto out = synth_generate(o->cfg);
    write_out(dir / "corpus.jsonl", corpus_to_jsonl(out.corpus), m);
    write_out(dir / "annotations.jsonl", annotations_to_jsonl(out.annotations), m);
    save_features(out.features, dir / "features.bin");
    m.output(dir / "features.bin");
    write_out(dir / "describe.json", d.to_json().dump(2), m);
    std::cerr << d.to_text();
  };
}

void add_gradcheck(CLI::App& app, Commands& cmds) {
  struct O {
    ModelOpts model;
    int vocab = BpeVocab::kFirstLearned + 40;
    int d_img = 8;
    int coords = 10;
    double step = 1e-5;
    double tolerance = 1e-3;
    std::string out;
  };
  auto o = std::make_shared<O>();
  o->model.cfg.d_model = 16;
  o->model.cfg.max_len = 16;
  o->model.cfg.max_context = 16;
  Command& c = add_command(app, cmds, "gradcheck", "Compare analytic gradients with central differences (double precision)");
  add_model(c.app, o->model);
  c.app->add_option("--vocab-size", o->vocab);
  c.app->add_option("--d-img", o->d_img);
  c.app->add_option("--coords", o->coords, "coordinates probed per tensor");
  c.app->add_option("--step", o->step, "finite-difference step");
  c.app->add_option("--tolerance", o->tolerance, "exit 1 when the max relative error reaches this");
  c.app->add_option("--out", o->out, "JSON report (default stdout)");
  c.default_manifest = [o] { return o->out; };
  c.run = [o, &c](RunManifest& m) {
    m.seed(c.common.seed);
    const auto cfg = o->model.resolve(o->vocab, o->d_img);
    const auto rep = grad_check(cfg, c.common.seed, o->coords, o->step);
    emit(o->out, grad_check_to_json(rep).dump(2), m);
    std::cerr << "max relative error " << rep.max_rel_error << " at " << rep.worst << "\n";
    if (!(rep.max_rel_error < o->tolerance)) throw ArgumentError("gradient check above tolerance");
  };
}

void add_experiment(CLI::App& app, Commands& cmds) {
  struct O {
    ExperimentConfig cfg;
    std::vector<std::string> copy_pairs, strategies = {"none", "mlm", "full", "mnem"};
    ModelOpts model;
    std::string out, mode = "wiki", context = "description";
    bool no_ablation = false;
    bool fixed_masks = false;
  };
  auto o = std::make_shared<O>();
  Command& c = add_command(app, cmds, "experiment", "Pretraining-strategy A/B on a synthetic corpus", true,
                           SynthConfig{}.seed);
  auto* s = c.app;
  add_synth_opts(s, o->cfg.synth, o->copy_pairs);
  add_model(s, o->model);
  s->add_option("--n-test", o->cfg.n_test);
  s->add_option("--vocab-size", o->cfg.vocab_size);
  s->add_option("--strategies", o->strategies, "subset of none mlm full mnem");
  s->add_option("--seeds", o->cfg.seeds, "one run per seed and strategy");
  s->add_flag("--no-ablation", o->no_ablation, "skip the mnem runs without image");
  s->add_option("--pretrain-epochs", o->cfg.pretrain_epochs);
  s->add_option("--finetune-epochs", o->cfg.finetune_epochs);
  s->add_option("--lr", o->cfg.lr);
  s->add_option("--batch-size", o->cfg.batch_size);
  s->add_option("--p", o->cfg.mask.mnem_p);
  s->add_option("--ratio", o->cfg.mask.mlm_ratio);
  s->add_flag("--fixed-masks", o->fixed_masks, "draw pretraining masks once instead of every epoch");
  s->add_option("--mode", o->mode);
  s->add_option("--split-context", o->context, "context for the Easy/Hard split");
  s->add_option("--beam", o->cfg.beam_width);
  s->add_option("--max-tokens", o->cfg.max_gen_len);
  s->add_option("--out", o->out, "output directory")->required();
  c.default_manifest = [o] { return (fs::path(o->out) / "manifest.json").string(); };
  c.run = [o, &c](RunManifest& m) {
    auto& cfg = o->cfg;
    cfg.synth.seed = c.common.seed;
    apply_copy_pairs(cfg.synth, o->copy_pairs);
    cfg.model = o->model.cfg;
    cfg.model.arch = parse_arch(o->model.arch);
    cfg.model.block = parse_block(o->model.block);
    cfg.strategies.clear();
    for (const auto& st : o->strategies) cfg.strategies.push_back(parse_pretrain_strategy(st));
    cfg.image_ablation = !o->no_ablation;
    cfg.resample_masks = !o->fixed_masks;
    cfg.domain = parse_mode(o->mode);
    cfg.split_context = parse_context_mode(o->context);
    cfg.threads = c.common.threads;
    m.seed(c.common.seed);
    m.config(cfg.to_json());
    const fs::path dir = o->out;
    fs::create_directories(dir);
    const auto rep = run_experiment(cfg, [](const RunResult& r) {
      std::cerr << "run " << to_string(r.strategy) << " seed " << r.seed << (r.use_image ? "" : " no-image");
      if (r.error.empty() && r.eval) {
        std::cerr << ": CIDEr-D " << r.eval->overall.cider_d << ", NE-R " << r.eval->overall.ne_recall;
      } else {
        std::cerr << ": FAILED " << r.error;
      }
      std::cerr << " (" << r.seconds << " s)\n";
    });
    write_out(dir / "report.json", rep.to_json().dump(2), m);
    write_out(dir / "report.txt", rep.to_table(), m);
    for (const auto& r : rep.runs) {
      std::vector<std::pair<std::string, std::string>> gen(r.generated.begin(), r.generated.end());
      const std::string name = std::string(to_string(r.strategy)) + (r.use_image ? "" : "-noimage") + "-seed" +
                               std::to_string(r.seed) + ".jsonl";
      write_out(dir / "generated" / name, generated_to_jsonl(gen), m);
    }
    std::cout << rep.to_table();
    if (!rep.complete()) throw ArgumentError("some runs failed; see report.json");
  };
}

int exit_code(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const IoError& x) {
    std::cerr << "error: " << x.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& x) {
    std::cerr << "error: " << x.what() << "\n";
    return 2;
  } catch (const std::exception& x) {
    std::cerr << "error: " << x.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked named entity modeling toolkit for contextual image captioning"};
  app.name("mnem");
  app.option_defaults()->always_capture_default();
  app.require_subcommand(0, 1);
  bool allowlist = false;
  app.add_flag("--print-allowlist", allowlist, "print the character allowlist used by ingest and exit");
  Commands cmds;
  add_ingest(app, cmds);
  add_stats(app, cmds);
  add_annotate(app, cmds);
  add_tokenize(app, cmds);
  add_mask(app, cmds);
  add_split(app, cmds);
  add_pretrain(app, cmds);
  add_finetune(app, cmds);
  add_generate(app, cmds);
  add_eval(app, cmds);
  add_synth(app, cmds);
  add_gradcheck(app, cmds);
  add_experiment(app, cmds);

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = merge_config(std::move(args));
  } catch (...) {
    return exit_code(std::current_exception());
  }
  std::reverse(args.begin(), args.end());  // CLI11 consumes vectors back to front
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    const CLI::App* failed = &app;
    for (const auto& c : cmds) {
      if (c->app->parsed()) failed = c->app;
    }
    std::cerr << failed->help();
    return 1;
  }
  if (allowlist) {
    std::cout << allowlist_description() << "\n";
    return 0;
  }
  for (const auto& c : cmds) {
    if (!c->app->parsed()) continue;
    std::string name = c->app->get_name();
    if (c->app->get_parent() && c->app->get_parent() != &app) name = c->app->get_parent()->get_name() + " " + name;
    RunManifest m(name, std::vector<std::string>(argv, argv + argc));
    m.config(resolved_options(c->app));
    try {
      c->run(m);
      const auto j = m.finish();
      std::string path = c->common.manifest;
      if (path.empty() && c->default_manifest) {
        path = c->default_manifest();
        if (!path.empty() && fs::path(path).filename() != "manifest.json") path += ".manifest.json";
      }
      if (path.empty()) {
        std::cerr << "manifest: " << j.dump() << "\n";
      } else {
        write_file(path, j.dump(2));
      }
    } catch (...) {
      return exit_code(std::current_exception());
    }
    return 0;
  }
  std::cerr << app.help();
  return 1;
}

}  // namespace mnem::cli

int main(int argc, char** argv) { return mnem::cli::main(argc, argv); }
