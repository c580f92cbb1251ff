#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "mnem/io.hpp"
#include "test_util.hpp"

namespace mnem {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr together
};

Run run(const std::string& args, const fs::path& cwd = fs::current_path()) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" MNEM_CLI "' " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.output.append(buf.data(), n);
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

const std::vector<std::string> kCommands = {"ingest", "stats", "annotate", "tokenize", "tokenize train", "tokenize encode",
                                            "mask", "split", "pretrain", "finetune", "generate", "eval",
                                            "synth", "gradcheck", "experiment"};

TEST(Cli, HelpEverywhere) {
  const auto top = run("--help");
  EXPECT_EQ(top.code, 0);
  for (const auto& c : kCommands) {
    const auto r = run(c + " --help");
    EXPECT_EQ(r.code, 0) << c;
    EXPECT_NE(r.output.find("Usage"), std::string::npos) << c;
  }
}

TEST(Cli, UnknownFlagIsUsageError) {
  for (const auto& c : kCommands) {
    if (c == "tokenize") continue;
    const auto r = run(c + " --no-such-flag");
    EXPECT_EQ(r.code, 1) << c;
    EXPECT_NE(r.output.find("Usage"), std::string::npos) << c;
  }
}

TEST(Cli, MissingInputIsIoError) {
  const auto dir = testing::scratch_dir("cli_missing");
  const struct {
    std::string args, path;
  } cases[] = {
      {"stats --corpus absent.jsonl", "absent.jsonl"},
      {"ingest --input raw_absent.jsonl --out x.jsonl", "raw_absent.jsonl"},
      {"split --corpus gone.jsonl --out s.jsonl", "gone.jsonl"},
      {"tokenize encode --vocab novocab.json --text hi", "novocab.json"},
      {"split --corpus c.jsonl --out s.jsonl --config nocfg.toml", "nocfg.toml"},
  };
  for (const auto& c : cases) {
    const auto r = run(c.args, dir);
    EXPECT_EQ(r.code, 2) << c.args << "\n" << r.output;
    EXPECT_NE(r.output.find(c.path), std::string::npos) << r.output;
  }
}

TEST(Cli, BadContentIsValidationError) {
  const auto dir = testing::scratch_dir("cli_bad");
  write_file(dir / "bad.jsonl", "{\"id\": 3}\n");
  EXPECT_EQ(run("stats --corpus bad.jsonl", dir).code, 1);
  EXPECT_EQ(run("synth --out s --easy-fraction 2", dir).code, 1);
}

// synth -> split -> tokenize -> pretrain -> finetune -> generate -> eval
TEST(Cli, PipelineSmoke) {
  const auto dir = testing::scratch_dir("cli_pipeline");
  const std::vector<std::string> steps = {
      "synth --seed 4 --n-samples 100 --out syn",
      "split --corpus syn/corpus.jsonl --context description --out split.jsonl",
      "tokenize train --input syn/corpus.jsonl --vocab-size 420 --out vocab.json",
      "mask --corpus syn/corpus.jsonl --annotations syn/annotations.jsonl --vocab vocab.json --seed 2 --out masked.jsonl",
      "pretrain --corpus syn/corpus.jsonl --vocab vocab.json --features syn/features.bin --masked masked.jsonl"
      " --d-model 16 --layers 1 --epochs 1 --seed 1 --out pre.ckpt",
      "finetune --corpus syn/corpus.jsonl --vocab vocab.json --features syn/features.bin --init pre.ckpt"
      " --epochs 1 --seed 1 --out ft.ckpt",
      "generate --checkpoint ft.ckpt --corpus syn/corpus.jsonl --vocab vocab.json --features syn/features.bin"
      " --max-tokens 12 --threads 2 --out gen.jsonl",
      "eval --generated gen.jsonl --corpus syn/corpus.jsonl --annotations syn/annotations.jsonl --split split.jsonl"
      " --out eval.json",
  };
  for (const auto& s : steps) {
    const auto r = run(s, dir);
    ASSERT_EQ(r.code, 0) << s << "\n" << r.output;
  }
  const auto rep = json::parse(read_file(dir / "eval.json"));
  EXPECT_EQ(rep.at("overall").at("n_evaluated").get<int>(), 100);
  EXPECT_TRUE(rep.contains("easy"));
  EXPECT_TRUE(rep.contains("hard"));
  const auto man = json::parse(read_file(dir / "eval.json.manifest.json"));
  EXPECT_EQ(man.at("command"), "eval");
  EXPECT_EQ(man.at("inputs").size(), 4u);
  EXPECT_TRUE(man.at("outputs").contains("eval.json"));
}

// Replaying the argv recorded in a manifest reproduces the output digests.
TEST(Cli, ManifestReplay) {
  const auto dir = testing::scratch_dir("cli_replay");
  ASSERT_EQ(run("synth --seed 8 --n-samples 60 --out syn", dir).code, 0);
  ASSERT_EQ(run("tokenize train --input syn/corpus.jsonl --vocab-size 400 --out vocab.json", dir).code, 0);
  const std::string mask = "mask --corpus syn/corpus.jsonl --annotations syn/annotations.jsonl --vocab vocab.json"
                           " --strategy mlm --seed 5 --threads 3 --out m.jsonl";
  ASSERT_EQ(run(mask, dir).code, 0);
  const auto first = json::parse(read_file(dir / "m.jsonl.manifest.json"));
  EXPECT_EQ(first.at("seed").get<std::uint64_t>(), 5u);
  std::string args;
  const auto& argv = first.at("argv");
  for (std::size_t i = 1; i < argv.size(); ++i) {
    const bool threads_value = argv[i - 1] == "--threads";  // replay on another worker layout
    args += "'" + (threads_value ? std::string("1") : argv[i].get<std::string>()) + "' ";
  }
  ASSERT_EQ(run(args, dir).code, 0);
  const auto second = json::parse(read_file(dir / "m.jsonl.manifest.json"));
  EXPECT_EQ(second.at("outputs"), first.at("outputs"));
  EXPECT_EQ(second.at("inputs"), first.at("inputs"));
}

TEST(Cli, ConfigFileWithFlagOverride) {
  const auto dir = testing::scratch_dir("cli_config");
  ASSERT_EQ(run("synth --seed 1 --n-samples 40 --out syn", dir).code, 0);
  write_file(dir / "c.toml", "vocab_size = 380\nfields = [\"caption\"]\n");
  ASSERT_EQ(run("tokenize train --input syn/corpus.jsonl --out a.json --config c.toml", dir).code, 0);
  ASSERT_EQ(run("tokenize train --input syn/corpus.jsonl --out b.json --config c.toml --vocab-size 390", dir).code, 0);
  EXPECT_EQ(json::parse(read_file(dir / "a.json.manifest.json")).at("config").at("vocab-size"), "380");
  EXPECT_EQ(json::parse(read_file(dir / "b.json.manifest.json")).at("config").at("vocab-size"), "390");
  EXPECT_EQ(json::parse(read_file(dir / "a.json.manifest.json")).at("config").at("fields"), "caption");
}

TEST(Cli, GradcheckExitStatus) {
  const auto dir = testing::scratch_dir("cli_gradcheck");
  EXPECT_EQ(run("gradcheck --layers 1 --coords 3 --out g.json", dir).code, 0);
  EXPECT_EQ(run("gradcheck --layers 1 --coords 3 --tolerance 1e-15", dir).code, 1);
}

}  // namespace
}  // namespace mnem
