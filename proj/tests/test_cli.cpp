#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dmmcs.hpp"
#include "test_support.hpp"

namespace dmmcs {
namespace {

using testing::quote;
using testing::read_file;
using testing::run_command;

class CliTest : public ::testing::Test {
 protected:
  testing::CommandResult cli(const std::string& args) {
    return run_command(fmt::format("cd {} && {} {}", quote(dir_.path().string()), quote(DMMCS_CLI_PATH), args));
  }

  std::string path(const std::string& name) const { return dir_.file(name); }

  // Synthetic corpus, embeddings, stats and model under fixed names.
  void prepare() {
    ASSERT_EQ(cli("gen-synth --tags 6 --examples 120 --val 20 --test 30 --seed 5 --out c.jsonl --embeddings e.txt "
                  "--requests r.jsonl --predicted p.jsonl")
                  .exit_code,
              0);
    ASSERT_EQ(cli("build-stats --corpus c.jsonl --embeddings e.txt --out s.json").exit_code, 0);
    ASSERT_EQ(cli("train-lm --corpus c.jsonl --out m.json").exit_code, 0);
  }

  testing::TempDir dir_;
};

TEST_F(CliTest, GenSynthOutputsLoad) {
  const auto r = cli("gen-synth --tags 8 --examples 500 --out c.jsonl --embeddings e.txt");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto corpus = load_corpus(path("c.jsonl"));
  EXPECT_EQ(corpus.split(Split::train).size(), 500u);
  const auto table = load_embeddings(path("e.txt"));
  EXPECT_GT(table.size(), 8u);
  const auto manifest = nlohmann::json::parse(read_file(path("c.jsonl.manifest.json")));
  EXPECT_EQ(manifest["command"], "gen-synth");
  EXPECT_EQ(manifest["config"]["planted"].size(), 8u);
}

TEST_F(CliTest, BuildStatsValidatesAndIsDeterministic) {
  prepare();
  const auto store = load_stats(path("s.json"));
  EXPECT_FALSE(store.empty());
  const auto first = read_file(path("s.json"));
  ASSERT_EQ(cli("build-stats --corpus c.jsonl --embeddings e.txt --out s.json").exit_code, 0);
  EXPECT_EQ(read_file(path("s.json")), first);
  const auto manifest = nlohmann::json::parse(read_file(path("s.json.manifest.json")));
  EXPECT_EQ(manifest["outputs"]["s.json"], sha256_file(path("s.json")));
  EXPECT_FALSE(manifest.contains("timings_ms"));
}

TEST_F(CliTest, BuildStatsEmptyTrainSplitFails) {
  testing::write_file(path("c.jsonl"), R"({"id":"a","tags":["x"],"caption":"x","split":"test"})" "\n");
  testing::write_file(path("e.txt"), "1 2\nx 1 0\n");
  const auto r = cli("build-stats --corpus c.jsonl --embeddings e.txt --out s.json");
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.output.find("train split is empty"), std::string::npos) << r.output;
}

TEST_F(CliTest, MalformedInputNamesLine) {
  testing::write_file(path("c.jsonl"), "{\"id\":\"a\",\"tags\":[],\"caption\":\"x\"}\n{\"id\":\"b\"}\n");
  const auto r = cli("train-lm --corpus c.jsonl --out m.json");
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.output.find("c.jsonl:2"), std::string::npos) << r.output;
}

TEST_F(CliTest, AlphaZeroDecodesLikeStandard) {
  prepare();
  ASSERT_EQ(cli("decode --model m.json --requests r.jsonl --out std.jsonl").exit_code, 0);
  ASSERT_EQ(cli("decode --model m.json --stats s.json --embeddings e.txt --method dmmcs --alpha 0 --requests r.jsonl "
                "--out a0.jsonl")
                .exit_code,
            0);
  const auto a = load_outputs(path("std.jsonl")), b = load_outputs(path("a0.jsonl"));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens) << a[i].id;
    EXPECT_EQ(a[i].raw_nll, b[i].raw_nll);
  }
}

TEST_F(CliTest, DmmcsWithoutStatsFails) {
  prepare();
  const auto r = cli("decode --model m.json --method dmmcs --alpha 0.5 --requests r.jsonl --out d.jsonl");
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.output.find("--stats"), std::string::npos);
}

TEST_F(CliTest, TimingFlagRecordsPhases) {
  prepare();
  ASSERT_EQ(cli("decode --model m.json --stats s.json --embeddings e.txt --method dmmcs-hd --alpha 0.5 "
                "--requests r.jsonl --out d.jsonl --timing --threads 3")
                .exit_code,
            0);
  const auto manifest = nlohmann::json::parse(read_file(path("d.jsonl.manifest.json")));
  for (const char* phase : {"load", "decode", "total"}) EXPECT_TRUE(manifest["timings_ms"].contains(phase)) << phase;
  EXPECT_EQ(manifest["engine_version"], kEngineVersion);
  EXPECT_EQ(manifest["inputs"].size(), 4u);
}

TEST_F(CliTest, DecodeFromCorpusSplit) {
  prepare();
  ASSERT_EQ(cli("decode --model m.json --corpus c.jsonl --split val --method constrained-any --out v.jsonl").exit_code,
            0);
  EXPECT_EQ(load_outputs(path("v.jsonl")).size(), 20u);
  EXPECT_NE(cli("decode --model m.json --out v.jsonl").exit_code, 0);
}

TEST_F(CliTest, SplitSeventyFiveTenFifteen) {
  std::string text;
  for (int i = 0; i < 100; ++i) text += fmt::format(R"({{"id":"e{}","tags":[],"caption":"c"}})" "\n", i);
  testing::write_file(path("all.jsonl"), text);
  ASSERT_EQ(cli("split --corpus all.jsonl --seed 3 --out split.jsonl").exit_code, 0);
  const auto c = load_corpus(path("split.jsonl"));
  EXPECT_EQ(c.split(Split::train).size(), 75u);
  EXPECT_EQ(c.split(Split::val).size(), 10u);
  EXPECT_EQ(c.split(Split::test).size(), 15u);
}

TEST_F(CliTest, TuneAlphaSingleValueGrid) {
  prepare();
  const auto r = cli("tune-alpha --model m.json --stats s.json --embeddings e.txt --corpus c.jsonl --grid 0.2 "
                     "--metric bleu --out t.json");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto j = nlohmann::json::parse(read_file(path("t.json")));
  EXPECT_EQ(j["best_alpha"], 0.2);
  EXPECT_EQ(j["curve"].size(), 1u);
  EXPECT_NE(cli("tune-alpha --model m.json --stats s.json --embeddings e.txt --corpus c.jsonl --grid 0.2,x "
                "--out t.json")
                .exit_code,
            0);
}

TEST_F(CliTest, EvaluateReport) {
  prepare();
  ASSERT_EQ(cli("decode --model m.json --stats s.json --embeddings e.txt --method dmmcs --alpha 0.6 "
                "--requests r.jsonl --out d.jsonl")
                .exit_code,
            0);
  const auto r = cli("evaluate --corpus c.jsonl --hyps d.jsonl --metric bleu --metric ca --metric gap "
                     "--metric perplexity --model m.json --stats s.json --embeddings e.txt --groups --subsets 3 "
                     "--sentence-order --rules " +
                     quote(DMMCS_SOURCE_DIR "/data/demo_rules.json") + " --out ev.json");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const auto j = nlohmann::json::parse(read_file(path("ev.json")));
  for (const char* m : {"bleu", "ca", "gap", "perplexity"}) {
    EXPECT_TRUE(j["corpus"].contains(m)) << m;
    EXPECT_EQ(j["aggregate"][m]["count"], 30);
    EXPECT_EQ(j["subsets"][m]["values"].size(), 3u);
  }
  EXPECT_FALSE(j["groups"].empty());
  EXPECT_EQ(j["per_example"].size(), 30u);
  EXPECT_TRUE(j["sentence_order"].contains("pairs_used"));
  EXPECT_NE(cli("evaluate --corpus c.jsonl --hyps d.jsonl --metric gap --out ev.json").exit_code, 0);
}

TEST_F(CliTest, UnknownOptionFails) {
  EXPECT_NE(cli("decode --bogus").exit_code, 0);
  EXPECT_NE(cli("").exit_code, 0);
  EXPECT_NE(cli("build-stats --corpus missing.jsonl --embeddings missing.txt --out s.json").exit_code, 0);
}

}  // namespace
}  // namespace dmmcs
