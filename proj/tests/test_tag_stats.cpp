#include <algorithm>
#include <cstring>
#include <sstream>

#include <gtest/gtest.h>

#include "dmmcs/tag_stats.hpp"
#include "test_support.hpp"

namespace dmmcs {
namespace {

TEST(Mcs, SelfSimilarityAndOrthogonality) {
  EmbeddingTable t(2);
  t.add("a", std::vector<double>{1, 0});
  t.add("b", std::vector<double>{0, 1});
  const auto tag = embed_tag("a", t);
  EXPECT_DOUBLE_EQ(*mcs(tag, {"b", "a"}, t), 1.0);
  EXPECT_DOUBLE_EQ(*mcs(tag, {"b"}, t), 0.0);
  EXPECT_FALSE(mcs(tag, {"zzz"}, t).has_value());
  EXPECT_FALSE(mcs(tag, {}, t).has_value());
}

TEST(Mcs, TakesMaximumCosine) {
  EmbeddingTable t(2);
  t.add("tag", std::vector<double>{1, 0});
  t.add("u", std::vector<double>{0, 1});
  t.add("v", std::vector<double>{0.6, 0.8});
  EXPECT_DOUBLE_EQ(*mcs(embed_tag("tag", t), {"u", "oov", "v"}, t), 0.6);
}

TEST(Median, OddEvenSingleton) {
  EXPECT_DOUBLE_EQ(median({0.7}), 0.7);
  EXPECT_DOUBLE_EQ(median({0.9, 0.2, 0.5}), 0.5);
  EXPECT_DOUBLE_EQ(median({0.8, 0.2}), 0.5);
  EXPECT_THROW(median({}), Error);
}

TEST(Ecdf, Definition) {
  const std::vector<double> s{1, 2, 3};
  EXPECT_DOUBLE_EQ(ecdf_eval(s, 2), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(ecdf_eval(s, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(ecdf_eval(s, 3), 1.0);
}

TEST(Ks, HandExamples) {
  const std::vector<double> a{0.1, 0.5}, b{0.5, 0.9};
  EXPECT_DOUBLE_EQ(ks_statistic(a, b), 0.5);
  EXPECT_DOUBLE_EQ(ks_statistic(a, a), 0.0);
  EXPECT_DOUBLE_EQ(ks_statistic(std::vector<double>{0}, std::vector<double>{1}), 1.0);
  EXPECT_THROW(ks_statistic(a, std::vector<double>{}), Error);
}

TEST(LookupMmcs, KnownUnknownEmpty) {
  StatsStore s(2);
  s.insert(make_tag_stats("a", {0.3}));
  s.insert(make_tag_stats("b", {0.6}));
  s.insert(make_tag_stats("c", {0.9}));
  EXPECT_DOUBLE_EQ(lookup_mmcs(s, "a"), 0.3);
  EXPECT_DOUBLE_EQ(lookup_mmcs(s, "zzz"), 0.6);
  try {
    lookup_mmcs(StatsStore(2), "a");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no statistics available"), std::string::npos);
  }
}

Corpus corpus_of(std::vector<Example> exs) { return Corpus(std::move(exs)); }

TEST(BuildStats, SingletonAndSupport) {
  EmbeddingTable t(2);
  t.add("tag", std::vector<double>{1, 0});
  t.add("w", std::vector<double>{0.7, std::sqrt(1 - 0.49)});
  const auto store = build_stats(corpus_of({{"e1", {"tag"}, "w w.", std::nullopt, Split::train},
                                            {"e2", {"tag"}, "w", std::nullopt, Split::test}}),
                                 t);
  const auto* s = store.find("tag");
  ASSERT_NE(s, nullptr);
  EXPECT_NEAR(s->mmcs, 0.7, 1e-12);
  EXPECT_EQ(s->support, 1u);
}

TEST(BuildStats, SkipsUncoverableAndEmptyCaptions) {
  EmbeddingTable t(2);
  t.add("a", std::vector<double>{1, 0});
  BuildStatsSummary sum;
  const auto store = build_stats(corpus_of({{"e1", {"a", "ghost"}, "a", std::nullopt, Split::train},
                                            {"e2", {"a"}, "nothing known", std::nullopt, Split::train}}),
                                 t, &sum);
  EXPECT_EQ(store.per_tag().size(), 1u);
  EXPECT_EQ(sum.uncoverable_tags, (std::vector<std::string>{"ghost"}));
  EXPECT_EQ(sum.skipped_captions, 1u);
  EXPECT_EQ(store.find("a")->support, 1u);
}

TEST(BuildStats, EmptyTrainSplitFails) {
  EmbeddingTable t(2);
  t.add("a", std::vector<double>{1, 0});
  EXPECT_THROW(build_stats(corpus_of({{"e", {"a"}, "a", std::nullopt, Split::val}}), t), Error);
}

struct RandomCorpus {
  Corpus corpus;
  EmbeddingTable table;
};

RandomCorpus random_corpus(std::uint64_t seed, std::size_t n) {
  std::vector<std::string> words, tags;
  for (int i = 0; i < 12; ++i) words.push_back(fmt::format("t{}", i));
  for (int i = 0; i < 5; ++i) tags.push_back(fmt::format("t{} t{}", i, i + 5));
  RandomCorpus rc{{}, testing::random_table(words, 6, seed)};
  std::vector<Example> exs;
  std::uint64_t h = seed;
  for (std::size_t e = 0; e < n; ++e) {
    Example ex;
    ex.id = fmt::format("e{}", e);
    h = testing::splitmix(h);
    for (std::size_t k = 0; k < 1 + h % 3; ++k) ex.tags.push_back(tags[(h >> (4 * k + 8)) % tags.size()]);
    ex.tags = dedup_tags(ex.tags);
    const std::size_t len = 1 + (h >> 40) % 6;
    for (std::size_t k = 0; k < len; ++k) {
      h = testing::splitmix(h);
      ex.caption += (k ? " " : "") + (h % 5 == 0 ? std::string("oov") : words[h % words.size()]);
    }
    exs.push_back(ex);
  }
  rc.corpus = Corpus(exs);
  return rc;
}

TEST(BuildStats, SamplesBoundMedianAndDuplicationInvariance) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto rc = random_corpus(seed, 25);
    const auto store = build_stats(rc.corpus, rc.table);
    for (const auto& [tag, s] : store.per_tag()) {
      ASSERT_FALSE(s.samples.empty());
      EXPECT_TRUE(std::is_sorted(s.samples.begin(), s.samples.end()));
      EXPECT_LE(s.samples.front(), s.mmcs);
      EXPECT_GE(s.samples.back(), s.mmcs);
      EXPECT_EQ(s.support, s.samples.size());
    }
    // Every caption appearing twice doubles each multiset, leaving medians fixed.
    std::vector<Example> doubled;
    for (const auto& ex : rc.corpus.examples()) {
      doubled.push_back(ex);
      doubled.push_back(ex);
      doubled.back().id += "-copy";
    }
    const auto store2 = build_stats(Corpus(doubled), rc.table);
    for (const auto& [tag, s] : store.per_tag()) EXPECT_EQ(store2.find(tag)->mmcs, s.mmcs) << tag;
  }
}

TEST(StatsJson, RoundTripIsExact) {
  auto rc = random_corpus(11, 40);
  const auto store = build_stats(rc.corpus, rc.table);
  const auto back = stats_from_json(nlohmann::json::parse(to_json(store).dump()));
  EXPECT_EQ(back, store);
}

TEST(StatsJson, RejectsBrokenInvariants) {
  StatsStore s(3);
  s.insert(make_tag_stats("a", {0.1, 0.2, 0.9}));
  auto j = to_json(s);
  auto bad_median = j;
  bad_median["tags"][0]["mmcs"] = 0.5;
  EXPECT_THROW(stats_from_json(bad_median), Error);
  auto bad_support = j;
  bad_support["tags"][0]["support"] = 7;
  EXPECT_THROW(stats_from_json(bad_support), Error);
  auto missing = j;
  missing.erase("embedding_dim");
  EXPECT_THROW(stats_from_json(missing), Error);
}

}  // namespace
}  // namespace dmmcs
