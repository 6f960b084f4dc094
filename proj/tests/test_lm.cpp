#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "dmmcs/lm.hpp"
#include "test_support.hpp"

namespace dmmcs {
namespace {

Corpus one_caption(const std::string& caption) {
  return Corpus({{"e", {}, caption, std::nullopt, Split::train}});
}

TEST(Vocab, ReservedIdsAndLookup) {
  Vocab v({"a", "b"});
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.outcome_count(), 3u);
  EXPECT_EQ(*v.id("a"), 2);
  EXPECT_EQ(v.token(Vocab::eos), "</s>");
  EXPECT_FALSE(v.id("c"));
  EXPECT_THROW(Vocab({"a", "a"}), Error);
  EXPECT_THROW(Vocab({"</s>"}), Error);
}

TEST(NGram, BigramHandCount) {
  const auto m = train_ngram(one_caption("a b"), 2, 1.0);
  const auto a = *m.vocab().id("a"), b = *m.vocab().id("b");
  const std::vector<TokenId> prefix{a};
  EXPECT_NEAR(std::exp(m.next_logprobs(prefix)[static_cast<std::size_t>(b)]), 0.5, 1e-15);
  EXPECT_EQ(m.next_logprobs(prefix)[0], -std::numeric_limits<double>::infinity());
}

TEST(NGram, UnseenContextIsUniform) {
  const auto m = train_ngram(one_caption("a b c"), 3, 0.5);
  const auto c = *m.vocab().id("c");
  const std::vector<TokenId> prefix{c, c};
  const auto lp = m.next_logprobs(prefix);
  for (std::size_t id = 1; id < lp.size(); ++id) EXPECT_NEAR(std::exp(lp[id]), 1.0 / 4.0, 1e-15);
}

TEST(NGram, UnigramIgnoresContext) {
  const auto m = train_ngram(one_caption("a a b"), 1, 1.0);
  const auto a = *m.vocab().id("a");
  const std::vector<TokenId> empty, some{a, a};
  EXPECT_EQ(m.next_logprobs(empty), m.next_logprobs(some));
  // counts a:2 b:1 EOS:1, total 4, k|V|=3
  EXPECT_NEAR(std::exp(m.next_logprobs(empty)[static_cast<std::size_t>(a)]), 3.0 / 7.0, 1e-15);
}

TEST(NGram, EmptyTrainSplitFails) {
  EXPECT_THROW(train_ngram(Corpus({{"e", {}, "a", std::nullopt, Split::test}}), 2, 1.0), Error);
}

TEST(NGram, DistributionsNormalizeOverManyPrefixes) {
  std::vector<Example> exs;
  for (int i = 0; i < 30; ++i) {
    std::string cap;
    for (int k = 0; k < 2 + i % 5; ++k) cap += fmt::format("w{} ", testing::splitmix(i * 10 + k) % 9);
    exs.push_back({fmt::format("e{}", i), {}, cap, std::nullopt, Split::train});
  }
  const auto m = train_ngram(Corpus(exs), 3, 0.1);
  for (std::uint64_t p = 0; p < 1000; ++p) {
    std::vector<TokenId> prefix;
    for (std::size_t k = 0; k < p % 5; ++k) {
      prefix.push_back(static_cast<TokenId>(2 + testing::splitmix(p * 7 + k) % (m.vocab().size() - 2)));
    }
    EXPECT_NO_THROW(validate_logprobs(m.next_logprobs(prefix), m.vocab()));
  }
}

TEST(DScore, HandValuesAndNaiveProduct) {
  testing::TableModel certain({"a"}, {{0, 0, 1}, {0, 1, 0}});
  const std::vector<TokenId> seq{2, 1};
  EXPECT_EQ(d_score(certain, seq), 0.0);
  testing::TableModel halves({"a"}, {{0, 0.5, 0.5}});
  const std::vector<TokenId> two{2, 2};
  EXPECT_NEAR(d_score(halves, two), 2.0 * std::log(2.0), 1e-15);

  testing::RandomModel r(4, 9);
  for (std::uint64_t s = 0; s < 50; ++s) {
    std::vector<TokenId> ids;
    for (std::size_t k = 0; k < 1 + s % 6; ++k) ids.push_back(static_cast<TokenId>(1 + testing::splitmix(s + 31 * k) % 5));
    double product = 1.0;
    for (std::size_t t = 0; t < ids.size(); ++t) {
      product *= std::exp(r.next_logprobs(std::span<const TokenId>(ids).first(t))[static_cast<std::size_t>(ids[t])]);
    }
    EXPECT_NEAR(d_score(r, ids), -std::log(product), 1e-9);
    // additivity over a split point
    const std::size_t cut = ids.size() / 2;
    double tail = 0.0;
    for (std::size_t t = cut; t < ids.size(); ++t) {
      tail -= r.next_logprobs(std::span<const TokenId>(ids).first(t))[static_cast<std::size_t>(ids[t])];
    }
    EXPECT_NEAR(d_score(r, std::span<const TokenId>(ids).first(cut)) + tail, d_score(r, ids), 1e-12);
  }
}

TEST(Perplexity, UniformModelEqualsOutcomeCount) {
  testing::TableModel uniform({"a", "b", "c"}, {{0, 0.25, 0.25, 0.25, 0.25}});
  const std::vector<std::vector<TokenId>> seqs{{2, 3}, {4}, {}};
  EXPECT_NEAR(perplexity(uniform, seqs), 4.0, 1e-12);
  testing::TableModel certain({"a"}, {{0, 0, 1}, {0, 1, 0}});
  EXPECT_NEAR(perplexity(certain, {{2}}), 1.0, 1e-15);
  const auto m = train_ngram(one_caption("a b c"), 2, 1.0);
  EXPECT_GE(perplexity(m, one_caption("a b c"), Split::train), 1.0);
}

TEST(NGramJson, RoundTripAndValidation) {
  const auto m = train_ngram(one_caption("the cat sat on the mat"), 3, 0.5);
  const auto back = ngram_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_TRUE(back == m);
  auto j = to_json(m);
  j["order"] = 0;
  EXPECT_THROW(ngram_from_json(j), Error);
}

TEST(ValidateLogprobs, RejectsContractViolations) {
  Vocab v({"a"});
  const double ninf = -std::numeric_limits<double>::infinity();
  EXPECT_NO_THROW(validate_logprobs(std::vector<double>{ninf, std::log(0.5), std::log(0.5)}, v));
  EXPECT_THROW(validate_logprobs(std::vector<double>{ninf, std::log(0.5)}, v), ContractViolation);
  EXPECT_THROW(validate_logprobs(std::vector<double>{ninf, std::log(0.5), std::log(0.6)}, v), ContractViolation);
  EXPECT_THROW(validate_logprobs(std::vector<double>{std::log(0.5), std::log(0.5), ninf}, v), ContractViolation);
  EXPECT_THROW(validate_logprobs(std::vector<double>{ninf, std::nan(""), 0.0}, v), ContractViolation);
}

}  // namespace
}  // namespace dmmcs
