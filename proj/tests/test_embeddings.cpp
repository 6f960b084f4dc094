#include <sstream>

#include <gtest/gtest.h>

#include "dmmcs/embeddings.hpp"
#include "dmmcs/error.hpp"
#include "test_support.hpp"

namespace dmmcs {
namespace {

EmbeddingTable parse(const std::string& text) {
  std::istringstream in(text);
  return read_embeddings(in, "vec.txt");
}

std::size_t error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

TEST(Embeddings, LoadsHeaderAndRows) {
  const auto t = parse("3 2\na 1 0\nb 0 1\nc 0.5 -0.25\n");
  EXPECT_EQ(t.dim(), 2u);
  EXPECT_EQ(t.size(), 3u);
  ASSERT_TRUE(t.find("c"));
  EXPECT_DOUBLE_EQ((*t.find("c"))[1], -0.25);
  EXPECT_FALSE(t.contains("d"));
}

TEST(Embeddings, WrongComponentCountNamesLine) {
  EXPECT_EQ(error_line("3 2\na 1 0\nb 0 1 2\nc 0 0\n"), 3u);
  EXPECT_EQ(error_line("2 2\na 1\nb 0 1\n"), 2u);
}

TEST(Embeddings, RejectsMalformedInput) {
  EXPECT_EQ(error_line(""), 1u);
  EXPECT_EQ(error_line("x 2\n"), 1u);
  EXPECT_EQ(error_line("1 2\na 1 zz\n"), 2u);
  EXPECT_EQ(error_line("1 2\na 1 nan\n"), 2u);
  EXPECT_NE(error_line("3 2\na 1 0\n"), 0u);
}

TEST(Embeddings, DuplicateWordKeepsFirst) {
  const auto t = parse("2 2\na 1 0\na 0 1\n");
  EXPECT_EQ(t.size(), 1u);
  EXPECT_DOUBLE_EQ((*t.find("a"))[0], 1.0);
}

TEST(Embeddings, WriteReadRoundTripIsExact) {
  const auto t = testing::random_table({"x", "y-z", "w"}, 7, 3);
  std::ostringstream out;
  write_embeddings(out, t);
  const auto back = parse(out.str());
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto a = t.row(i), b = *back.find(t.words()[i]);
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k], b[k]);
  }
}

TEST(Cosine, Endpoints) {
  const std::vector<double> x{1, 0}, y{0, 1}, nx{-1, 0}, z{0, 0};
  EXPECT_DOUBLE_EQ(cosine(x, x), 1.0);
  EXPECT_DOUBLE_EQ(cosine(x, y), 0.0);
  EXPECT_DOUBLE_EQ(cosine(x, nx), -1.0);
  EXPECT_EQ(cosine(x, z), 0.0);
  EXPECT_THROW(cosine(x, std::vector<double>{1, 0, 0}), Error);
}

TEST(Cosine, SymmetricBoundedAndScaleInvariant) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto t = testing::random_table({"a", "b"}, 1 + seed % 9, seed);
    const auto a = *t.find("a"), b = *t.find("b");
    const double c = cosine(a, b);
    EXPECT_EQ(c, cosine(b, a));
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
    std::vector<double> scaled(a.begin(), a.end());
    for (double& v : scaled) v *= 3.5;
    EXPECT_NEAR(cosine(scaled, b), c, 1e-12);
  }
}

TEST(EmbedTag, SingleToken) {
  EmbeddingTable t(2);
  t.add("ct", std::vector<double>{0.2, 0.4});
  const auto e = embed_tag("CT", t);
  EXPECT_EQ(e.vector, (std::vector<double>{0.2, 0.4}));
  EXPECT_EQ(e.covered_tokens, 1u);
}

TEST(EmbedTag, CentroidOfCoveredTokens) {
  EmbeddingTable t(2);
  t.add("head", std::vector<double>{1, 2});
  t.add("of", std::vector<double>{3, 0});
  t.add("pancreas", std::vector<double>{2, 4});
  const auto e = embed_tag("head of pancreas", t);
  EXPECT_DOUBLE_EQ(e.vector[0], 2.0);
  EXPECT_DOUBLE_EQ(e.vector[1], 2.0);
  const auto partial = embed_tag("head of unknownword", t);
  EXPECT_EQ(partial.covered_tokens, 2u);
  EXPECT_DOUBLE_EQ(partial.vector[0], 2.0);
  EXPECT_DOUBLE_EQ(partial.vector[1], 1.0);
}

TEST(EmbedTag, UncoverableCarriesTag) {
  EmbeddingTable t(2);
  t.add("ct", std::vector<double>{1, 0});
  try {
    embed_tag("Left Lobe", t);
    FAIL() << "expected UncoverableTagError";
  } catch (const UncoverableTagError& e) {
    EXPECT_EQ(e.tag(), "Left Lobe");
  }
}

}  // namespace
}  // namespace dmmcs
