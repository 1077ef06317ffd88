#include <gtest/gtest.h>

#include <cmath>

#include "lane/error.hpp"
#include "lane/text_encoder.hpp"
#include "oracles.hpp"

namespace {

using namespace lane;

TEST(TextEncoder, DefaultConfigIs384Wide) {
  EncoderConfig config;
  EXPECT_EQ(make_text_encoder(config)->dim(), 384u);
}

TEST(TextEncoder, MockIsDeterministicAndUnitNorm) {
  MockTextEncoder enc(16, 3);
  const auto a = enc.encode_one("Quiet Harbor"), b = enc.encode_one("Quiet Harbor");
  EXPECT_EQ(a, b);
  double n = 0.0;
  for (double x : a) n += x * x;
  EXPECT_NEAR(n, 1.0, 1e-12);
  EXPECT_NE(enc.encode_one("Quiet Harbor"), MockTextEncoder(16, 4).encode_one("Quiet Harbor"));
}

// Frozen from tests/fixtures/mock_encoder_cosines.py 384 0 <titles>.
TEST(TextEncoder, MockCosinesMatchIndependentScript) {
  const std::vector<std::string> titles = {"Quiet Harbor", "Red Canyon Run", "Paper Lanterns", "Night Signal",
                                           "Glass Orchard"};
  const double expected[5][5] = {
      {1.000000000, 0.017698154, -0.049985691, -0.033772089, 0.053663835},
      {0.017698154, 1.000000000, -0.014665003, -0.017231084, -0.031295123},
      {-0.049985691, -0.014665003, 1.000000000, -0.044931627, -0.048459951},
      {-0.033772089, -0.017231084, -0.044931627, 1.000000000, 0.026706180},
      {0.053663835, -0.031295123, -0.048459951, 0.026706180, 1.000000000}};
  ItemCatalog cat;
  for (std::size_t i = 0; i < titles.size(); ++i) cat.add("i" + std::to_string(i), titles[i]);
  MockTextEncoder enc(384, 0);
  const Matrix M = encode_titles(cat, enc, nullptr);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(dot(M.row(i + 1), M.row(j + 1)), expected[i][j], 1e-6);
  }
}

TEST(TextEncoder, TitleMatrixHasZeroPadRow) {
  ItemCatalog cat;
  cat.add("a", "Alpha");
  cat.add("b", "Beta");
  MockTextEncoder enc(8, 0);
  const Matrix M = encode_titles(cat, enc, nullptr);
  ASSERT_EQ(M.rows(), 3u);
  for (double x : M.row(0)) EXPECT_EQ(x, 0.0);
  EXPECT_TRUE(M.all_finite());
}

TEST(TextEncoder, EncodeTextsFollowsInputOrder) {
  MockTextEncoder enc(8, 0);
  const std::vector<std::string> a = {"one", "two", "three"}, b = {"three", "one", "two"};
  const Matrix A = encode_texts(a, enc, nullptr), B = encode_texts(b, enc, nullptr);
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_EQ(A(0, c), B(1, c));
    EXPECT_EQ(A(2, c), B(0, c));
  }
  EXPECT_EQ(encode_texts(std::vector<std::string>{"solo"}, enc, nullptr).rows(), 1u);
}

TEST(TextEncoder, BlankTextIsRejected) {
  MockTextEncoder enc(8, 0);
  const std::vector<std::string> texts = {"ok", "   "};
  EXPECT_THROW(encode_texts(texts, enc, nullptr), UserError);
}

// Counts calls so cache hits are observable.
class CountingEncoder final : public TextEncoder {
 public:
  std::string name() const override { return "counting"; }
  std::size_t dim() const override { return 4; }
  bool deterministic() const override { return true; }
  Matrix encode(std::span<const std::string> texts) override {
    calls += texts.size();
    return inner.encode(texts);
  }
  MockTextEncoder inner{4, 1};
  std::size_t calls = 0;
};

TEST(TextEncoder, CacheRoundTripsThroughDisk) {
  oracle::TempDir dir("cache");
  const std::vector<std::string> texts = {"alpha", "beta", "gamma"};
  CountingEncoder enc;
  Matrix first;
  {
    EmbeddingCache cache(dir.path());
    first = encode_texts(texts, enc, &cache);
    cache.flush();
  }
  EXPECT_EQ(enc.calls, 3u);
  EmbeddingCache reopened(dir.path());
  EXPECT_EQ(reopened.size(), 3u);
  const Matrix second = encode_texts(texts, enc, &reopened);
  EXPECT_EQ(enc.calls, 3u);
  EXPECT_EQ(first, second);
  auto hit = reopened.lookup("counting", "beta");
  ASSERT_TRUE(hit);
  EXPECT_EQ(*hit, std::vector<double>(first.row(1).begin(), first.row(1).end()));
  EXPECT_FALSE(reopened.lookup("other", "beta"));
}

}  // namespace
