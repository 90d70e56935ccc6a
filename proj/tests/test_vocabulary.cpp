#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace relmetric;

TEST(Vocabulary, ReservedEntriesAndDenseIndices) {
  Vocabulary v({"the", "Paris", "the"});
  EXPECT_NE(Vocabulary::pad, Vocabulary::unk);
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.lookup("the"), 2u);
  EXPECT_EQ(v.lookup("Paris"), 3u);
  EXPECT_EQ(v.token(3), "Paris");
}

TEST(Vocabulary, LookupFallsBackToLowercaseThenUnk) {
  Vocabulary v({"paris", "Rome"});
  EXPECT_EQ(v.lookup("PARIS"), v.lookup("paris"));
  EXPECT_EQ(v.lookup("rome"), Vocabulary::unk);  // no upward fallback
  EXPECT_EQ(v.lookup("Oslo"), Vocabulary::unk);
}

TEST(Vocabulary, SerializedFormRoundTrips) {
  Vocabulary v({"a", "b"});
  EXPECT_EQ(Vocabulary::from_tokens(v.tokens()), v);
  EXPECT_THROW(Vocabulary::from_tokens({"a", "b"}), CheckpointError);
  EXPECT_THROW(Vocabulary::from_tokens({"<pad>", "<unk>", "a", "a"}), CheckpointError);
}

TEST(LoadEmbeddings, CopiesFileRowsVerbatim) {
  Vocabulary v({"cat", "Dog", "zebra"});
  std::istringstream in("3 2\ncat 0.5 -1.25\ndog 2 3\nemu 9 9\n");
  std::mt19937_64 rng(1);
  const auto m = load_embeddings(in, v, 2, rng);
  EXPECT_EQ(m.table.value.shape(), (Shape{5, 2}));
  EXPECT_EQ(m.table.value.at(2, 0), 0.5);
  EXPECT_EQ(m.table.value.at(2, 1), -1.25);
  EXPECT_EQ(m.table.value.at(3, 0), 2);  // "Dog" via lowercase key
  EXPECT_EQ(m.pretrained_rows, 2u);
  EXPECT_TRUE(m.table.trainable);
}

TEST(LoadEmbeddings, ExactMatchBeatsLowercase) {
  Vocabulary v({"Dog"});
  std::istringstream in("dog 1\nDog 2\ndog 3\n");
  std::mt19937_64 rng(1);
  EXPECT_EQ(load_embeddings(in, v, 1, rng).table.value.at(2, 0), 2);
}

// Absent rows come from N(0, 0.1).
TEST(LoadEmbeddings, MissingRowsAreNormalDraws) {
  std::vector<std::string> words;
  for (int i = 0; i < 2000; ++i) words.push_back("w" + std::to_string(i));
  Vocabulary v(words);
  std::istringstream in("");
  std::mt19937_64 rng(2);
  const auto m = load_embeddings(in, v, 5, rng);
  double sum = 0, sq = 0;
  for (Real x : m.table.value.values()) sum += x, sq += x * x;
  const double n = static_cast<double>(m.table.value.size());
  const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(mean, 0, 0.005);
  EXPECT_NEAR(sd, 0.1, 0.005);
  EXPECT_EQ(m.pretrained_rows, 0u);
}

TEST(LoadEmbeddings, WrongArityNamesLine) {
  Vocabulary v({"a"});
  std::istringstream in("a 1 2\nb 1\n");
  std::mt19937_64 rng(1);
  try {
    load_embeddings(in, v, 2, rng, 0.1, "vec.txt");
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("vec.txt:2"), std::string::npos);
  }
  std::istringstream junk("a 1 x\n");
  EXPECT_THROW(load_embeddings(junk, v, 2, rng), IngestionError);
  EXPECT_THROW(load_embeddings("/nonexistent/vec.txt", v, 2, rng), IngestionError);
}
