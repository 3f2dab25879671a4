#include "memlab/config.hpp"
#include "memlab/types.hpp"

#include <gtest/gtest.h>

using namespace memlab;

TEST(Config, ParsesKeyValueLinesAndComments) {
  const auto cfg = Config::parse("# header\ntrain.batch_size = 64\n\n  dataset.source=gaussian-mixture\n");
  EXPECT_EQ(cfg.get_int("train.batch_size", 0), 64);
  EXPECT_EQ(cfg.get_string("dataset.source", ""), "gaussian-mixture");
  EXPECT_EQ(cfg.get_int("missing", 7), 7);
}

TEST(Config, TypedGettersRejectGarbage) {
  const auto cfg = Config::parse("a = 1.5x\nb = yes\nc = 8, 64,512\n");
  EXPECT_THROW(cfg.get_double("a", 0.0), DataError);
  EXPECT_TRUE(cfg.get_bool("b", false));
  EXPECT_EQ(cfg.get_int_list("c"), (std::vector<std::int64_t>{8, 64, 512}));
}

TEST(Config, MissingRequiredKeyIsDataError) {
  EXPECT_THROW(Config{}.require_string("x"), DataError);
  EXPECT_THROW(Config::parse("no equals sign\n"), DataError);
}

TEST(Config, HashIgnoresOrderAndWhitespace) {
  const auto a = Config::parse("x = 1\ny = 2\n");
  const auto b = Config::parse("y=2\n   x =   1\n");
  EXPECT_EQ(a.hash_hex(), b.hash_hex());
  EXPECT_EQ(a.hash_hex().size(), 16u);
  EXPECT_NE(a.hash_hex(), Config::parse("x = 1\ny = 3\n").hash_hex());
}

TEST(Config, FnvMatchesReferenceVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Config, SectionStripsPrefix) {
  const auto cfg = Config::parse("net.width = 32\nnet.depth = 2\ntrain.epochs = 5\n");
  const auto net = cfg.section("net");
  EXPECT_EQ(net.entries().size(), 2u);
  EXPECT_EQ(net.get_int("width", 0), 32);
}
