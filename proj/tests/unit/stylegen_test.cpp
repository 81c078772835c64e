#include "emosynth/stylegen.hpp"
#include "emosynth/synthworld.hpp"

#include <gtest/gtest.h>

using namespace emosynth;

namespace {

ModelDims dims() { return ModelDims{}; }

}  // namespace

TEST(StyleEncoder, RowOrderDoesNotMatter) {
  const StyleEncoder enc(dims(), 3);
  Rng rng(1);
  const FrameMatrix ref = standard_normal(6, 8, rng);
  FrameMatrix shuffled(6, 8);
  const Index order[] = {4, 1, 5, 0, 3, 2};
  for (Index i = 0; i < 6; ++i) shuffled.row(i) = ref.row(order[i]);
  EXPECT_TRUE(bitwise_equal(enc.encode(ref), enc.encode(shuffled)));
}

TEST(StyleEncoder, PoolsPerFrameOutputs) {
  const StyleEncoder enc(dims(), 3);
  Rng rng(2);
  const FrameMatrix ref = standard_normal(2, 8, rng);
  const StyleVector a = enc.encode(ref.topRows(1));
  const StyleVector b = enc.encode(ref.bottomRows(1));
  EXPECT_LT((enc.encode(ref) - 0.5 * (a + b)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(StyleEncoder, GraphMatchesDirectEvaluation) {
  StyleEncoder enc(dims(), 3);
  Rng rng(3);
  const FrameMatrix ref = standard_normal(1, 8, rng);
  ad::Graph g;
  const ad::Node s = enc.build(g, g.input("ref", 8), Segments::single(1));
  g.forward({{"ref", ref}});
  EXPECT_TRUE(bitwise_equal(g.value(s), enc.encode(ref)));
}

TEST(StyleEncoder, UntrainedEncoderSeparatesSpeakers) {
  const World w = make_world(WorldConfig{}, 0);
  const StyleEncoder enc(dims(), 5);
  const std::vector<Index> tokens{1, 2, 3, 4};
  const StyleVector a = enc.encode(sample_utterance(w, 0, kNeutral, tokens, 1).frames);
  const StyleVector b = enc.encode(sample_utterance(w, 1, kNeutral, tokens, 1).frames);
  EXPECT_FALSE(bitwise_equal(a, b));
}

TEST(StyleEncoder, EmptyReferenceThrows) {
  const StyleEncoder enc(dims(), 3);
  EXPECT_THROW(enc.encode(FrameMatrix(0, 8)), std::invalid_argument);
}

TEST(EmotionTable, NullRowAndDeterminism) {
  const EmotionTable table(dims(), 4);
  EXPECT_TRUE(bitwise_equal(table.embed(2), table.embed(2)));
  const RowVector<double> null_row = table.embed(kNullEmotion);
  for (Index e = 0; e < 4; ++e) EXPECT_FALSE(bitwise_equal(null_row, table.embed(e)));
  EXPECT_THROW(table.embed(4), std::out_of_range);
  EXPECT_THROW(table.embed(-2), std::out_of_range);
}

TEST(Generator, RowsDependOnlyOnToken) {
  const Generator gen(dims(), 6);
  const StyleEncoder enc(dims(), 6);
  const EmotionTable table(dims(), 6);
  Rng rng(4);
  const StyleVector s = enc.encode(standard_normal(3, 8, rng));
  const std::vector<Index> tokens{3, 3, 3};
  const FrameMatrix mu = gen.generate(tokens, s, table.embed(1));
  ASSERT_EQ(mu.rows(), 3);
  EXPECT_TRUE(bitwise_equal(mu.row(0), mu.row(1)));
  EXPECT_TRUE(bitwise_equal(mu.row(0), mu.row(2)));
  EXPECT_TRUE(bitwise_equal(mu, gen.generate(tokens, s, table.embed(1))));
}

TEST(Generator, InvalidTokensThrow) {
  const Generator gen(dims(), 6);
  const StyleVector s = StyleVector::Zero(16);
  const RowVector<double> e = RowVector<double>::Zero(8);
  EXPECT_THROW(gen.generate(std::vector<Index>{}, s, e), std::invalid_argument);
  EXPECT_THROW(gen.generate(std::vector<Index>{10}, s, e), std::out_of_range);
}

TEST(Generator, GraphMatchesDirectEvaluation) {
  Generator gen(dims(), 7);
  EmotionTable table(dims(), 7);
  Rng rng(5);
  const Tensor s = standard_normal(1, 16, rng);
  const std::vector<Index> tokens{0, 5, 9};
  ad::Graph g;
  const Index labels[] = {2};
  const ad::Node mu = gen.build(g, tokens, g.constant(s), table.build(g, labels), Segments::single(3));
  g.forward();
  EXPECT_TRUE(bitwise_equal(g.value(mu), gen.generate(tokens, s, table.embed(2))));
}
