#include "emosynth/synthworld.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

using namespace emosynth;

namespace {

WorldConfig spec_world() { return WorldConfig{.dim = 8, .vocab = 10, .speakers = 10, .emotions = 4, .tau = 0.3}; }

}  // namespace

TEST(MakeWorld, DeterministicForSeed) {
  const World a = make_world(spec_world(), 7);
  const World b = make_world(spec_world(), 7);
  EXPECT_TRUE(bitwise_equal(a.speaker_base, b.speaker_base));
  EXPECT_TRUE(bitwise_equal(a.emotion_offset, b.emotion_offset));
  EXPECT_TRUE(bitwise_equal(a.token_effect, b.token_effect));
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), make_world(spec_world(), 8).hash());
}

TEST(MakeWorld, NeutralOffsetIsZero) {
  const World w = make_world(spec_world(), 7);
  EXPECT_TRUE(w.emotion_offset.row(kNeutral).isZero(0.0));
}

TEST(MakeWorld, TablesSeparatedByFourTau) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const World w = make_world(spec_world(), seed);
    EXPECT_GE(min_pairwise_distance(w.speaker_base), 1.2);
    EXPECT_GE(min_pairwise_distance(w.emotion_offset), 1.2);
  }
}

TEST(MakeWorld, UnachievableSeparationThrows) {
  WorldConfig c = spec_world();
  c.dim = 2;
  c.speakers = 40;
  c.tau = 3.0;
  EXPECT_THROW(make_world(c, 0), std::runtime_error);
}

TEST(MakeWorld, InvalidConfigThrows) {
  WorldConfig c = spec_world();
  c.tau = 0.0;
  EXPECT_THROW(make_world(c, 0), std::invalid_argument);
}

TEST(SampleUtterance, NoiselessLimitEqualsMean) {
  WorldConfig c = spec_world();
  c.tau = 1e-9;
  const World w = make_world(c, 1);
  const std::vector<Index> tokens{3, 1, 4, 1, 5};
  const Utterance u = sample_utterance(w, 2, 3, tokens, 11);
  for (Index l = 0; l < 5; ++l) {
    const RowVector<double> m =
        w.speaker_base.row(2) + w.emotion_offset.row(3) + w.token_effect.row(tokens[static_cast<std::size_t>(l)]);
    EXPECT_LT((u.frames.row(l) - m).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(SampleUtterance, DeterministicAndChecked) {
  const World w = make_world(spec_world(), 1);
  const std::vector<Index> tokens{0, 9, 2};
  EXPECT_TRUE(bitwise_equal(sample_utterance(w, 1, 1, tokens, 5).frames, sample_utterance(w, 1, 1, tokens, 5).frames));
  EXPECT_THROW(sample_utterance(w, 10, 0, tokens, 5), std::out_of_range);
  EXPECT_THROW(sample_utterance(w, 0, 4, tokens, 5), std::out_of_range);
  EXPECT_THROW(sample_utterance(w, 0, 0, {10}, 5), std::out_of_range);
  EXPECT_THROW(sample_utterance(w, 0, 0, {}, 5), std::invalid_argument);
}

TEST(SampleUtterance, FrameNoiseHasVarianceTauSquared) {
  const World w = make_world(spec_world(), 2);
  const std::vector<Index> tokens{1, 2, 3, 4};
  const FrameMatrix mean = w.frame_means(0, 1, tokens);
  double sum_sq = 0.0;
  Index count = 0;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    sum_sq += (sample_utterance(w, 0, 1, tokens, s).frames - mean).squaredNorm();
    count += mean.size();
  }
  EXPECT_NEAR(sum_sq / static_cast<double>(count), 0.09, 0.09 * 0.03);
}

TEST(SplitSpeakers, CardinalityDisjointDeterministic) {
  const World w = make_world(spec_world(), 3);
  const SpeakerSplit s = split_speakers(w, 6, 4);
  EXPECT_EQ(s.seen.size(), 6u);
  EXPECT_EQ(s.unseen.size(), 4u);
  std::set<Index> all(s.seen.begin(), s.seen.end());
  all.insert(s.unseen.begin(), s.unseen.end());
  EXPECT_EQ(all.size(), 10u);
  const SpeakerSplit again = split_speakers(w, 6, 4);
  EXPECT_EQ(s.seen, again.seen);
  EXPECT_EQ(s.unseen, again.unseen);
  EXPECT_THROW(split_speakers(w, 10, 4), std::invalid_argument);
  EXPECT_THROW(split_speakers(w, 0, 4), std::invalid_argument);
}

TEST(WorldFile, RoundTrip) {
  const World w = make_world(spec_world(), 5);
  std::stringstream ss;
  write_world(ss, w);
  const World r = read_world(ss);
  EXPECT_EQ(r.hash(), w.hash());
  EXPECT_TRUE(bitwise_equal(r.token_effect, w.token_effect));
  std::stringstream bad("garbage");
  EXPECT_THROW(read_world(bad), std::runtime_error);
}

class OracleTest : public ::testing::Test {
 protected:
  World world = make_world(spec_world(), 9);
  NoiseSchedule schedule;
  std::vector<Index> tokens{2, 7, 7};
};

TEST_F(OracleTest, SingleComponentScoreVanishesAtMarginalMean) {
  const FrameMatrix mu = world.frame_means(1, kNeutral, tokens);
  const FrameMatrix m = world.frame_means(1, 2, tokens);
  for (double t : {0.05, 0.4, 0.9}) {
    const FrameMatrix marginal_mean = mu + (m - mu) * schedule.rho(t);
    const OracleQuery q{ComponentPrior{{1}, 2}, tokens, mu, t};
    EXPECT_LT(analytic_score(world, q, marginal_mean, schedule).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST_F(OracleTest, SingleComponentScoreMatchesGaussianFormula) {
  const FrameMatrix mu = world.frame_means(0, kNeutral, tokens);
  const FrameMatrix m = world.frame_means(0, 3, tokens);
  Rng rng(3);
  const double t = 0.3;
  const double rho = std::exp(-0.5 * (0.05 * t + 0.5 * (20.0 - 0.05) * t * t));
  const double var = 0.09 * rho * rho + (1.0 - rho * rho);
  const FrameMatrix y = mu + standard_normal(3, 8, rng);
  const FrameMatrix expected = -(y - (mu + (m - mu) * rho)) / var;
  const OracleQuery q{ComponentPrior{{0}, 3}, tokens, mu, t};
  EXPECT_LT((analytic_score(world, q, y, schedule) - expected).cwiseAbs().maxCoeff(), 1e-10);
}

TEST_F(OracleTest, SymmetricMixtureScoreVanishesAtMidpoint) {
  const FrameMatrix mu = world.frame_means(0, kNeutral, tokens);
  const double t = 0.2;
  const FrameMatrix a = mu + (world.frame_means(0, kNeutral, tokens) - mu) * schedule.rho(t);
  const FrameMatrix b = mu + (world.frame_means(3, kNeutral, tokens) - mu) * schedule.rho(t);
  const OracleQuery q{ComponentPrior{{0, 3}, kNeutral}, tokens, mu, t};
  EXPECT_LT(analytic_score(world, q, 0.5 * (a + b), schedule).cwiseAbs().maxCoeff(), 1e-10);
}

TEST_F(OracleTest, PosteriorSymmetricAndPeaked) {
  WorldConfig c = spec_world();
  c.emotions = 2;
  const World w2 = make_world(c, 4);
  const FrameMatrix mu = w2.frame_means(0, kNeutral, tokens);
  const double t = 0.01;
  const FrameMatrix m0 = mu + (w2.frame_means(0, 0, tokens) - mu) * schedule.rho(t);
  const FrameMatrix m1 = mu + (w2.frame_means(0, 1, tokens) - mu) * schedule.rho(t);
  const Eigen::VectorXd mid = analytic_emotion_posterior(w2, 0, tokens, mu, 0.5 * (m0 + m1), t, schedule);
  EXPECT_NEAR(mid(0), 0.5, 1e-12);
  EXPECT_NEAR(mid(1), 0.5, 1e-12);
  const Eigen::VectorXd at1 = analytic_emotion_posterior(w2, 0, tokens, mu, m1, t, schedule);
  EXPECT_GT(at1(1), 0.95);
  EXPECT_NEAR(at1.sum(), 1.0, 1e-12);
}

TEST_F(OracleTest, ShapeMismatchThrows) {
  const FrameMatrix mu = world.frame_means(0, kNeutral, tokens);
  const OracleQuery q{ComponentPrior{{0}, std::nullopt}, tokens, mu, 0.5};
  EXPECT_THROW(analytic_score(world, q, FrameMatrix::Zero(2, 8), schedule), std::invalid_argument);
  const OracleQuery empty{ComponentPrior{{}, std::nullopt}, tokens, mu, 0.5};
  EXPECT_THROW(analytic_score(world, empty, mu, schedule), std::invalid_argument);
}
